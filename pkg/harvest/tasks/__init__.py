#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
流水线任务模块初始化
每个任务对应一个命令行动作，负责串联服务层、写出产物并返回结果对象
"""

import copy
from typing import Any, Dict, Optional

# 可由运行配置覆盖的配置节
SETTING_SECTIONS = ('search', 'solver', 'validation', 'verify', 'simulation')


def deep_merge(base: Dict[str, Any], override: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """递归合并字典，override 优先"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_settings(defaults: Dict[str, Any], run_config: Dict[str, Any]) -> Dict[str, Any]:
    """合并项目缺省配置与单次运行配置

    Args:
        defaults: config/config.yaml 的内容
        run_config: 模型配置文件的内容

    Returns:
        只含 model、run 与各配置节的完整运行配置
    """
    resolved = {'model': copy.deepcopy(run_config.get('model')),
                'run': copy.deepcopy(run_config.get('run') or {})}
    for section in SETTING_SECTIONS:
        resolved[section] = deep_merge(defaults.get(section) or {}, run_config.get(section))
    return resolved

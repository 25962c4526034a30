#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
结果报告服务模块
负责 JSON/CSV 产物写出、运行清单（manifest）的生成与读取、终端汇总表格
"""

import json
import math
import os
from dataclasses import is_dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from harvest import ConfigError, __version__, create_directories
from harvest.models import HjbReport, RunManifest

MANIFEST_NAME = 'manifest.json'
DEFAULT_OUTPUT_DIR = 'output'


def to_jsonable(obj: Any) -> Any:
    """转换为可 JSON 序列化的结构，非有限浮点数写为字符串"""
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return obj


def dumps(obj: Any) -> str:
    """固定格式的 JSON 文本，保证字节级可复现"""
    return json.dumps(to_jsonable(obj), ensure_ascii=False, indent=2, sort_keys=True) + '\n'


def from_jsonable(obj: Any) -> Any:
    """把 'inf'/'-inf'/'nan' 字符串还原为浮点数"""
    if isinstance(obj, dict):
        return {k: from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [from_jsonable(v) for v in obj]
    if obj in ('inf', '-inf', 'nan'):
        return float(obj)
    return obj


def resolve_output_dir(output_dir: Optional[str] = None, config: Optional[Dict[str, Any]] = None) -> str:
    """输出目录：命令行参数 > 环境变量 HARVEST_OUTPUT_DIR > 配置文件 > 缺省"""
    if output_dir:
        return output_dir
    env_dir = os.environ.get('HARVEST_OUTPUT_DIR')
    if env_dir:
        return env_dir
    config = config or {}
    return (config.get('output') or {}).get('dir') or DEFAULT_OUTPUT_DIR


class ReportService:
    """结果报告服务类"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        create_directories(output_dir)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_json(self, name: str, obj: Any) -> str:
        """写出 JSON 产物

        Args:
            name: 文件名
            obj: 数据对象或 dataclass

        Returns:
            文件路径
        """
        path = self.path(name)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(dumps(obj))
        logger.debug(f"写出 JSON: {path}")
        return path

    def write_csv(self, name: str, df: pd.DataFrame) -> str:
        """写出 CSV 表格"""
        path = self.path(name)
        df.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
        logger.debug(f"写出 CSV: {path} ({len(df)} 行)")
        return path

    @staticmethod
    def read_json(path: str) -> Dict[str, Any]:
        """读取 JSON 产物，文件缺失或格式错误抛出 ConfigError"""
        if not os.path.isfile(path):
            raise ConfigError(f"文件不存在: {path}", field='path')
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return from_jsonable(json.load(f))
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON 解析失败: {e.msg}", field=os.path.basename(path), line=e.lineno)

    # 运行清单
    @staticmethod
    def build_manifest(model_config: Dict[str, Any], actions: List[str], tolerances: Dict[str, Any],
                       seeds: Dict[str, Any], output_dir: str, run: Optional[Dict[str, Any]] = None,
                       timestamp: Optional[str] = None) -> RunManifest:
        """生成运行清单；复现运行时沿用原清单的时间戳"""
        return RunManifest(
            model_config=model_config,
            actions=list(actions),
            tolerances=tolerances,
            seeds=seeds,
            output_dir=output_dir,
            tool_version=__version__,
            timestamp=timestamp or datetime.now().replace(microsecond=0).isoformat(),
            run=run or {},
        )

    def write_manifest(self, manifest: RunManifest) -> str:
        return self.write_json(MANIFEST_NAME, manifest)

    @classmethod
    def load_manifest(cls, path: str) -> RunManifest:
        """读取运行清单"""
        data = cls.read_json(path)
        required = ('model_config', 'actions', 'tolerances', 'seeds', 'output_dir', 'tool_version', 'timestamp')
        missing = [key for key in required if key not in data]
        if missing:
            raise ConfigError(f"运行清单缺少字段: {missing}", field='manifest')
        if data['tool_version'] != __version__:
            logger.warning(f"运行清单版本 {data['tool_version']} 与当前版本 {__version__} 不一致，产物可能不同")
        return RunManifest(**{k: data[k] for k in required},
                           run=data.get('run') or {},
                           manifest_version=int(data.get('manifest_version', 1)))

    # 终端汇总
    @staticmethod
    def hjb_table(report: HjbReport) -> str:
        """HJB 验证结果表格"""
        rows = [{
            '检查项': check.name,
            '数值': check.value,
            '容差': check.tolerance,
            '结果': ('通过' if check.passed else '失败') if check.applicable else '不适用',
        } for check in report.checks]
        return pd.DataFrame(rows).to_string(index=False)

    @staticmethod
    def assumption_table(report) -> str:
        """标准假设检查表格"""
        rows = [{
            '假设': check.assumption,
            '检查项': check.name,
            '结果': '通过' if check.passed else '失败',
            '说明': check.message,
        } for check in report.checks]
        return pd.DataFrame(rows).to_string(index=False)

    @staticmethod
    def sweep_table(df: pd.DataFrame) -> str:
        return df.to_string(index=False)

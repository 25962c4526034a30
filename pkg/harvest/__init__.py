#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
遍历型奇异随机控制求解与验证工具包初始化模块
"""

import os
import sys
from typing import Any, Dict, Optional

import yaml
from loguru import logger

__version__ = '1.0.0'

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                   'config', 'config.yaml')


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """加载配置文件

    Args:
        config_path: YAML配置文件路径，缺省为 config/config.yaml

    Returns:
        配置字典
    """
    path = config_path or DEFAULT_CONFIG_PATH
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f) or {}
    except Exception as e:
        logger.warning(f"加载YAML配置文件失败: {e}，使用默认配置")
        # YAML配置不存在时退回 config.py
        try:
            from config import get_config
            return get_config().as_dict()
        except Exception as e2:
            logger.error(f"加载配置失败: {e2}")
            return {}


def setup_logging(logging_config: Optional[Dict[str, Any]] = None, log_dir: Optional[str] = None):
    """配置日志

    Args:
        logging_config: 配置中的 logging 节
        log_dir: 日志目录，为空时不写文件
    """
    logging_config = logging_config or {}
    log_level = os.environ.get('HARVEST_LOG_LEVEL') or logging_config.get('level', 'INFO')
    log_format = logging_config.get(
        'format', '{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}'
    )

    logger.remove()

    if logging_config.get('console_output', True):
        logger.add(
            sys.stderr,
            level=log_level,
            format=log_format,
            colorize=True
        )

    log_file = os.environ.get('HARVEST_LOG_FILE')
    if not log_file and log_dir and logging_config.get('file_output', False):
        log_file = os.path.join(log_dir, 'harvest.log')
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        logger.add(
            log_file,
            level=log_level,
            format=log_format,
            rotation=logging_config.get('file_rotation', '10 MB'),
            retention=logging_config.get('retention', '30 days'),
            encoding='utf-8'
        )


def create_directories(*directories: str):
    """创建必要的目录"""
    for directory in directories:
        if directory:
            os.makedirs(directory, exist_ok=True)


# 自定义异常类
class HarvestError(Exception):
    """工具包基础错误"""
    exit_code = 1


class ConfigError(HarvestError):
    """配置或命令行参数错误"""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"第{line}行")
        if field:
            location.append(f"字段 {field}")
        prefix = f"[{', '.join(location)}] " if location else ''
        super().__init__(prefix + message)


class ModelValidationError(HarvestError):
    """模型参数越界或标准假设不成立"""
    exit_code = 3

    def __init__(self, message: str, failed_checks: Optional[list] = None):
        self.failed_checks = failed_checks or []
        super().__init__(message)


class DomainError(HarvestError):
    """参数不在运算定义域内"""
    exit_code = 4


class AmbiguityError(HarvestError):
    """发现多个候选根，拒绝静默选择"""
    exit_code = 4

    def __init__(self, message: str, candidates: Optional[list] = None):
        self.candidates = candidates or []
        super().__init__(f"{message}: {self.candidates}")


class QuadratureError(HarvestError):
    """数值积分不收敛"""
    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class SolverError(HarvestError):
    """自由边界求解失败"""
    exit_code = 4

    def __init__(self, message: str, trace: Optional[list] = None):
        self.trace = trace or []
        super().__init__(message)


class SimulationError(HarvestError):
    """蒙特卡洛模拟失败"""
    exit_code = 5


class SuboptimalityError(SimulationError):
    """阈值扫描违反 λ* 上界或最大值不在 β* 处"""

    def __init__(self, message: str, table=None):
        self.table = table
        super().__init__(message)

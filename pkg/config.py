#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
应用配置文件
config/config.yaml 缺失时使用这里的内置缺省值
"""

import copy
import math
import os

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


class Config:
    """基础配置类"""

    # 求解器配置
    SOLVER = {
        'root_tol': 1e-10,
        'residual_tol': 1e-8,
        'max_expansion': 2.0 ** 10,
        'scan_points': 8,
        'newton_check': True,
        'slope_tol': 1e-3,
        'quadrature': {
            'epsabs': 1e-10,
            'epsrel': 1e-10,
            'limit': 200,
            'panel_width': math.log(2.0),
            'max_panels': 400,
            'tail_patience': 5,
        },
    }

    SEARCH = {
        'lower': 2.0 ** -40,
        'upper': 2.0 ** 40,
        'grid_points': 801,
    }

    # 假设检验配置
    VALIDATION = {
        'grid_points': 200,
        'x_min': 1e-4,
        'x_max': 1e4,
        'limit_depth': 40,
        'quadrature': {'epsabs': 1e-6, 'epsrel': 1e-6, 'max_panels': 200},
    }

    VERIFY = {
        'points': 40,
        'fd_relative_step': 1e-4,
        'ode_tol': 1e-6,
    }

    # 模拟配置
    SIMULATION = {
        'dt': 1e-3,
        'horizon': 200.0,
        'n_paths': 256,
        'seed': 20240101,
        'floor': 1e-12,
        'max_floor_fraction': 0.01,
        'n_bins': 200,
        'n_windows': 20,
        'batch_size': 32,
        'workers': int(os.environ.get('HARVEST_WORKERS', '1')),
        'calibrate_dt': True,
    }

    # 日志配置
    LOGGING = {
        'level': os.environ.get('HARVEST_LOG_LEVEL') or 'INFO',
        'file_rotation': '10 MB',
        'retention': '30 days',
        'console_output': True,
        'file_output': False,
    }

    OUTPUT = {
        'dir': os.environ.get('HARVEST_OUTPUT_DIR') or os.path.join(
            os.path.dirname(os.path.abspath(__file__)), 'output'),
    }

    @classmethod
    def as_dict(cls):
        """转换为与 config.yaml 同结构的字典"""
        return copy.deepcopy({
            'solver': cls.SOLVER,
            'search': cls.SEARCH,
            'validation': cls.VALIDATION,
            'verify': cls.VERIFY,
            'simulation': cls.SIMULATION,
            'logging': cls.LOGGING,
            'output': cls.OUTPUT,
        })


class DevelopmentConfig(Config):
    """开发环境配置"""

    LOGGING = dict(Config.LOGGING, level=os.environ.get('HARVEST_LOG_LEVEL') or 'DEBUG')


class TestingConfig(Config):
    """测试环境配置"""

    # 测试环境缩短模拟
    SIMULATION = dict(Config.SIMULATION, horizon=20.0, n_paths=16, calibrate_dt=False)
    LOGGING = dict(Config.LOGGING, level='WARNING')


class ProductionConfig(Config):
    """生产环境配置"""

    LOGGING = dict(Config.LOGGING, file_output=True)


# 配置字典
config = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': Config
}


def get_config():
    """获取当前环境配置"""
    config_name = os.environ.get('HARVEST_ENV') or 'default'
    return config.get(config_name, Config)

#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
测试公共夹具
内置模型实例、已求解的阈值与静默日志
"""

import math
import os
import sys

import pytest
from loguru import logger
from scipy import special
from scipy.optimize import brentq

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from harvest.services.free_boundary import solve_threshold
from harvest.services.model_service import build_catalog_model, critical_points

LOGISTIC = {'kappa': 1.0, 'gamma': 1.0, 'sigma': 0.5, 'ell': 1.0}
LOG_OU = {'kappa': 1.0, 'gamma': 0.5, 'sigma': 0.5}
MEAN_REVERT = {'kappa': 1.0, 'gamma': 1.0, 'sigma': 0.5, 'ell': 0.5}
POWER = {'a': 0.5, 'c': 1.0}


@pytest.fixture(autouse=True)
def quiet_logger():
    """测试期间只保留 ERROR 以上日志"""
    logger.remove()
    logger.add(sys.stderr, level='ERROR')
    yield
    logger.remove()


@pytest.fixture(scope='session')
def logistic_model():
    return build_catalog_model('logistic', LOGISTIC)


@pytest.fixture(scope='session')
def log_ou_model():
    return build_catalog_model('log-ou', LOG_OU)


@pytest.fixture(scope='session')
def mean_revert_model():
    return build_catalog_model('mean-revert', MEAN_REVERT, payoff_kind='power_inada', payoff_params=POWER)


@pytest.fixture(scope='session')
def logistic_power_model():
    return build_catalog_model('logistic', LOGISTIC, payoff_kind='power_inada', payoff_params=POWER)


@pytest.fixture(scope='session')
def log_ou_power_model():
    return build_catalog_model('log-ou', LOG_OU, payoff_kind='power_inada', payoff_params=POWER)


@pytest.fixture(scope='session')
def logistic_power_solution(logistic_power_model):
    return solve_threshold(logistic_power_model, critical_points(logistic_power_model))


@pytest.fixture(scope='session')
def log_ou_power_solution(log_ou_power_model):
    return solve_threshold(log_ou_power_model, critical_points(log_ou_power_model))


@pytest.fixture(scope='session')
def logistic_solution(logistic_model):
    return solve_threshold(logistic_model, critical_points(logistic_model))


@pytest.fixture(scope='session')
def log_ou_solution(log_ou_model):
    return solve_threshold(log_ou_model, critical_points(log_ou_model))


@pytest.fixture(scope='session')
def mean_revert_solution(mean_revert_model):
    return solve_threshold(mean_revert_model, critical_points(mean_revert_model))


def logistic_mass(beta, kappa=1.0, gamma=1.0, sigma=0.5):
    """ℓ=1 逻辑斯蒂模型 m_β(]0,β[) 的不完全 Gamma 闭式"""
    c1, c2 = 2 * kappa * gamma / sigma ** 2, 2 * kappa / sigma ** 2
    a = c1 - 1.0
    log_value = (math.log(2.0 / sigma ** 2) + c2 * beta - c1 * math.log(beta) - a * math.log(c2)
                 + special.gammaln(a))
    return math.exp(log_value) * special.gammainc(a, c2 * beta)


def logistic_optimum(kappa=1.0, gamma=1.0, sigma=0.5):
    """b(β) = 1/m_β(]0,β[) 在 (γ/2, γ) 内的根，h=0、K=1 时即 β*"""
    def excess(beta):
        return kappa * (gamma - beta) * beta - 1.0 / logistic_mass(beta, kappa, gamma, sigma)
    beta = brentq(excess, 0.5 * gamma, gamma * (1 - 1e-12), xtol=1e-14)
    return beta, kappa * (gamma - beta) * beta

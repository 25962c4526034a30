#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
自由边界求解与 HJB 验证测试
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, optimize

from harvest import DomainError
from harvest.models import SolverConfig, ThresholdSolution
from harvest.services.free_boundary import (big_lambda, big_lambda_derivative, newton_cross_check, solve_threshold,
                                            speed_mass_below, theta, theta_ode_residual, value_gradient,
                                            verify_hjb)
from harvest.services.model_service import critical_points, rho_lower
from harvest.services.scale_speed import ScaleSpeed
from tests.conftest import logistic_mass, logistic_optimum


def mean_revert_big_lambda(beta, kappa=1.0, gamma=1.0, sigma=0.5, a=0.5, c=1.0):
    """ℓ=1/2 均值回复 + c·x^a 收益下 Λ(β) 的独立积分"""
    c1, c2 = 2 * kappa * gamma / sigma ** 2, 2 * kappa / sigma ** 2

    def density(s):
        return 2.0 / (sigma ** 2 * s) * math.exp(c1 * math.log(s / beta) - c2 * (s - beta))

    def level(s):
        return kappa * (gamma - s) + c * s ** a

    mass = integrate.quad(density, 0.0, beta, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    weighted = integrate.quad(lambda s: level(s) * density(s), 0.0, beta, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return weighted / mass


def test_big_lambda_matches_closed_form(logistic_model):
    for beta in (0.4, 0.7, 0.9):
        assert big_lambda(logistic_model, beta) == pytest.approx(1.0 / logistic_mass(beta), rel=1e-9)
        assert speed_mass_below(logistic_model, beta) == pytest.approx(logistic_mass(beta), rel=1e-9)


def test_theta_zero_at_big_lambda(logistic_model):
    beta = 0.6
    lam = big_lambda(logistic_model, beta)
    assert abs(theta(logistic_model, beta, lam)) <= 1e-10
    # ∂_λΘ = -m_β(]0,β[)
    assert theta(logistic_model, beta, lam - 0.01) == pytest.approx(0.01 * logistic_mass(beta), rel=1e-8)


@pytest.mark.parametrize('lam', [0.0, 0.15, 0.3])
def test_theta_affine_in_lambda(logistic_model, lam):
    beta = 0.8
    expected = theta(logistic_model, beta, 0.0) - lam * speed_mass_below(logistic_model, beta)
    assert theta(logistic_model, beta, lam) == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_theta_ode(logistic_model, mean_revert_model):
    assert abs(theta_ode_residual(logistic_model, 0.7, 0.2)) <= 1e-6
    assert abs(theta_ode_residual(mean_revert_model, 0.5, 1.1)) <= 1e-6


def test_logistic_solution_matches_oracle(logistic_solution):
    beta, lam = logistic_optimum()
    assert logistic_solution.beta_star == pytest.approx(beta, abs=1e-8)
    assert logistic_solution.lambda_star == pytest.approx(lam, abs=1e-9)


ALL_SOLUTIONS = [('logistic_solution', 'logistic_model'),
                 ('log_ou_solution', 'log_ou_model'),
                 ('mean_revert_solution', 'mean_revert_model'),
                 ('logistic_power_solution', 'logistic_power_model'),
                 ('log_ou_power_solution', 'log_ou_power_model')]


def log_ou_mass(beta, kappa=1.0, gamma=0.5, sigma=0.5, points=120001):
    """对数 OU 模型 m_β(]0,β[)：u = ln s 代换后的 Simpson 积分"""
    a, c = kappa / sigma ** 2, 2 * kappa * gamma / sigma ** 2 + 1.0
    lb = math.log(beta)
    u = np.linspace(lb - 12.0, lb, points)
    integrand = 2.0 / sigma ** 2 * np.exp(-u - a * (u * u - lb * lb) + c * (u - lb))
    return integrate.simpson(integrand, x=u)


def log_ou_drift(x, kappa=1.0, gamma=0.5, sigma=0.5):
    return (kappa * gamma + 0.5 * sigma ** 2 - kappa * math.log(x)) * x


@pytest.mark.parametrize('fixture_name,model_name', ALL_SOLUTIONS)
def test_solution_residuals(fixture_name, model_name, request):
    solution = request.getfixturevalue(fixture_name)
    cp = solution.critical_points
    assert solution.theta_residual <= 1e-8
    assert solution.level_residual <= 1e-8
    assert solution.fixed_point_residual <= 1e-8
    assert solution.beta_star > cp.xi
    assert cp.level_at_zero < solution.lambda_star < cp.lambda_bar
    # Λ'(β*) = 0 时不动点方程的斜率为 1
    assert solution.g_slope == pytest.approx(1.0, abs=1e-3)
    assert solution.g_slope_gap == pytest.approx(abs(solution.g_slope - 1.0))
    assert abs(solution.lambda_derivative) <= 1e-6
    assert solution.newton_check['converged']
    assert solution.newton_check['beta_gap'] <= 1e-6
    assert solution.newton_check['lambda_gap'] <= 1e-6


@pytest.mark.parametrize('fixture_name,model_name', [('logistic_solution', 'logistic_model'),
                                                      ('log_ou_solution', 'log_ou_model')])
def test_zero_payoff_identities(fixture_name, model_name, request):
    """h=0、K=1 时 λ* = b(β*) 且 λ*·m_{β*}(]0,β*[) = 1"""
    solution = request.getfixturevalue(fixture_name)
    model = request.getfixturevalue(model_name)
    assert abs(solution.lambda_star - float(model.drift(solution.beta_star))) <= 1e-8
    assert abs(solution.lambda_star * solution.speed_mass - 1.0) <= 1e-8


def test_mean_revert_grid_search_oracle(mean_revert_solution):
    """Λ 的最大值点即 β*：独立积分 + 有界标量优化"""
    cp = mean_revert_solution.critical_points
    grid = np.linspace(cp.xi, 2.0, 60)[1:]
    values = [mean_revert_big_lambda(b) for b in grid]
    start = grid[int(np.argmax(values))]
    found = optimize.minimize_scalar(lambda b: -mean_revert_big_lambda(b),
                                     bounds=(start - 0.05, start + 0.05), method='bounded',
                                     options={'xatol': 1e-9})
    assert mean_revert_solution.beta_star == pytest.approx(found.x, abs=1e-4)
    assert mean_revert_solution.lambda_star == pytest.approx(-found.fun, abs=1e-8)


def test_log_ou_independent_oracle(log_ou_solution):
    """h=0、K=1 时 β* 是 b(β)·m_β(]0,β[) = 1 在 ξ 右侧的根"""
    xi = log_ou_solution.critical_points.xi
    upper = math.exp(0.625) * (1.0 - 1e-6)
    beta = optimize.brentq(lambda b: log_ou_drift(b) * log_ou_mass(b) - 1.0, xi * (1.0 + 1e-9), upper,
                           xtol=1e-14)
    assert log_ou_solution.beta_star == pytest.approx(beta, abs=1e-8)
    assert log_ou_solution.lambda_star == pytest.approx(log_ou_drift(beta), abs=1e-9)


def test_mean_revert_first_order_oracle(mean_revert_solution):
    """Λ' ∝ K·b+h-Λ，β* 是 K·b(β)+h(β) = Λ(β) 在 ξ 右侧的根"""
    xi = mean_revert_solution.critical_points.xi

    def level(b):
        return (1.0 - b) + math.sqrt(b)

    beta = optimize.brentq(lambda b: level(b) - mean_revert_big_lambda(b), xi * (1.0 + 1e-9), 2.0, xtol=1e-13)
    assert mean_revert_solution.beta_star == pytest.approx(beta, abs=1e-6)
    assert mean_revert_solution.lambda_star == pytest.approx(level(beta), abs=1e-8)


@pytest.mark.parametrize('fixture_name,model_name', ALL_SOLUTIONS)
def test_lambda_star_maximizes_big_lambda(fixture_name, model_name, request):
    solution = request.getfixturevalue(fixture_name)
    model = request.getfixturevalue(model_name)
    beta_star = solution.beta_star
    for beta in np.geomspace(beta_star / 4.0, 4.0 * beta_star, 25):
        assert big_lambda(model, float(beta)) <= solution.lambda_star + 1e-8, beta


@pytest.mark.parametrize('model_name,beta', [('logistic_model', 0.7), ('mean_revert_model', 0.6)])
def test_big_lambda_independent_of_anchor(model_name, beta, request):
    model = request.getfixturevalue(model_name)
    expected = big_lambda(model, beta)
    for anchor in (0.3, 1.5):
        ss = ScaleSpeed(model, anchor)
        weighted = ss.speed_integral(lambda s: float(model.level(s)), 0.0, beta)
        mass = ss.speed_mass(0.0, beta)
        assert weighted.converged and mass.converged
        assert weighted.value / mass.value == pytest.approx(expected, rel=1e-9)


def test_tail_integral_sign_structure(logistic_model, logistic_solution):
    """x ↦ ∫_x^{β*}[K·b+h-λ*]dm 在 (0,β*) 上为正，ρ(λ*) 左侧递增、右侧递减"""
    beta, lam = logistic_solution.beta_star, logistic_solution.lambda_star
    rho = rho_lower(logistic_model, logistic_solution.critical_points, lam)
    assert 0.0 < rho < logistic_solution.critical_points.xi
    ss = ScaleSpeed(logistic_model, beta)
    points = [0.5 * rho, 0.75 * rho, rho] + [rho + f * (beta - rho) for f in (0.25, 0.5, 0.75)]
    values = []
    for x in points:
        tail = ss.speed_integral(lambda s: float(logistic_model.level(s)) - lam, x, beta)
        assert tail.converged
        values.append(tail.value)
    assert all(v > 0 for v in values), values
    assert values[0] < values[1] < values[2]
    assert values[2] > values[3] > values[4] > values[5]


def test_big_lambda_below_optimum(logistic_model, logistic_solution):
    for factor in (0.5, 0.75, 1.25, 1.5):
        assert big_lambda(logistic_model, factor * logistic_solution.beta_star) < logistic_solution.lambda_star


def test_big_lambda_derivative_sign(logistic_model, logistic_solution):
    beta = logistic_solution.beta_star
    assert big_lambda_derivative(logistic_model, 0.8 * beta) > 0
    assert big_lambda_derivative(logistic_model, 1.2 * beta) < 0


def test_newton_cross_check_from_offset(logistic_model, logistic_solution):
    check = newton_cross_check(logistic_model, logistic_solution, start_offset=5e-2)
    assert check['converged']
    assert check['beta_gap'] <= 1e-6


def test_bracket_starts_at_xi(logistic_solution):
    lo, hi = logistic_solution.bracket_history[0]
    assert lo == logistic_solution.critical_points.xi
    assert hi >= logistic_solution.beta_star


def test_solver_without_newton_check(logistic_model, logistic_solution):
    solution = solve_threshold(logistic_model, critical_points(logistic_model), SolverConfig(newton_check=False))
    assert solution.newton_check == {}
    assert solution.beta_star == pytest.approx(logistic_solution.beta_star, abs=1e-9)


def test_big_lambda_domain(logistic_model):
    with pytest.raises(DomainError):
        big_lambda(logistic_model, 0.0)
    with pytest.raises(DomainError):
        big_lambda(logistic_model, math.inf)


@pytest.mark.parametrize('fixture_name,model_name', [('logistic_solution', 'logistic_model'),
                                                      ('log_ou_solution', 'log_ou_model'),
                                                      ('mean_revert_solution', 'mean_revert_model'),
                                                      ('logistic_power_solution', 'logistic_power_model')])
def test_verify_hjb_passes(fixture_name, model_name, request):
    solution = request.getfixturevalue(fixture_name)
    model = request.getfixturevalue(model_name)
    report = verify_hjb(model, solution)
    failed = [(c.name, c.value) for c in report.checks if c.applicable and not c.passed]
    assert report.passed, failed
    assert report.check('gradient_constraint').value >= -1e-10


def test_limit_at_zero_applicability(logistic_model, logistic_solution, mean_revert_model, mean_revert_solution):
    assert not value_gradient(logistic_model, logistic_solution).limit_at_zero()['applicable']
    limit = value_gradient(mean_revert_model, mean_revert_solution).limit_at_zero()
    assert limit['applicable']
    # (λ* - h(0)) / b(0) = λ*/κγ
    assert limit['target'] == pytest.approx(mean_revert_solution.lambda_star)
    assert limit['error'] <= 1e-6


def test_gradient_is_price_above_threshold(logistic_model, logistic_solution):
    vg = value_gradient(logistic_model, logistic_solution)
    beta = logistic_solution.beta_star
    assert vg(2.0 * beta) == logistic_model.price
    assert vg.second_derivative(2.0 * beta) == 0.0
    assert vg(0.5 * beta) > logistic_model.price
    assert vg.representation_gap() <= 1e-8


def test_verify_detects_perturbed_lambda(logistic_model, logistic_solution):
    mutated = replace(logistic_solution, lambda_star=logistic_solution.lambda_star + 1e-3)
    report = verify_hjb(logistic_model, mutated)
    assert not report.passed
    assert not report.check('ode_branch').passed


def test_verify_detects_perturbed_beta(logistic_model, logistic_solution):
    mutated = replace(logistic_solution, beta_star=logistic_solution.beta_star * (1.0 + 1e-3))
    report = verify_hjb(logistic_model, mutated)
    assert not report.check('pasting_second').passed


def test_solution_round_trip(logistic_solution):
    restored = ThresholdSolution.from_dict(logistic_solution.to_dict())
    assert restored.beta_star == logistic_solution.beta_star
    assert restored.critical_points == logistic_solution.critical_points

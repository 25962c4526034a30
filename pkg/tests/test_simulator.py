#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
模拟服务测试
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from harvest import ConfigError, SimulationError, SuboptimalityError
from harvest.models import ModelSpec, SimConfig, SimResult, SweepRow, SweepTable
from harvest.services.free_boundary import big_lambda
from harvest.services.model_service import build_catalog_model
from harvest.services.simulator import (calibrate_dt, estimate_expected, estimate_pathwise, moment_check,
                                        occupation_check, path_generator, simulate_path, threshold_sweep)
from harvest.utils.data_processor import DataProcessor

QUICK = {'dt': 0.01, 'horizon': 1.0, 'n_paths': 8, 'batch_size': 2, 'seed': 7}


@pytest.fixture(scope='module')
def logistic_run(logistic_model, logistic_solution):
    """β* 处的期望准则估计，同时用于占位测度检验"""
    beta = logistic_solution.beta_star
    cfg = SimConfig(threshold=beta, x0=beta, dt=1e-3, horizon=50.0, n_paths=32, n_bins=50, seed=11)
    return cfg, estimate_expected(logistic_model, cfg)


def test_path_generator_is_deterministic():
    a = path_generator(42, 3).standard_normal(5)
    b = path_generator(42, 3).standard_normal(5)
    c = path_generator(42, 4).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize('overrides,field', [
    ({'dt': 0.0}, 'dt'),
    ({'horizon': 0.05}, 'horizon'),
    ({'n_paths': 0}, 'paths'),
    ({'burn_in_fraction': 1.0}, 'burn_in_fraction'),
    ({'x0': -1.0}, 'x0'),
    ({'workers': 0}, 'workers'),
])
def test_sim_config_validation(overrides, field):
    cfg = SimConfig(threshold=1.0, x0=1.0, **overrides)
    with pytest.raises(ConfigError) as excinfo:
        cfg.validate()
    assert excinfo.value.field == field


def test_uncontrolled_needs_histogram_upper():
    with pytest.raises(ConfigError):
        SimConfig(threshold=math.inf, x0=1.0).validate()


def test_effective_burn_in():
    assert SimConfig(threshold=1.0, x0=1.0).effective_burn_in == 0.0
    assert SimConfig(threshold=1.0, x0=2.0).effective_burn_in == 0.1
    assert SimConfig(threshold=1.0, x0=2.0, burn_in_fraction=0.0).effective_burn_in == 0.0


def test_simulate_path_stays_below_threshold(logistic_model):
    cfg = SimConfig(threshold=0.6, x0=1.5, dt=0.01, horizon=5.0)
    path = simulate_path(logistic_model, cfg)
    assert path.initial_harvest == pytest.approx(0.9)
    assert path.max_state <= 0.6
    assert 0.0 < path.terminal_state <= 0.6
    assert path.harvest_total >= 0.0
    assert path.harvest_monotone
    assert len(path.window_averages) == cfg.n_windows


def test_initial_impulse_counted_without_burn_in(logistic_model):
    cfg = SimConfig(threshold=0.6, x0=1.5, dt=0.01, horizon=5.0, burn_in_fraction=0.0)
    path = simulate_path(logistic_model, cfg)
    assert path.harvest_total >= 0.9


def test_workers_do_not_change_results(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, **QUICK)
    serial = estimate_expected(logistic_model, cfg)
    parallel = estimate_expected(logistic_model, replace(cfg, workers=3))
    assert serial.per_path_values == parallel.per_path_values
    assert serial.histogram_mass == parallel.histogram_mass
    assert serial.config == parallel.config
    assert 'workers' not in serial.config


def test_batch_matches_single_path(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, **QUICK)
    result = estimate_expected(logistic_model, cfg)
    single = simulate_path(logistic_model, cfg, path_index=5)
    assert result.per_path_values[5] == pytest.approx(single.estimate, rel=1e-12)


def test_common_seed_paths_identical(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, common_seed=True, **QUICK)
    values = estimate_expected(logistic_model, cfg).per_path_values
    assert values == pytest.approx([values[0]] * len(values), rel=1e-12)


def test_antithetic_pairs_share_stream(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, **QUICK)
    plain = estimate_expected(logistic_model, cfg).per_path_values
    anti = estimate_expected(logistic_model, replace(cfg, antithetic=True)).per_path_values
    # 偶数下标路径用第 idx/2 条随机流的原始噪声
    assert anti[0] == pytest.approx(plain[0], rel=1e-12)
    assert anti[2] == pytest.approx(plain[1], rel=1e-12)
    assert anti[1] != anti[0]


def test_expected_estimate_near_optimum(logistic_run, logistic_solution):
    cfg, result = logistic_run
    assert result.mode == 'expected'
    assert len(result.per_path_values) == 32
    assert result.stderr > 0
    assert abs(result.mean - logistic_solution.lambda_star) <= 4 * result.stderr + 0.02
    assert sum(result.histogram_mass) == pytest.approx(1.0)
    assert len(result.histogram_edges) == cfg.n_bins + 1


def test_occupation_close_to_speed_measure(logistic_model, logistic_run):
    cfg, result = logistic_run
    report = occupation_check(logistic_model, cfg, result, tolerance=0.15)
    assert report.passed, report.cdf_distance
    assert report.speed_cdf[-1] == pytest.approx(1.0)
    assert np.all(np.diff(report.speed_cdf) >= 0)


def test_pathwise_trace(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, dt=0.01, horizon=20.0, n_paths=4, n_windows=10)
    result = estimate_pathwise(logistic_model, cfg)
    assert result.mode == 'pathwise'
    assert len(result.per_path_values) == 1
    assert len(result.trace) == 10
    assert result.trace[-1] == pytest.approx(result.mean, rel=1e-9)
    assert result.fluctuation_band >= 0
    assert math.isnan(result.stderr)


def test_floor_events_raise(logistic_model):
    model = build_catalog_model('logistic', {'kappa': 1.0, 'gamma': 1.0, 'sigma': 3.0, 'ell': 1.0}, strict=False)
    cfg = SimConfig(threshold=1.0, x0=1.0, dt=0.1, horizon=10.0, n_paths=4)
    with pytest.raises(SimulationError):
        estimate_expected(model, cfg)


def test_calibrate_dt(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, dt=0.01, horizon=5.0, n_paths=4, batch_size=2)
    calibration = calibrate_dt(logistic_model, cfg)
    assert calibration.dt == 0.01
    assert math.isfinite(calibration.c_dt)
    assert calibration.c_dt >= 0


def test_tolerance_band():
    result = SimResult(threshold=1.0, mean=0.2, stderr=0.01, c_dt=0.5, config={'dt': 0.01})
    assert result.tolerance() == pytest.approx(3 * 0.01 + 0.5 * 0.1)
    pathwise = SimResult(threshold=1.0, mean=0.2, stderr=math.nan, fluctuation_band=0.02, mode='pathwise')
    assert pathwise.tolerance(dt=0.0, n_stderr=2.0) == pytest.approx(0.04)


def test_moment_check_analytic_value(logistic_model):
    """ℓ=1 逻辑斯蒂模型的平稳分布为 Gamma(c1-1, c2)，均值 7/8"""
    cfg = SimConfig(threshold=math.inf, x0=1.0, histogram_upper=3.0, moment_exponent=1.0)
    report = moment_check(logistic_model, cfg, SimResult(threshold=math.inf, mean=math.nan, stderr=math.nan,
                                                          moment_average=0.875))
    assert report.analytic == pytest.approx(0.875, rel=1e-7)
    assert report.passed


def test_sweep_rejects_bad_grid(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, **QUICK)
    with pytest.raises(ConfigError) as excinfo:
        threshold_sweep(logistic_model, cfg, [])
    assert excinfo.value.field == 'beta_grid'
    with pytest.raises(ConfigError):
        threshold_sweep(logistic_model, cfg, [0.5, -1.0])


def test_sweep_rows_and_oracle(logistic_model, logistic_solution):
    cfg = SimConfig(threshold=0.7, x0=0.7, **QUICK)
    betas = [0.4, logistic_solution.beta_star, 0.95]
    # 短时长下放宽容差，只检查表结构与 Λ(β)
    table = threshold_sweep(logistic_model, cfg, betas, lambda_star=logistic_solution.lambda_star,
                            n_stderr=1e3, beta_star=logistic_solution.beta_star)
    assert [row.beta for row in table.rows] == betas
    for row in table.rows:
        assert row.oracle == pytest.approx(big_lambda(logistic_model, row.beta), rel=1e-12)
        assert row.oracle <= logistic_solution.lambda_star + 1e-10
    assert table.argmax_beta in betas
    assert table.optimum_row.beta == logistic_solution.beta_star
    assert table.passed and not table.warnings
    frame = DataProcessor().sweep_frame(table)
    assert list(frame['beta']) == betas


def test_sweep_enforces_upper_bound(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, **QUICK)
    betas = [0.5, 0.7, 0.9]
    # 零收益时估计非负，λ* = -1 必然被超过
    with pytest.raises(SuboptimalityError) as excinfo:
        threshold_sweep(logistic_model, cfg, betas, lambda_star=-1.0)
    assert excinfo.value.exit_code == 5
    table = excinfo.value.table
    assert not table.all_below_optimum
    assert len(table.warnings) == 3

    relaxed = threshold_sweep(logistic_model, cfg, betas, lambda_star=-1.0, pathwise_ok=False)
    assert not relaxed.all_below_optimum
    assert not relaxed.passed
    assert relaxed.warnings == table.warnings


def _row(beta, estimate, tolerance=0.01):
    return SweepRow(beta=beta, estimate=estimate, stderr=0.0, oracle=estimate, tolerance=tolerance,
                    matches_oracle=True, below_optimum=True)


def test_sweep_table_maximal_at_optimum():
    table = SweepTable(rows=[_row(0.5, 0.20), _row(1.0, 0.25), _row(1.5, 0.255)], beta_star=1.02)
    assert table.optimum_row.beta == 1.0
    # 1.5 处超出的 0.005 在该行容差内
    assert table.maximal_at_optimum
    table.rows.append(_row(2.0, 0.30))
    assert not table.maximal_at_optimum
    assert not table.passed
    assert SweepTable(rows=[_row(1.0, 0.3)]).maximal_at_optimum


def test_sweep_rejects_misplaced_maximum(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, **QUICK)
    # 把 β* 报在远离最大值的一端，并收紧容差
    betas = [0.05, 0.7]
    with pytest.raises(SuboptimalityError) as excinfo:
        threshold_sweep(logistic_model, cfg, betas, n_stderr=0.0, beta_star=0.05)
    assert not excinfo.value.table.maximal_at_optimum


def test_cumulative_harvest_monotone_flag(logistic_model):
    cfg = SimConfig(threshold=0.7, x0=0.7, dt=0.01, horizon=1.0, n_paths=2)
    broken = replace(logistic_model, drift=lambda x: np.asarray(x, dtype=float) * np.nan)
    assert simulate_path(logistic_model, cfg).harvest_monotone
    assert not simulate_path(broken, cfg).harvest_monotone
    with pytest.raises(SimulationError):
        estimate_expected(broken, cfg)


def constant_drift_model(b0):
    """σ ≡ 0、b ≡ b0 的确定性模型"""
    def zeros(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return ModelSpec(name='deterministic', drift=lambda x: b0 + zeros(x), drift_deriv=zeros, vol=zeros,
                     payoff=zeros, payoff_deriv=zeros, price=1.0, growth_exponent=1.0)


def test_deterministic_overflow_harvest():
    """x0 = β 时每步溢出 b0·dt，长期平均收益为 K·b0"""
    model = constant_drift_model(0.5)
    cfg = SimConfig(threshold=1.0, x0=1.0, dt=0.01, horizon=10.0, n_paths=1)
    path = simulate_path(model, cfg)
    assert path.estimate == pytest.approx(0.5, rel=1e-9)
    assert path.harvest_total == pytest.approx(5.0, rel=1e-9)
    assert path.max_state == 1.0
    result = estimate_pathwise(model, cfg)
    assert result.mean == pytest.approx(0.5, rel=1e-9)
    assert result.trace[-1] == pytest.approx(0.5, rel=1e-9)


@pytest.mark.slow
def test_sweep_matches_big_lambda(logistic_model, logistic_solution):
    beta_star = logistic_solution.beta_star
    cfg = SimConfig(threshold=beta_star, x0=beta_star, dt=1e-3, horizon=200.0, n_paths=64, seed=3)
    c_dt = calibrate_dt(logistic_model, replace(cfg, n_paths=16)).c_dt
    betas = [f * beta_star for f in (0.5, 0.75, 1.0, 1.25, 1.5)]
    table = threshold_sweep(logistic_model, cfg, betas, lambda_star=logistic_solution.lambda_star,
                            c_dt=c_dt, beta_star=beta_star)
    assert all(row.matches_oracle for row in table.rows), [(r.beta, r.estimate, r.oracle) for r in table.rows]
    assert table.all_below_optimum
    assert table.maximal_at_optimum
    assert table.optimum_row.beta == beta_star


@pytest.mark.slow
@pytest.mark.parametrize('solution_name,model_name', [('logistic_solution', 'logistic_model'),
                                                       ('log_ou_solution', 'log_ou_model'),
                                                       ('mean_revert_solution', 'mean_revert_model')])
def test_expected_criterion_each_model(solution_name, model_name, request):
    solution = request.getfixturevalue(solution_name)
    model = request.getfixturevalue(model_name)
    beta = solution.beta_star
    cfg = SimConfig(threshold=beta, x0=beta, dt=1e-3, horizon=200.0, n_paths=256, seed=17)
    c_dt = calibrate_dt(model, replace(cfg, n_paths=32)).c_dt
    result = estimate_expected(model, cfg, c_dt)
    assert abs(result.mean - solution.lambda_star) <= result.tolerance(cfg.dt, 3.0)


@pytest.mark.slow
def test_pathwise_criterion_and_occupation(logistic_model, logistic_solution):
    beta, lam = logistic_solution.beta_star, logistic_solution.lambda_star
    for seed in (1, 2, 3):
        cfg = SimConfig(threshold=beta, x0=beta, dt=1e-3, horizon=1e4, n_paths=1, seed=seed)
        result = estimate_pathwise(logistic_model, cfg)
        assert abs(result.mean - lam) <= 0.05 * lam, (seed, result.mean)
        if seed == 1:
            report = occupation_check(logistic_model, cfg, result, tolerance=0.05)
            assert report.passed, report.cdf_distance


@pytest.mark.slow
def test_uncontrolled_moment_matches(logistic_model):
    cfg = SimConfig(threshold=math.inf, x0=0.875, dt=1e-3, horizon=100.0, n_paths=16, histogram_upper=3.0,
                    moment_exponent=1.0)
    result = estimate_expected(logistic_model, cfg)
    report = moment_check(logistic_model, cfg, result)
    assert report.passed, report.relative_error

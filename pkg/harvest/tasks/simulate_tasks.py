#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
模拟相关任务
阈值策略的蒙特卡洛估计与阈值扫描
"""

import math
from dataclasses import replace
from typing import Any, Dict, Optional, Sequence

from loguru import logger

from harvest import ConfigError, SuboptimalityError
from harvest.models import SimConfig, SweepTable, ThresholdSolution
from harvest.services.report_service import ReportService
from harvest.services.simulator import (calibrate_dt, estimate_expected, estimate_pathwise, moment_check,
                                        occupation_check, threshold_sweep)
from harvest.tasks.solve_tasks import prepare_model, run_solve
from harvest.utils.data_processor import DataProcessor

PATHWISE_HORIZON = 1e4

# run 节中只影响流程、不进入 SimConfig 的键
RUN_ONLY_KEYS = ('calibrate_dt', 'occupation_check', 'occupation_tolerance', 'n_stderr')


def build_sim_config(settings: Dict[str, Any], threshold: float) -> SimConfig:
    """由 simulation 节与 run 节构造模拟配置，run 节优先

    Args:
        settings: 完整运行配置
        threshold: 阈值 β

    Returns:
        校验过的 SimConfig
    """
    section = dict(settings.get('simulation') or {})
    for key in RUN_ONLY_KEYS:
        section.pop(key, None)
    run = settings.get('run') or {}
    section.update({k: v for k, v in run.items() if k in SimConfig.__dataclass_fields__})
    section['threshold'] = threshold
    if section.get('x0') is None:
        section['x0'] = threshold if math.isfinite(threshold) else 1.0
    if int(section.get('n_paths', 2)) == 1 and 'horizon' not in run:
        section['horizon'] = PATHWISE_HORIZON
    try:
        cfg = SimConfig.from_dict(section)
    except TypeError as e:
        raise ConfigError(f"模拟配置错误: {e}", field='simulation')
    return cfg.validate()


def _option(settings: Dict[str, Any], key: str, default: Any) -> Any:
    run = settings.get('run') or {}
    if key in run:
        return run[key]
    return (settings.get('simulation') or {}).get(key, default)


def resolve_optimum(settings: Dict[str, Any], solution: Optional[ThresholdSolution],
                    override_validation: bool = False) -> ThresholdSolution:
    """使用给定的解，否则现场求解"""
    if solution is not None:
        return solution
    logger.info("未提供解文件，先求解 β* 与 λ*")
    return run_solve(settings, None, override_validation)


def run_simulate(settings: Dict[str, Any], service: Optional[ReportService] = None,
                 solution: Optional[ThresholdSolution] = None,
                 override_validation: bool = False) -> Dict[str, Any]:
    """模拟阈值策略，写出汇总 JSON 与逐路径、直方图、轨迹 CSV

    Args:
        settings: 完整运行配置，run.threshold 缺省时取 β*
        service: 报告服务
        solution: 解，用于取 β* 并与 λ* 比较
        override_validation: 是否覆盖假设检验失败

    Returns:
        汇总字典
    """
    run = settings.get('run') or {}
    threshold = run.get('threshold')
    # 先校验模拟参数，再做耗时的检验与求解
    build_sim_config(settings, 1.0 if threshold is None else float(threshold))
    model, assumptions = prepare_model(settings, override_validation)
    if threshold is None:
        solution = resolve_optimum(settings, solution, override_validation)
        threshold = solution.beta_star
    threshold = float(threshold)
    cfg = build_sim_config(settings, threshold)

    c_dt = 0.0
    calibration = None
    if _option(settings, 'calibrate_dt', False):
        calibration = calibrate_dt(model, replace(cfg, n_paths=max(cfg.n_paths, 2)))
        c_dt = calibration.c_dt

    if cfg.n_paths == 1:
        result = estimate_pathwise(model, cfg, c_dt)
    else:
        result = estimate_expected(model, cfg, c_dt)

    summary: Dict[str, Any] = {'result': result.summary(), 'calibration': calibration,
                               'pathwise_assumptions_passed': assumptions.pathwise_passed}
    if solution is not None:
        n_stderr = float(_option(settings, 'n_stderr', 3.0))
        tolerance = result.tolerance(cfg.dt, n_stderr)
        gap = result.mean - solution.lambda_star
        within = abs(gap) <= tolerance
        summary['comparison'] = {'lambda_star': solution.lambda_star, 'beta_star': solution.beta_star,
                                 'difference': gap, 'tolerance': tolerance, 'within_tolerance': within}
        log = logger.info if within else logger.warning
        log(f"估计 {result.mean:.8g} 与 λ*={solution.lambda_star:.8g} 之差 {gap:.3e}，容差 {tolerance:.3e}")

    if math.isfinite(threshold) and _option(settings, 'occupation_check', False):
        summary['occupation'] = occupation_check(model, cfg, result,
                                                 float(_option(settings, 'occupation_tolerance', 0.05)))
    if not math.isfinite(threshold):
        summary['moment'] = moment_check(model, cfg, result)

    if service is not None:
        processor = DataProcessor()
        service.write_json('simulation.json', summary)
        service.write_csv('paths.csv', processor.records_frame(
            [{'path': i, 'estimate': v, 'harvest_rate': r}
             for i, (v, r) in enumerate(zip(result.per_path_values, result.per_path_harvest_rates))],
            ['path', 'estimate', 'harvest_rate']))
        service.write_csv('histogram.csv', processor.histogram_frame(result))
        service.write_csv('trace.csv', processor.trace_frame(result))
    return summary


def parse_beta_grid(raw: Any) -> Sequence[float]:
    """'0.5,1,1.5' 或列表形式的 β 网格"""
    if raw is None:
        return []
    if isinstance(raw, str):
        items = [item.strip() for item in raw.split(',') if item.strip()]
    else:
        items = list(raw)
    try:
        return [float(item) for item in items]
    except (TypeError, ValueError):
        raise ConfigError(f"β 网格必须是数值列表: {raw}", field='beta_grid')


def run_sweep(settings: Dict[str, Any], service: Optional[ReportService] = None,
              solution: Optional[ThresholdSolution] = None,
              override_validation: bool = False) -> SweepTable:
    """阈值扫描，写出 sweep.csv 与 sweep.json

    run.beta_grid 为绝对 β 值；run.relative 为真时解释为 β* 的倍数。
    """
    run = settings.get('run') or {}
    betas = parse_beta_grid(run.get('beta_grid'))
    if not betas:
        raise ConfigError("β 网格为空", field='beta_grid')

    model, assumptions = prepare_model(settings, override_validation)
    solution = resolve_optimum(settings, solution, override_validation)
    if run.get('relative', False):
        betas = [b * solution.beta_star for b in betas]

    base = build_sim_config(settings, solution.beta_star)
    c_dt = 0.0
    if _option(settings, 'calibrate_dt', False):
        c_dt = calibrate_dt(model, replace(base, n_paths=max(base.n_paths, 2))).c_dt
    try:
        table = threshold_sweep(model, base, betas, solution.lambda_star, c_dt,
                                float(_option(settings, 'n_stderr', 3.0)), assumptions.pathwise_passed,
                                beta_star=solution.beta_star)
    except SuboptimalityError as e:
        # 失败的扫描表同样写出，便于排查
        if service is not None and e.table is not None:
            _write_sweep(service, e.table)
        raise
    if service is not None:
        _write_sweep(service, table)
    return table


def _write_sweep(service: ReportService, table: SweepTable):
    service.write_csv('sweep.csv', DataProcessor().sweep_frame(table))
    service.write_json('sweep.json', {'table': table, 'argmax_beta': table.argmax_beta,
                                      'all_below_optimum': table.all_below_optimum,
                                      'maximal_at_optimum': table.maximal_at_optimum,
                                      'passed': table.passed,
                                      'beta_star': table.beta_star})

#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
阈值收获策略模拟服务
全截断 Euler 格式 + 投影反射，估计期望与路径型长期平均收益
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from harvest import ConfigError, SimulationError, SuboptimalityError
from harvest.models import (DtCalibration, ModelSpec, MomentReport, OccupationReport, PathAccumulators,
                            QuadratureConfig, SimConfig, SimResult, SweepRow, SweepTable)
from harvest.services.scale_speed import ScaleSpeed
from harvest.utils.data_processor import DataProcessor

VALIDATOR_QUADRATURE = QuadratureConfig(epsabs=1e-10, epsrel=1e-8)


def path_generator(seed: int, index: int) -> np.random.Generator:
    """路径 index 的独立随机流，由 (seed, index) 派生，与线程数无关"""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


class _PathBatch:
    """一批路径的向量化模拟

    批次组成只由路径下标决定，因此并行与串行结果逐位一致。
    """

    def __init__(self, model: ModelSpec, cfg: SimConfig, indices: Sequence[int], pair_noise: bool = False):
        self.model = model
        self.cfg = cfg
        self.indices = list(indices)
        self.pair_noise = pair_noise

    def _streams(self):
        cfg = self.cfg
        streams, signs = [], []
        for idx in self.indices:
            if cfg.common_seed:
                stream, sign = 0, 1.0
            elif cfg.antithetic:
                stream, sign = idx // 2, (1.0 if idx % 2 == 0 else -1.0)
            else:
                stream, sign = idx, 1.0
            streams.append(path_generator(cfg.seed, stream))
            signs.append(sign)
        return streams, np.array(signs)

    def _noise(self, streams, signs, n: int) -> np.ndarray:
        if self.pair_noise:
            # 两个细步长增量之和，与 dt/2 的模拟共用随机数
            raw = np.stack([g.standard_normal(2 * n) for g in streams])
            draws = (raw[:, 0::2] + raw[:, 1::2]) / math.sqrt(2.0)
        else:
            draws = np.stack([g.standard_normal(n) for g in streams])
        return draws * signs[:, None]

    def run(self) -> Dict[str, np.ndarray]:
        cfg, model = self.cfg, self.model
        size = len(self.indices)
        beta = cfg.threshold
        controlled = math.isfinite(beta)
        dt = cfg.dt
        sqrt_dt = math.sqrt(dt)
        n_steps = cfg.n_steps
        burn_steps = int(round(cfg.effective_burn_in * n_steps))
        kept_steps = n_steps - burn_steps
        t_eff = kept_steps * dt
        window_steps = max(1, kept_steps // cfg.n_windows)
        upper = cfg.histogram_upper if cfg.histogram_upper is not None else beta
        moment_exponent = cfg.moment_exponent if cfg.moment_exponent is not None else model.growth_exponent

        streams, signs = self._streams()
        x = np.full(size, float(cfg.x0))
        impulse = np.zeros(size)
        if controlled:
            impulse = np.maximum(x - beta, 0.0)
            x = np.minimum(x, beta)

        payoff_total = np.zeros(size)
        harvest_total = np.zeros(size)
        moment_total = np.zeros(size)
        floor_events = np.zeros(size, dtype=np.int64)
        max_state = np.full(size, -np.inf)
        # ζ 的累计值，含初始冲量与预烧期
        zeta = impulse.copy()
        monotone = np.ones(size, dtype=bool)
        counts = np.zeros(cfg.n_bins, dtype=np.int64)
        window_payoff = np.zeros((size, cfg.n_windows))
        window_harvest = np.zeros((size, cfg.n_windows))
        if burn_steps == 0:
            harvest_total += impulse

        step = 0
        while step < n_steps:
            block = min(cfg.block_steps, n_steps - step)
            noise = self._noise(streams, signs, block)
            states = np.empty((size, block))
            harvests = np.zeros((size, block))
            for j in range(block):
                x_eff = np.maximum(x, cfg.floor)
                states[:, j] = x_eff
                proposal = x + model.drift(x_eff) * dt + model.vol(x_eff) * sqrt_dt * noise[:, j]
                floor_events += proposal <= 0.0
                if controlled:
                    overflow = np.maximum(proposal - beta, 0.0)
                    harvests[:, j] = overflow
                    proposal = proposal - overflow
                    # NaN 比较为假，数值崩溃也记为非单调
                    advanced = zeta + overflow
                    monotone &= advanced >= zeta
                    zeta = advanced
                x = proposal

            keep_from = max(0, burn_steps - step)
            if keep_from < block:
                kept = states[:, keep_from:]
                payoff = np.asarray(model.payoff(kept), dtype=float) * dt
                payoff_total += payoff.sum(axis=1)
                harvest_total += harvests[:, keep_from:].sum(axis=1)
                moment_total += np.power(kept, moment_exponent).sum(axis=1) * dt
                max_state = np.maximum(max_state, np.max(kept, axis=1))
                counts += DataProcessor.histogram_counts(kept, cfg.n_bins, upper)
                # 窗口归属按保留区间内的步序号划分
                offsets = np.arange(step + keep_from, step + block) - burn_steps
                windows = np.minimum(offsets // window_steps, cfg.n_windows - 1)
                for w in np.unique(windows):
                    mask = windows == w
                    window_payoff[:, w] += payoff[:, mask].sum(axis=1)
                    window_harvest[:, w] += harvests[:, keep_from:][:, mask].sum(axis=1)
            step += block

        window_lengths = np.bincount(
            np.minimum(np.arange(kept_steps) // window_steps, cfg.n_windows - 1),
            minlength=cfg.n_windows) * dt
        estimate = (payoff_total + model.price * harvest_total) / t_eff
        window_averages = (window_payoff + model.price * window_harvest) / np.where(window_lengths > 0,
                                                                                    window_lengths, np.nan)
        return {
            'payoff_integral': payoff_total,
            'harvest_total': harvest_total,
            'initial_harvest': impulse,
            'terminal_state': x,
            'estimate': estimate,
            'harvest_rate': harvest_total / t_eff,
            'window_averages': window_averages,
            'floor_events': floor_events,
            'max_state': max_state,
            'monotone': monotone,
            'moment_average': moment_total / t_eff,
            'counts': counts,
        }


def _check_floor(cfg: SimConfig, floor_events: int, n_paths: int):
    fraction = floor_events / float(cfg.n_steps * n_paths)
    if floor_events:
        logger.warning(f"状态非正事件 {floor_events} 次，占比 {fraction:.3e}")
    if fraction > cfg.max_floor_fraction:
        raise SimulationError(
            f"状态非正事件占比 {fraction:.3e} 超过上限 {cfg.max_floor_fraction:g}，请减小 dt (当前 {cfg.dt:g})")


def simulate_path(model: ModelSpec, cfg: SimConfig, path_index: int = 0) -> PathAccumulators:
    """模拟单条路径，随机流由 (cfg.seed, path_index) 确定

    Args:
        model: 模型
        cfg: 模拟配置
        path_index: 路径下标

    Returns:
        PathAccumulators
    """
    cfg.validate()
    out = _PathBatch(model, cfg, [path_index]).run()
    _check_floor(cfg, int(out['floor_events'][0]), 1)
    return PathAccumulators(
        payoff_integral=float(out['payoff_integral'][0]),
        harvest_total=float(out['harvest_total'][0]),
        initial_harvest=float(out['initial_harvest'][0]),
        terminal_state=float(out['terminal_state'][0]),
        estimate=float(out['estimate'][0]),
        window_averages=out['window_averages'][0].tolist(),
        floor_events=int(out['floor_events'][0]),
        max_state=float(out['max_state'][0]),
        harvest_monotone=bool(out['monotone'][0]),
        moment_average=float(out['moment_average'][0]),
    )


def _run_paths(model: ModelSpec, cfg: SimConfig, pair_noise: bool = False) -> Dict[str, np.ndarray]:
    """按固定批次运行全部路径，按下标顺序合并"""
    cfg.validate()
    n_paths = int(cfg.n_paths)
    batches = [list(range(start, min(start + cfg.batch_size, n_paths)))
               for start in range(0, n_paths, cfg.batch_size)]
    logger.debug(f"模拟 {n_paths} 条路径，{len(batches)} 批，线程数 {cfg.workers}")

    if cfg.workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            futures = [executor.submit(_PathBatch(model, cfg, batch, pair_noise).run) for batch in batches]
            outputs = [future.result() for future in futures]
    else:
        outputs = [_PathBatch(model, cfg, batch, pair_noise).run() for batch in batches]

    merged = {}
    for key in outputs[0]:
        if key == 'counts':
            merged[key] = np.sum([o[key] for o in outputs], axis=0)
        else:
            merged[key] = np.concatenate([o[key] for o in outputs], axis=0)
    _check_floor(cfg, int(merged['floor_events'].sum()), n_paths)
    broken = np.flatnonzero(~merged['monotone'])
    if broken.size:
        raise SimulationError(f"累计收获 ζ 出现下降或非数值，路径下标: {broken[:10].tolist()}，请减小 dt")
    return merged


def _result(cfg: SimConfig, out: Dict[str, np.ndarray], mode: str, c_dt: float = 0.0) -> SimResult:
    processor = DataProcessor()
    values = out['estimate']
    stats = processor.sample_statistics(values)
    trace, band = processor.running_trace(out['window_averages'])
    upper = cfg.histogram_upper if cfg.histogram_upper is not None else cfg.threshold
    edges = np.linspace(0.0, upper, cfg.n_bins + 1)
    mass = processor.normalized_mass(out['counts'])
    return SimResult(
        threshold=cfg.threshold,
        mean=stats['mean'],
        stderr=stats['stderr'],
        per_path_values=values.tolist(),
        per_path_harvest_rates=out['harvest_rate'].tolist(),
        harvest_rate=float(np.mean(out['harvest_rate'])),
        histogram_edges=edges.tolist(),
        histogram_mass=mass.tolist(),
        trace=trace,
        fluctuation_band=band,
        floor_events=int(out['floor_events'].sum()),
        moment_average=float(np.mean(out['moment_average'])),
        mode=mode,
        c_dt=c_dt,
        config={k: v for k, v in cfg.to_dict().items() if k != 'workers'},
    )


def estimate_expected(model: ModelSpec, cfg: SimConfig, c_dt: float = 0.0) -> SimResult:
    """N 条独立路径的时间平均收益的均值与标准误"""
    out = _run_paths(model, cfg)
    result = _result(cfg, out, 'expected', c_dt)
    logger.info(f"期望准则估计: β={cfg.threshold:.8g}, 估计={result.mean:.8g} ± {result.stderr:.2e} "
                f"(N={cfg.n_paths}, T={cfg.horizon:g}, dt={cfg.dt:g})")
    return result


def estimate_pathwise(model: ModelSpec, cfg: SimConfig, c_dt: float = 0.0) -> SimResult:
    """单条长路径的运行平均，带窗口轨迹与批均值波动带"""
    if cfg.n_paths != 1:
        logger.warning(f"路径型准则只使用单条路径，忽略 n_paths={cfg.n_paths}")
        cfg = replace(cfg, n_paths=1)
    out = _run_paths(model, cfg)
    result = _result(cfg, out, 'pathwise', c_dt)
    logger.info(f"路径型准则估计: β={cfg.threshold:.8g}, 估计={result.mean:.8g}, "
                f"波动带={result.fluctuation_band:.2e} (T={cfg.horizon:g})")
    return result


def calibrate_dt(model: ModelSpec, cfg: SimConfig) -> DtCalibration:
    """dt 与 dt/2 共用随机数各跑一次，C_dt = |Δ| / (√dt - √(dt/2))"""
    fine_cfg = replace(cfg, dt=cfg.dt / 2.0, block_steps=2 * cfg.block_steps)
    coarse = _result(cfg, _run_paths(model, cfg, pair_noise=True), 'expected')
    fine = _result(fine_cfg, _run_paths(model, fine_cfg), 'expected')
    c_dt = abs(coarse.mean - fine.mean) / (math.sqrt(cfg.dt) - math.sqrt(cfg.dt / 2.0))
    logger.info(f"离散化常数: C_dt={c_dt:.4g} (dt={cfg.dt:g}, 粗={coarse.mean:.8g}, 细={fine.mean:.8g})")
    return DtCalibration(dt=cfg.dt, coarse=coarse.mean, fine=fine.mean, c_dt=c_dt)


def occupation_check(model: ModelSpec, cfg: SimConfig, result: SimResult,
                     tolerance: float = 0.05) -> OccupationReport:
    """经验占位测度的 CDF 与 m_β(]0,x[)/m_β(]0,β[) 的上确界距离"""
    if not result.histogram_mass:
        raise ConfigError("模拟结果缺少占位直方图", field='histogram')
    beta = cfg.threshold
    edges = np.asarray(result.histogram_edges, dtype=float)
    empirical = np.cumsum(result.histogram_mass)
    ss = ScaleSpeed(model, beta, VALIDATOR_QUADRATURE)
    ss = ss.rebased(ss.peak_anchor(beta))
    masses = ss.speed_mass_grid(edges[1:])
    speed_cdf = masses / masses[-1]
    distance = float(np.max(np.abs(empirical - speed_cdf)))
    logger.info(f"占位测度检验: 上确界距离={distance:.4f} (容差 {tolerance:g})")
    return OccupationReport(
        threshold=beta,
        cdf_distance=distance,
        tolerance=tolerance,
        passed=distance <= tolerance,
        edges=edges.tolist(),
        empirical_cdf=empirical.tolist(),
        speed_cdf=speed_cdf.tolist(),
    )


def moment_check(model: ModelSpec, cfg: SimConfig, result: SimResult,
                 tolerance: float = 0.05) -> MomentReport:
    """无控制过程 X^k 的长期平均与 ∫s^k dm / m(]0,∞[) 比较"""
    exponent = cfg.moment_exponent if cfg.moment_exponent is not None else model.growth_exponent
    ss = ScaleSpeed(model, cfg.x0, VALIDATOR_QUADRATURE)
    numerator = ss.speed_integral(lambda s: s ** exponent, 0.0, math.inf)
    denominator = ss.speed_mass(0.0, math.inf)
    if not (numerator.converged and denominator.converged):
        raise SimulationError("平稳矩的解析值积分不收敛，模型可能不满足遍历性条件")
    analytic = numerator.value / denominator.value
    relative = abs(result.moment_average - analytic) / abs(analytic)
    return MomentReport(exponent=exponent, simulated=result.moment_average, analytic=analytic,
                        relative_error=relative, tolerance=tolerance, passed=relative <= tolerance)


def threshold_sweep(model: ModelSpec, base_cfg: SimConfig, betas: Sequence[float],
                    lambda_star: Optional[float] = None, c_dt: float = 0.0, n_stderr: float = 3.0,
                    pathwise_ok: bool = True, beta_star: Optional[float] = None) -> SweepTable:
    """阈值扫描：每个 β 的蒙特卡洛估计与 Λ(β)

    Args:
        model: 模型
        base_cfg: 基础模拟配置，threshold 与 x0 按 β 替换
        betas: β 网格
        lambda_star: 最优收益率，给定时检查次优性
        c_dt: 离散化常数
        n_stderr: 标准误倍数
        pathwise_ok: 路径型假设是否成立，不成立时断言降级为告警
        beta_star: 最优阈值，给定时检查估计在 β* 处最大

    Returns:
        SweepTable

    Raises:
        SuboptimalityError: pathwise_ok 为真且某行超过 λ* + 容差，或最大值不在 β* 处
    """
    from harvest.services.free_boundary import big_lambda

    betas = [float(b) for b in betas]
    if not betas:
        raise ConfigError("β 网格为空", field='beta_grid')
    if any(not (b > 0 and math.isfinite(b)) for b in betas):
        raise ConfigError(f"β 网格必须位于 (0, ∞): {betas}", field='beta_grid')

    table = SweepTable(lambda_star=lambda_star, c_dt=c_dt, beta_star=beta_star)
    for beta in betas:
        cfg = replace(base_cfg, threshold=beta, x0=beta)
        result = estimate_expected(model, cfg, c_dt)
        oracle = big_lambda(model, beta)
        tolerance = result.tolerance(cfg.dt, n_stderr)
        row = SweepRow(
            beta=beta,
            estimate=result.mean,
            stderr=result.stderr,
            oracle=oracle,
            tolerance=tolerance,
            matches_oracle=abs(result.mean - oracle) <= tolerance,
            below_optimum=True if lambda_star is None else result.mean <= lambda_star + tolerance,
        )
        table.rows.append(row)
        if not row.below_optimum:
            table.warnings.append(f"β={beta:.6g} 的估计 {row.estimate:.8g} 超过 λ* + 容差 {tolerance:.3g}")
    if not table.maximal_at_optimum:
        table.warnings.append(f"最大估计位于 β={table.argmax_beta:.6g}，不在 β*={beta_star:.6g} 处")
    logger.info(f"阈值扫描完成: {len(table.rows)} 个 β，最大估计位于 β={table.argmax_beta:.6g}")

    if table.warnings:
        if pathwise_ok:
            for message in table.warnings:
                logger.error(message)
            raise SuboptimalityError(f"阈值扫描未通过次优性检查: {'; '.join(table.warnings)}", table=table)
        for message in table.warnings:
            logger.warning(message + "（路径型假设不成立，仅告警）")
    return table

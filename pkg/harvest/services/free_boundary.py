#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
自由边界求解服务
求解 (β*, λ*)，构造 HJB 解的梯度 w'，并逐项验证 HJB 方程
"""

import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import brentq

from harvest import AmbiguityError, DomainError, QuadratureError, SolverError
from harvest.models import (CriticalPoints, HjbCheck, HjbGridConfig, HjbReport, ModelSpec,
                            QuadratureConfig, SolverConfig, ThresholdSolution)
from harvest.services.model_service import rho_lower, rho_upper
from harvest.services.scale_speed import ScaleSpeed
from harvest.utils.numerics import aitken, sign_change_indices

# 有限差分与 w' 求值使用的紧容差
TIGHT_QUADRATURE = QuadratureConfig(epsabs=1e-13, epsrel=1e-12)


def _require(integral, what: str):
    if not integral.converged:
        raise QuadratureError(f"{what} 积分不收敛", integral.diagnostics)
    return integral.value


def _speed_moments(model: ModelSpec, beta: float, quadrature: QuadratureConfig) -> Dict[str, float]:
    """以速度密度峰值为锚点计算 ∫(Kb+h)dm 与 m(]0,β[)，并给出换回锚点 β 的对数因子"""
    if not beta > 0 or not math.isfinite(beta):
        raise DomainError(f"β 必须为正有限数: {beta}")
    ss = ScaleSpeed(model, beta, quadrature)
    anchor = ss.peak_anchor(beta)
    stable = ss.rebased(anchor)
    mass = stable.speed_mass(0.0, beta)
    if not mass.converged or not mass.value > 0:
        raise DomainError(
            f"速度测度 m_β(]0,β[) 非有限正数 (需 m_β(]0,1[) < ∞): β={beta}", )
    level = _require(stable.speed_integral(model.level, 0.0, beta), 'Kb+h 关于速度测度')
    return {
        'level_integral': level,
        'mass': mass.value,
        # m_β = p'_a(β)·m_a
        'log_factor': stable.log_scale_exponent(beta),
        'anchor': anchor,
    }


def theta(model: ModelSpec, beta: float, lam: float,
          quadrature: Optional[QuadratureConfig] = None) -> float:
    """Θ(β,λ) = ∫_0^β [Kb(s)+h(s)-λ] m_β(ds)"""
    moments = _speed_moments(model, beta, quadrature or QuadratureConfig())
    return math.exp(moments['log_factor']) * (moments['level_integral'] - lam * moments['mass'])


def speed_mass_below(model: ModelSpec, beta: float,
                     quadrature: Optional[QuadratureConfig] = None) -> float:
    """m_β(]0,β[)"""
    moments = _speed_moments(model, beta, quadrature or QuadratureConfig())
    return math.exp(moments['log_factor']) * moments['mass']


def big_lambda(model: ModelSpec, beta: float, quadrature: Optional[QuadratureConfig] = None) -> float:
    """Λ(β)：Kb+h 在 (0,β) 上关于 m_β 的平均，与锚点无关"""
    moments = _speed_moments(model, beta, quadrature or QuadratureConfig())
    return moments['level_integral'] / moments['mass']


def big_lambda_derivative(model: ModelSpec, beta: float,
                          quadrature: Optional[QuadratureConfig] = None) -> float:
    """Λ'(β) = 2[Kb(β)+h(β)-Λ(β)] / (σ²(β) m_β(]0,β[))"""
    moments = _speed_moments(model, beta, quadrature or QuadratureConfig())
    lam = moments['level_integral'] / moments['mass']
    mass = math.exp(moments['log_factor']) * moments['mass']
    return 2.0 * (float(model.level(beta)) - lam) / (float(model.vol(beta)) ** 2 * mass)


def theta_derivative(model: ModelSpec, beta: float, lam: float, step: Optional[float] = None,
                     quadrature: Optional[QuadratureConfig] = None) -> float:
    """∂_βΘ 的中心差分，步长缺省 1e-5·β"""
    h = step if step is not None else 1e-5 * beta
    quadrature = quadrature or TIGHT_QUADRATURE
    return (theta(model, beta + h, lam, quadrature) - theta(model, beta - h, lam, quadrature)) / (2.0 * h)


def theta_ode_residual(model: ModelSpec, beta: float, lam: float, step: Optional[float] = None,
                       quadrature: Optional[QuadratureConfig] = None) -> float:
    """½σ²(β)∂_βΘ + b(β)Θ - [Kb(β)+h(β)-λ]"""
    quadrature = quadrature or TIGHT_QUADRATURE
    d_theta = theta_derivative(model, beta, lam, step, quadrature)
    value = theta(model, beta, lam, quadrature)
    return (0.5 * float(model.vol(beta)) ** 2 * d_theta + float(model.drift(beta)) * value
            - (float(model.level(beta)) - lam))


class _FixedPoint:
    """g(β) = β - ϱ(Λ(β)) 及其求值轨迹"""

    def __init__(self, model: ModelSpec, cp: CriticalPoints, quadrature: QuadratureConfig):
        self.model = model
        self.cp = cp
        self.quadrature = quadrature
        self.trace: List[Tuple[float, float]] = []

    def big_lambda(self, beta: float) -> float:
        lam = big_lambda(self.model, beta, self.quadrature)
        if not self.cp.lambda_under < lam < self.cp.lambda_bar:
            raise DomainError(f"Λ(β) 越出 (λ_under, λ̄): β={beta}, Λ={lam}, 轨迹={self.trace}")
        return lam

    def __call__(self, beta: float) -> float:
        value = beta - rho_upper(self.model, self.cp, self.big_lambda(beta))
        self.trace.append((beta, value))
        logger.debug(f"g({beta:.12g}) = {value:.6e}")
        return value


def solve_threshold(model: ModelSpec, cp: CriticalPoints,
                    cfg: Optional[SolverConfig] = None) -> ThresholdSolution:
    """求解最优阈值 β* 与最优收益率 λ*

    Args:
        model: 模型
        cp: 关键点
        cfg: 求解器配置

    Returns:
        ThresholdSolution
    """
    cfg = cfg or SolverConfig()
    g = _FixedPoint(model, cp, cfg.quadrature)
    logger.info(f"开始求解自由边界: {model.name}, ξ={cp.xi:.10g}")

    lo = cp.xi
    g_lo = g(lo)
    if not g_lo < 0:
        raise SolverError(f"g(ξ) 应为负: g({lo})={g_lo}", g.trace)

    cap = cfg.max_expansion * cp.xi
    # 初始右端点：K·b+h 首次低于 Λ(ξ) 的位置
    hi = rho_upper(model, cp, g.big_lambda(lo))
    if hi <= lo:
        hi = 2.0 * lo
    bracket_history = [(lo, hi)]
    g_hi = g(hi)
    while not g_hi > 0:
        if g_hi == 0:
            break
        lo, g_lo = hi, g_hi
        hi = 2.0 * hi
        if hi > cap:
            logger.error(f"区间扩张超过 {cfg.max_expansion:g}·ξ 仍未找到不动点")
            raise SolverError("未找到不动点: 区间扩张耗尽", g.trace)
        bracket_history.append((lo, hi))
        g_hi = g(hi)

    # 在区间内扫描，多个变号时拒绝选择
    scan = np.geomspace(bracket_history[0][0], hi, cfg.scan_points + 2)
    for b in scan[1:-1]:
        g(float(b))
    trace_sorted = sorted(g.trace)
    changes = sign_change_indices([v for _, v in trace_sorted])
    if len(changes) > 1:
        candidates = [(trace_sorted[i][0], trace_sorted[i + 1][0]) for i in changes]
        logger.error(f"g 在区间内多次变号: {candidates}")
        raise AmbiguityError("不动点方程存在多个候选根", candidates)
    if changes:
        i = changes[0]
        lo, hi = trace_sorted[i][0], trace_sorted[i + 1][0]

    beta_star = hi if g_hi == 0 else brentq(g, lo, hi, xtol=cfg.root_tol, rtol=4 * np.finfo(float).eps,
                                             maxiter=200)
    lambda_star = big_lambda(model, beta_star, cfg.quadrature)

    if not beta_star > cp.xi:
        raise SolverError(f"β* 必须大于 ξ: β*={beta_star}, ξ={cp.xi}", g.trace)
    if not cp.level_at_zero < lambda_star < cp.lambda_bar:
        raise SolverError(f"λ* 越界: K·b(0)+h(0)={cp.level_at_zero}, λ*={lambda_star}, λ̄={cp.lambda_bar}",
                          g.trace)

    theta_residual = abs(theta(model, beta_star, lambda_star, cfg.quadrature))
    level_residual = abs(float(model.level(beta_star)) - lambda_star)
    fixed_point_residual = abs(beta_star - rho_upper(model, cp, lambda_star))
    mass = speed_mass_below(model, beta_star, cfg.quadrature)
    derivative = big_lambda_derivative(model, beta_star, cfg.quadrature)

    # Λ'(β*) = 0，故 g'(β*) = 1 - ϱ'(λ*)·Λ'(β*) = 1
    delta = 1e-6 * beta_star
    slope = (g(beta_star + delta) - g(beta_star - delta)) / (2.0 * delta)
    slope_gap = abs(slope - 1.0)
    if not slope_gap <= cfg.slope_tol:
        logger.warning(f"g 在 β* 处的斜率 {slope:.8g} 偏离 1 达 {slope_gap:.3e}，超过 {cfg.slope_tol:g}")

    for name, value in (('Θ', theta_residual), ('K·b+h-λ', level_residual),
                        ('β-ϱ(Λ(β))', fixed_point_residual)):
        if value > cfg.residual_tol:
            logger.error(f"残差 {name} = {value:.3e} 超过容差 {cfg.residual_tol:g}")
            raise SolverError(f"残差 {name} 超过容差: {value:.3e}", g.trace)

    solution = ThresholdSolution(
        beta_star=beta_star,
        lambda_star=lambda_star,
        critical_points=cp,
        model=model.to_dict(),
        theta_residual=theta_residual,
        level_residual=level_residual,
        fixed_point_residual=fixed_point_residual,
        speed_mass=mass,
        lambda_derivative=derivative,
        g_slope=slope,
        g_slope_gap=slope_gap,
        bracket_history=bracket_history,
        tolerances={'root_tol': cfg.root_tol, 'residual_tol': cfg.residual_tol, 'slope_tol': cfg.slope_tol,
                    'quadrature_epsabs': cfg.quadrature.epsabs, 'quadrature_epsrel': cfg.quadrature.epsrel},
    )
    if cfg.newton_check:
        solution.newton_check = newton_cross_check(model, solution, cfg.quadrature)
    logger.info(f"求解完成: β*={beta_star:.12g}, λ*={lambda_star:.12g}, "
                f"|Θ|={theta_residual:.2e}, |Kb+h-λ|={level_residual:.2e}")
    return solution


def newton_cross_check(model: ModelSpec, solution: ThresholdSolution,
                       quadrature: Optional[QuadratureConfig] = None, start_offset: float = 1e-2,
                       max_iter: int = 30, tol: float = 1e-11) -> Dict[str, Any]:
    """在 (Θ, Kb+h-λ) 上做二维牛顿迭代，作为区间法结果的交叉核对

    Jacobian 用 Θ 的常微分方程给出 ∂_βΘ，∂_λΘ = -m_β(]0,β[)。
    """
    quadrature = quadrature or QuadratureConfig()
    beta = solution.beta_star * (1.0 + start_offset)
    lam = float(model.level(beta))
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        try:
            moments = _speed_moments(model, beta, quadrature)
        except DomainError:
            break
        factor = math.exp(moments['log_factor'])
        f1 = factor * (moments['level_integral'] - lam * moments['mass'])
        f2 = float(model.level(beta)) - lam
        mass = factor * moments['mass']
        d_theta_beta = 2.0 * (float(model.level(beta)) - lam - float(model.drift(beta)) * f1) / float(model.vol(beta)) ** 2
        jacobian = np.array([[d_theta_beta, -mass],
                             [float(model.level_deriv(beta)), -1.0]])
        try:
            step = np.linalg.solve(jacobian, -np.array([f1, f2]))
        except np.linalg.LinAlgError:
            break
        beta_next = beta + float(step[0])
        if not beta_next > 0:
            beta_next = 0.5 * beta
        lam += float(step[1])
        change = abs(beta_next - beta)
        beta = beta_next
        if change <= tol * max(1.0, beta):
            converged = True
            break
    result = {
        'beta': beta,
        'lambda': lam,
        'iterations': iterations,
        'converged': converged,
        'beta_gap': abs(beta - solution.beta_star),
        'lambda_gap': abs(lam - solution.lambda_star),
    }
    logger.debug(f"牛顿交叉核对: {result}")
    return result


class ValueGradient:
    """HJB 解的梯度 w'

    在 (0, ρ(λ*)] 上用零边界表示 w'(x) = K - ∫_0^x [Kb+h-λ*] dm_x，
    在 (ρ(λ*), β*] 上用 w'(x) = K + ∫_x^{β*} [Kb+h-λ*] dm_x，β* 以上恒为 K。
    以 x 为速度测度锚点相当于在对数空间中合并 p'_{β*}(x) 与积分。
    """

    def __init__(self, model: ModelSpec, solution: ThresholdSolution,
                 quadrature: Optional[QuadratureConfig] = None):
        self.model = model
        self.solution = solution
        self.beta_star = solution.beta_star
        self.lambda_star = solution.lambda_star
        self.price = model.price
        self.quadrature = quadrature or TIGHT_QUADRATURE
        cp = solution.critical_points
        if cp.level_at_zero < self.lambda_star < cp.lambda_bar:
            self.switch_point = rho_lower(model, cp, self.lambda_star)
        else:
            self.switch_point = None

    def _excess(self, x: float) -> float:
        return float(self.model.level(x)) - self.lambda_star

    def gradient_upper(self, x: float) -> float:
        if x >= self.beta_star:
            return self.price
        ss = ScaleSpeed(self.model, x, self.quadrature)
        return self.price + _require(ss.speed_integral(self._excess, x, self.beta_star), "w' 上表示")

    def gradient_lower(self, x: float) -> float:
        ss = ScaleSpeed(self.model, x, self.quadrature)
        return self.price - _require(ss.speed_integral(self._excess, 0.0, x), "w' 零边界表示")

    def gradient(self, x: float) -> float:
        """w'(x)"""
        if not x > 0:
            raise DomainError(f"w' 仅在 x > 0 上有定义: x={x}")
        if x >= self.beta_star:
            return self.price
        if self.switch_point is not None and x <= self.switch_point:
            return self.gradient_lower(x)
        return self.gradient_upper(x)

    __call__ = gradient

    def second_derivative(self, x: float) -> float:
        """w''(x) = 2[λ* - h(x) - b(x)w'(x)]/σ²(x)，β* 以上为 0"""
        if not x > 0:
            raise DomainError(f"w'' 仅在 x > 0 上有定义: x={x}")
        if x > self.beta_star:
            return 0.0
        w1 = self.gradient(x)
        return 2.0 * (self.lambda_star - float(self.model.payoff(x)) - float(self.model.drift(x)) * w1) \
            / float(self.model.vol(x)) ** 2

    def second_derivative_fd(self, x: float, relative_step: float = 1e-4) -> float:
        """w'' 的中心差分，与常微分方程独立"""
        h = relative_step * x
        return (self.gradient(x + h) - self.gradient(x - h)) / (2.0 * h)

    def ode_residual(self, x: float, relative_step: float = 1e-4) -> float:
        """½σ²w'' + b w' + h - λ*，w'' 取差分值"""
        return (0.5 * float(self.model.vol(x)) ** 2 * self.second_derivative_fd(x, relative_step)
                + float(self.model.drift(x)) * self.gradient(x) + float(self.model.payoff(x))
                - self.lambda_star)

    def representation_gap(self) -> float:
        """两种表示在切换点处的差"""
        if self.switch_point is None:
            return 0.0
        x = self.switch_point
        return abs(self.gradient_lower(x) - self.gradient_upper(x))

    def limit_at_zero(self, first: int = 20, last: int = 30, rtol: float = 1e-6) -> Dict[str, Any]:
        """w'(0+)：几何探测点 β*·2^-j 上的 Aitken 外推

        b(0) = 0 时极限 (λ*-h(0))/b(0) 无定义，返回不适用。
        """
        limits = self.model.limits
        b0 = limits.drift_at_zero
        h0 = limits.payoff_at_zero
        if b0 is None or h0 is None:
            return {'applicable': False, 'reason': 'b(0) 或 h(0) 无解析极限'}
        if b0 == 0:
            return {'applicable': False, 'reason': 'b(0) = 0'}
        xs = [self.beta_star * 2.0 ** -j for j in range(first, last + 1)]
        values = [self.gradient(x) for x in xs]
        extrapolated = aitken(*values[-3:])
        previous = aitken(*values[-4:-1])
        target = (self.lambda_star - h0) / b0
        return {
            'applicable': True,
            'value': extrapolated,
            'target': target,
            'error': abs(extrapolated - target),
            'consistent': abs(extrapolated - previous) <= rtol * max(1.0, abs(extrapolated)),
            'samples': values[-3:],
        }


def value_gradient(model: ModelSpec, sol: ThresholdSolution,
                   quadrature: Optional[QuadratureConfig] = None) -> ValueGradient:
    """由求解结果构造 w'"""
    return ValueGradient(model, sol, quadrature)


def verify_hjb(model: ModelSpec, sol: ThresholdSolution, vg: Optional[ValueGradient] = None,
               grid: Optional[HjbGridConfig] = None) -> HjbReport:
    """在对数网格上验证 HJB 方程的各分支

    Args:
        model: 模型
        sol: 求解结果
        vg: 梯度，缺省由 sol 构造
        grid: 网格与容差

    Returns:
        HjbReport
    """
    grid = grid or HjbGridConfig()
    vg = vg or ValueGradient(model, sol)
    beta, lam = sol.beta_star, sol.lambda_star
    inner = np.geomspace(grid.lower_factor * beta, beta * (1.0 - grid.upper_gap), grid.points)
    outer = np.geomspace(beta * (1.0 + grid.upper_gap), grid.horizon * beta, grid.points)
    report = HjbReport(beta_star=beta, lambda_star=lam, grid=inner.tolist())
    logger.info(f"开始验证 HJB: β*={beta:.10g}, λ*={lam:.10g}, 网格点数={grid.points}")

    gradients = np.array([vg.gradient(float(x)) for x in inner])

    # (i) 常微分方程分支，含两种表示在切换点的差
    residuals = np.array([abs(vg.ode_residual(float(x), grid.fd_relative_step)) for x in inner])
    gap = vg.representation_gap()
    ode_value = float(max(np.max(residuals), gap))
    report.checks.append(HjbCheck('ode_branch', ode_value, grid.ode_tol, ode_value <= grid.ode_tol,
                                  detail=f"最大残差位于 x={inner[int(np.argmax(residuals))]:.6g}, 表示差={gap:.3e}"))

    # (ii) 梯度约束 w' ≥ K
    slack = float(np.min(gradients - model.price))
    report.checks.append(HjbCheck('gradient_constraint', slack, grid.gradient_tol, slack >= -grid.gradient_tol,
                                  detail=f"min(w'-K) 位于 x={inner[int(np.argmin(gradients))]:.6g}"))

    # (iii) 收获区域上 Kb+h-λ* ≤ 0
    excess = float(np.max(np.asarray(model.level(outer), dtype=float) - lam))
    report.checks.append(HjbCheck('drift_branch', excess, grid.drift_tol, excess <= grid.drift_tol,
                                  detail=f"区间 ({beta:.6g}, {grid.horizon * beta:.6g}]"))

    # 光滑粘贴
    near = beta * (1.0 - 1e-8)
    pasting = abs(vg.gradient(near) - model.price)
    report.checks.append(HjbCheck('pasting_gradient', pasting, grid.pasting_tol, pasting <= grid.pasting_tol))
    second = abs(vg.second_derivative(near))
    report.checks.append(HjbCheck('pasting_second', second, grid.second_tol, second <= grid.second_tol))

    # w'(0+) 极限
    limit = vg.limit_at_zero()
    if limit['applicable']:
        tol = grid.limit_tol * max(1.0, abs(limit['target']))
        passed = limit['error'] <= tol and limit['consistent']
        report.checks.append(HjbCheck('limit_at_zero', limit['error'], tol, passed,
                                      detail=f"外推值={limit['value']:.12g}, 目标={limit['target']:.12g}"))
    else:
        logger.warning(f"w'(0+) 检验不适用: {limit['reason']}")
        report.checks.append(HjbCheck('limit_at_zero', math.nan, grid.limit_tol, True, applicable=False,
                                      detail=limit['reason']))

    # C₁ 估计
    report.c1_bound = float(np.max(np.abs(gradients)))
    report.checks.append(HjbCheck('gradient_bounded', report.c1_bound, math.inf,
                                  math.isfinite(report.c1_bound)))

    for check in report.checks:
        if check.applicable and not check.passed:
            logger.warning(f"HJB 检验未通过: {check.name} = {check.value:.3e} (容差 {check.tolerance:g})")
    logger.info(f"HJB 验证{'通过' if report.passed else '未通过'}")
    return report

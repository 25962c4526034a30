#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
尺度函数与速度测度服务
在 u = ln s 坐标下计算 p'_β、速度密度以及关于 m_β 的（广义）积分
"""

import math
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.integrate import quad

from harvest import DomainError, QuadratureError
from harvest.models import ImproperIntegral, ModelSpec, QuadratureConfig

LN2 = math.log(2.0)
# exp 的安全上限
MAX_EXPONENT = 700.0


def _quad_panel(func: Callable[[float], float], a: float, b: float,
                cfg: QuadratureConfig) -> Tuple[float, float, bool, str]:
    """单个面板上的自适应积分，返回 (值, 误差, 是否可信, 信息)"""
    result = quad(func, a, b, epsabs=cfg.epsabs, epsrel=cfg.epsrel,
                  limit=cfg.limit, full_output=1)
    value, abserr = float(result[0]), float(result[1])
    if len(result) > 3:
        # 舍入误差告警在误差估计足够小时仍可接受
        acceptable = abserr <= 1e3 * max(cfg.epsabs, cfg.epsrel * abs(value))
        return value, abserr, acceptable and math.isfinite(value), str(result[3]).split('\n')[0]
    return value, abserr, math.isfinite(value), ''


class ScaleSpeed:
    """以 β 为锚点的尺度函数导数与速度测度

    实例不可变；对数尺度缓存只做幂等写入，可在线程间共享。
    """

    def __init__(self, model: ModelSpec, anchor: float,
                 quadrature: Optional[QuadratureConfig] = None,
                 use_closed_form: bool = True):
        if not anchor > 0 or not math.isfinite(anchor):
            raise DomainError(f"锚点 β 必须为正有限数: {anchor}")
        self.model = model
        self.anchor = float(anchor)
        self.quadrature = quadrature or QuadratureConfig()
        self.use_closed_form = use_closed_form and model.has_closed_scale
        self._log_scale_cache: Dict[float, float] = {self.anchor: 0.0}

    def __repr__(self) -> str:
        return f"ScaleSpeed(model={self.model.name!r}, anchor={self.anchor!r})"

    def rebased(self, anchor: float) -> 'ScaleSpeed':
        """同一模型换锚点"""
        return ScaleSpeed(self.model, anchor, self.quadrature, self.use_closed_form)

    # 尺度函数
    def _drift_ratio_u(self, u: float) -> float:
        x = math.exp(u)
        return 2.0 * float(self.model.drift(x)) / float(self.model.vol(x)) ** 2 * x

    def _segment(self, x_from: float, x_to: float) -> float:
        """-∫_{x_from}^{x_to} 2b/σ² ds，区间在 ln 尺度上不长于一个面板"""
        if x_from == x_to:
            return 0.0
        value, abserr, ok, message = _quad_panel(self._drift_ratio_u, math.log(x_from),
                                                 math.log(x_to), self.quadrature)
        if not ok:
            raise QuadratureError(f"对数尺度积分不收敛: [{x_from}, {x_to}]",
                                  {'value': value, 'abs_error': abserr, 'message': message})
        return -value

    def log_scale_exponent_quadrature(self, x: float) -> float:
        """通用求积得到的 ln p'_β(x)，按 ln2 宽度分段"""
        if not x > 0:
            raise DomainError(f"x 必须为正: {x}")
        cached = self._log_scale_cache.get(x)
        if cached is not None:
            return cached
        u0, u1 = math.log(self.anchor), math.log(x)
        n_panels = max(1, int(math.ceil(abs(u1 - u0) / self.quadrature.panel_width)))
        edges = np.exp(np.linspace(u0, u1, n_panels + 1))
        edges[0], edges[-1] = self.anchor, x
        total = 0.0
        for left, right in zip(edges[:-1], edges[1:]):
            total += self._segment(float(left), float(right))
        self._log_scale_cache[x] = total
        return total

    def log_scale_exponent(self, x: float) -> float:
        """ln p'_β(x) = -∫_β^x 2b(s)/σ²(s) ds，闭式优先"""
        if not x > 0:
            raise DomainError(f"x 必须为正: {x}")
        if x == self.anchor:
            return 0.0
        if self.use_closed_form:
            return float(self.model.closed_log_scale(self.anchor, x))
        return self.log_scale_exponent_quadrature(x)

    def scale_derivative_checked(self, x: float) -> Tuple[float, bool]:
        """p'_β(x) 及溢出标记，溢出时返回 +∞ 或 0"""
        exponent = self.log_scale_exponent(x)
        if exponent > MAX_EXPONENT:
            return math.inf, True
        if exponent < -MAX_EXPONENT:
            return 0.0, True
        return math.exp(exponent), False

    def scale_derivative(self, x: float) -> float:
        return self.scale_derivative_checked(x)[0]

    # 速度测度
    def speed_log_density(self, x: float) -> float:
        """ln[2/(σ²(x) p'_β(x))]"""
        return LN2 - 2.0 * math.log(float(self.model.vol(x))) - self.log_scale_exponent(x)

    def peak_anchor(self, upper: float, points: int = 64, depth: int = 20) -> float:
        """[upper·2^-depth, upper] 上速度密度最大的网格点，用作数值稳定的锚点"""
        grid = np.geomspace(upper * 2.0 ** -depth, upper, points)
        logs = [self.speed_log_density(float(x)) for x in grid]
        return float(grid[int(np.nanargmax(logs))])

    def _panel_function(self, integrand: Optional[Callable[[float], float]], measure: str,
                        x_edge: float, log_scale_edge: float, flags: Dict[str, Any]) -> Callable[[float], float]:
        """u 坐标下的被积函数；无闭式时 ln p' 从面板端点递推"""
        model = self.model

        def log_scale(x: float) -> float:
            if self.use_closed_form:
                return self.log_scale_exponent(x)
            return log_scale_edge + self._segment(x_edge, x)

        def func(u: float) -> float:
            x = math.exp(u)
            if measure == 'speed':
                exponent = LN2 - 2.0 * math.log(float(model.vol(x))) - log_scale(x) + u
            else:
                exponent = log_scale(x) + u
            if exponent > MAX_EXPONENT:
                flags['overflow'] = True
                exponent = MAX_EXPONENT
            weight = math.exp(exponent)
            if integrand is None:
                return weight
            return float(integrand(x)) * weight

        return func

    def _edge_log_scale(self, x: float) -> float:
        if self.use_closed_form:
            return 0.0
        return self.log_scale_exponent_quadrature(x)

    def _finite_part(self, integrand, measure, lower, upper, flags) -> Tuple[float, float, bool, List[str]]:
        cfg = self.quadrature
        u0, u1 = math.log(lower), math.log(upper)
        n_panels = max(1, int(math.ceil((u1 - u0) / cfg.panel_width)))
        edges = np.linspace(u0, u1, n_panels + 1)
        total, error, ok, messages = 0.0, 0.0, True, []
        x_edge = lower
        log_edge = self._edge_log_scale(lower)
        for a, b in zip(edges[:-1], edges[1:]):
            func = self._panel_function(integrand, measure, x_edge, log_edge, flags)
            value, abserr, good, message = _quad_panel(func, float(a), float(b), cfg)
            total += value
            error += abserr
            if not good:
                ok = False
                messages.append(message)
            if not self.use_closed_form:
                next_edge = math.exp(float(b))
                log_edge += self._segment(x_edge, next_edge)
                x_edge = next_edge
        return total, error, ok, messages

    def _tail_part(self, integrand, measure, start: float, direction: int,
                   flags) -> Tuple[float, float, bool, Dict[str, Any]]:
        """从 start 出发向 0（-1）或 ∞（+1）逐面板累加，直至连续 patience 个面板可忽略"""
        cfg = self.quadrature
        width = cfg.panel_width
        u_edge = math.log(start)
        x_edge = start
        log_edge = self._edge_log_scale(start)
        total, abs_sum, error = 0.0, 0.0, 0.0
        contributions: List[float] = []
        small_run = 0
        converged = False
        messages = []
        for _ in range(cfg.max_panels):
            u_next = u_edge + direction * width
            func = self._panel_function(integrand, measure, x_edge, log_edge, flags)
            a, b = (u_edge, u_next) if direction > 0 else (u_next, u_edge)
            value, abserr, good, message = _quad_panel(func, a, b, cfg)
            contribution = value
            if not good:
                messages.append(message)
                break
            total += contribution
            abs_sum += abs(contribution)
            error += abserr
            contributions.append(contribution)
            if abs(contribution) <= cfg.epsabs + cfg.epsrel * abs_sum:
                small_run += 1
            else:
                small_run = 0
            if small_run >= cfg.tail_patience:
                converged = True
                break
            if not self.use_closed_form:
                x_next = math.exp(u_next)
                log_edge += self._segment(x_edge, x_next)
                x_edge = x_next
            u_edge = u_next

        ratio = math.nan
        tail = 0.0
        if len(contributions) >= 2 and contributions[-2] != 0.0:
            ratio = abs(contributions[-1] / contributions[-2])
            if converged and ratio < 1.0:
                tail = contributions[-1] * ratio / (1.0 - ratio)
        diagnostics = {
            'panels': len(contributions),
            'decay_ratio': ratio,
            'decay_rate': -math.log(ratio) / width if ratio and ratio > 0 and math.isfinite(ratio) else math.nan,
            'tail_estimate': tail,
            'converged': converged,
            'messages': messages,
        }
        logger.debug(f"尾部积分 方向={direction:+d} 面板数={len(contributions)} 收敛={converged}")
        return total + tail, error + abs(tail), converged, diagnostics

    def _integrate(self, integrand: Optional[Callable[[float], float]], lower: float, upper: float,
                   measure: str = 'speed') -> ImproperIntegral:
        if not (lower >= 0 and upper > lower):
            raise DomainError(f"积分区间非法: ({lower}, {upper})")
        flags: Dict[str, Any] = {'overflow': False}
        diagnostics: Dict[str, Any] = {}
        value, error, ok = 0.0, 0.0, True

        if lower > 0 and math.isfinite(upper):
            value, error, ok, messages = self._finite_part(integrand, measure, lower, upper, flags)
            diagnostics['messages'] = messages
        else:
            if lower == 0 and math.isfinite(upper):
                pivot = upper
            elif lower > 0:
                pivot = lower
            else:
                pivot = self.anchor
            if lower == 0:
                part, err, good, diag = self._tail_part(integrand, measure, pivot, -1, flags)
                value += part
                error += err
                ok = ok and good
                diagnostics['zero'] = diag
            if not math.isfinite(upper):
                part, err, good, diag = self._tail_part(integrand, measure, pivot, +1, flags)
                value += part
                error += err
                ok = ok and good
                diagnostics['infinity'] = diag

        diagnostics['overflow'] = flags['overflow']
        converged = ok and not flags['overflow'] and math.isfinite(value)
        if not converged:
            logger.debug(f"广义积分未收敛: ({lower}, {upper}) 诊断={diagnostics}")
        return ImproperIntegral(
            value=value,
            abs_error_estimate=error if converged else math.inf,
            converged=converged,
            diagnostics=diagnostics
        )

    def speed_integral(self, integrand: Optional[Callable[[float], float]], lower: float,
                       upper: float) -> ImproperIntegral:
        """∫ integrand(s)·2/(σ²(s)p'_β(s)) ds，integrand 为 None 时积分常数 1

        Args:
            integrand: 被积函数
            lower: 下限（可为 0）
            upper: 上限（可为 ∞）

        Returns:
            ImproperIntegral
        """
        return self._integrate(integrand, lower, upper, measure='speed')

    def speed_mass(self, lower: float, upper: float) -> ImproperIntegral:
        """m_β(]lower, upper[)"""
        return self._integrate(None, lower, upper, measure='speed')

    def speed_mass_grid(self, edges: Iterable[float]) -> np.ndarray:
        """m_β(]0, e[) 在递增网格上的累积值，由相邻增量累加"""
        edges = [float(e) for e in edges]
        masses = []
        running = 0.0
        previous = 0.0
        for edge in edges:
            if edge <= previous:
                masses.append(running)
                continue
            piece = self.speed_mass(previous, edge)
            if not piece.converged:
                raise QuadratureError(f"速度测度不收敛: ({previous}, {edge})", piece.diagnostics)
            running += piece.value
            masses.append(running)
            previous = edge
        return np.array(masses)

    def speed_cdf(self, x: float, upper: Optional[float] = None) -> float:
        """m_β(]0,x[) / m_β(]0,upper[)，upper 缺省为锚点"""
        upper = self.anchor if upper is None else upper
        if not 0 < x:
            return 0.0
        if x >= upper:
            return 1.0
        masses = self.speed_mass_grid([x, upper])
        return float(masses[0] / masses[1])

    def scale_integral(self, lower: float, upper: float) -> ImproperIntegral:
        """∫ p'_β(s) ds"""
        return self._integrate(None, lower, upper, measure='scale')

    def drift_identity_residual(self, x: float) -> float:
        """∫_x^β b dm_β - (1 - 1/p'_β(x))"""
        if not 0 < x <= self.anchor:
            raise DomainError(f"要求 0 < x ≤ β: x={x}, β={self.anchor}")
        if x == self.anchor:
            return 0.0
        integral = self.speed_integral(self.model.drift, x, self.anchor)
        if not integral.converged:
            raise QuadratureError(f"漂移恒等式积分不收敛: x={x}", integral.diagnostics)
        return integral.value - (1.0 - math.exp(-self.log_scale_exponent(x)))

    # 边界探测
    def _scale_limit(self, toward: str, depth: int) -> Dict[str, Any]:
        """按 u 坐标下被积函数 p'(x)·x 在几何探测点上的衰减比判断 ∫p' 是否发散"""
        j = np.arange(1, depth + 1, dtype=float)
        sign = -1.0 if toward == 'zero' else 1.0
        xs = self.anchor * np.power(2.0, sign * j)
        log_g = np.array([self.log_scale_exponent(float(x)) + math.log(float(x)) for x in xs])

        def window_ratio(end: int) -> float:
            with np.errstate(all='ignore'):
                return float(np.exp((log_g[end] - log_g[end - 4]) / 4.0))

        latest = window_ratio(depth - 1)
        previous = window_ratio(depth - 5)
        threshold = 1.0 - 1e-3
        diverges = latest >= threshold
        consistent = (previous >= threshold) == diverges
        estimate = math.inf
        if not diverges:
            lower, upper = (0.0, self.anchor) if toward == 'zero' else (self.anchor, math.inf)
            integral = self.scale_integral(lower, upper)
            estimate = integral.value if integral.converged else math.nan
        return {
            'diverges': bool(diverges),
            'consistent': bool(consistent),
            'decay_ratio': latest,
            'previous_ratio': previous,
            'estimate': estimate,
            'limit_depth': depth,
        }

    def scale_limit_at_zero(self, depth: int = 40) -> Dict[str, Any]:
        """p_β(0+) = -∫_0^β p' 是否为 -∞"""
        return self._scale_limit('zero', depth)

    def scale_limit_at_infinity(self, depth: int = 40) -> Dict[str, Any]:
        """p_β(∞) = ∫_β^∞ p' 是否为 +∞"""
        return self._scale_limit('infinity', depth)

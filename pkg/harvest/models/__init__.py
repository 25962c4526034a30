#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
数据模型模块
定义控制问题实例、求解结果、模拟结果及各类运行配置
"""

import math
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Callable, Dict, List, Optional, Tuple

from harvest import ConfigError

RealFunc = Callable[[Any], Any]


def _from_mapping(cls, data: Optional[Dict[str, Any]], section: str):
    """按字段名从字典构造配置数据类，未知字段视为配置错误"""
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"未知配置项: {', '.join(unknown)}", field=f"{section}.{unknown[0]}")
    return cls(**data)


class BaseModel:
    """基础模型类"""

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return asdict(self)


# 控制问题实例
@dataclass(frozen=True)
class ModelLimits(BaseModel):
    """系数在 0 与 ∞ 处的解析极限，缺省项由数值探测给出"""
    drift_at_zero: Optional[float] = None
    vol_at_zero: Optional[float] = None
    payoff_at_zero: Optional[float] = None
    level_at_infinity: Optional[float] = None


@dataclass(frozen=True)
class ModelSpec(BaseModel):
    """受控扩散与收益函数的系数集合

    drift/vol/payoff 及其导数需同时接受标量与 numpy 数组。
    closed_log_scale(β, x) 给出 ln p'_β(x) 的闭式表达（若有）。
    """
    name: str
    drift: RealFunc
    drift_deriv: RealFunc
    vol: RealFunc
    payoff: RealFunc
    payoff_deriv: RealFunc
    price: float
    growth_exponent: float
    limits: ModelLimits = field(default_factory=ModelLimits)
    closed_log_scale: Optional[Callable[[float, float], float]] = None
    hoelder_half: bool = False
    descriptor: Dict[str, Any] = field(default_factory=dict)

    def level(self, x):
        """K·b(x) + h(x)"""
        return self.price * self.drift(x) + self.payoff(x)

    def level_deriv(self, x):
        """K·b'(x) + h'(x)"""
        return self.price * self.drift_deriv(x) + self.payoff_deriv(x)

    @property
    def has_closed_scale(self) -> bool:
        return self.closed_log_scale is not None

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.descriptor) if self.descriptor else {'name': self.name, 'price': self.price}


@dataclass(frozen=True)
class CriticalPoints(BaseModel):
    """K·b + h 图像的关键点：ξ, λ̄, λ_under 与 K·b(0)+h(0)"""
    xi: float
    lambda_bar: float
    lambda_under: float
    level_at_zero: float
    lambda_under_source: str = 'analytic'
    level_at_zero_source: str = 'analytic'
    sign_changes: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class AssumptionCheck(BaseModel):
    """单项假设检验结果"""
    name: str
    assumption: int
    passed: bool
    evidence: Dict[str, Any] = field(default_factory=dict)
    witness: Optional[Any] = None
    numeric_only: bool = True
    message: str = ''


@dataclass
class AssumptionReport(BaseModel):
    """标准假设的数值检验报告"""
    model_name: str
    checks: List[AssumptionCheck] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def failed_checks(self) -> List[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def passed(self) -> bool:
        """求解所需的假设（1、2、4）是否全部通过"""
        return all(c.passed for c in self.checks if c.assumption != 3)

    @property
    def pathwise_passed(self) -> bool:
        """路径型准则所需的假设 3 是否通过"""
        return all(c.passed for c in self.checks if c.assumption == 3)

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'model': self.model_name,
            'passed': self.passed,
            'pathwise_passed': self.pathwise_passed,
            'checks': [asdict(c) for c in self.checks],
            'warnings': list(self.warnings),
        }


@dataclass(frozen=True)
class ImproperIntegral(BaseModel):
    """（广义）积分结果，未收敛时误差视为 +∞"""
    value: float
    abs_error_estimate: float
    converged: bool
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def error(self) -> float:
        return self.abs_error_estimate if self.converged else math.inf


# 求解结果
@dataclass
class ThresholdSolution(BaseModel):
    """最优阈值 β* 与最优长期平均收益率 λ*"""
    beta_star: float
    lambda_star: float
    critical_points: CriticalPoints
    model: Dict[str, Any] = field(default_factory=dict)
    theta_residual: float = math.nan
    level_residual: float = math.nan
    fixed_point_residual: float = math.nan
    speed_mass: float = math.nan
    lambda_derivative: float = math.nan
    g_slope: float = math.nan
    g_slope_gap: float = math.nan
    bracket_history: List[Tuple[float, float]] = field(default_factory=list)
    newton_check: Dict[str, Any] = field(default_factory=dict)
    tolerances: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['bracket_history'] = [list(p) for p in self.bracket_history]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ThresholdSolution':
        try:
            cp = CriticalPoints(**data['critical_points'])
            payload = {k: v for k, v in data.items() if k != 'critical_points'}
            payload['bracket_history'] = [tuple(p) for p in payload.get('bracket_history', [])]
            return cls(critical_points=cp, **payload)
        except KeyError as e:
            raise ConfigError(f"解文件缺少字段: {e}", field=str(e).strip("'"))
        except TypeError as e:
            raise ConfigError(f"解文件格式错误: {e}")


@dataclass
class HjbCheck(BaseModel):
    """HJB 单项检验"""
    name: str
    value: float
    tolerance: float
    passed: bool
    applicable: bool = True
    detail: str = ''


@dataclass
class HjbReport(BaseModel):
    """HJB 方程验证报告"""
    beta_star: float
    lambda_star: float
    grid: List[float] = field(default_factory=list)
    checks: List[HjbCheck] = field(default_factory=list)
    c1_bound: float = math.nan

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.applicable)

    def check(self, name: str) -> HjbCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['passed'] = self.passed
        return data


# 运行配置
@dataclass(frozen=True)
class QuadratureConfig(BaseModel):
    """积分容差与端点分段设置"""
    epsabs: float = 1e-10
    epsrel: float = 1e-10
    limit: int = 200
    panel_width: float = math.log(2.0)
    max_panels: int = 400
    tail_patience: int = 5

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'QuadratureConfig':
        return _from_mapping(cls, data, 'quadrature')


@dataclass(frozen=True)
class SearchConfig(BaseModel):
    """ξ 的搜索区间与探测网格"""
    lower: float = 2.0 ** -40
    upper: float = 2.0 ** 40
    grid_points: int = 801

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'SearchConfig':
        return _from_mapping(cls, data, 'search')


@dataclass(frozen=True)
class SolverConfig(BaseModel):
    """自由边界求解器设置"""
    root_tol: float = 1e-10
    residual_tol: float = 1e-8
    max_expansion: float = 2.0 ** 10
    scan_points: int = 8
    newton_check: bool = True
    slope_tol: float = 1e-3
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'SolverConfig':
        data = dict(data or {})
        quad = QuadratureConfig.from_dict(data.pop('quadrature', None))
        return _from_mapping(cls, dict(data, quadrature=quad), 'solver')


@dataclass(frozen=True)
class ValidationConfig(BaseModel):
    """假设检验设置"""
    grid_points: int = 200
    x_min: float = 1e-4
    x_max: float = 1e4
    limit_depth: int = 40
    growth_slope_tol: float = 0.05
    anchor: float = 1.0
    quadrature: QuadratureConfig = field(
        default_factory=lambda: QuadratureConfig(epsabs=1e-6, epsrel=1e-6, max_panels=200))

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'ValidationConfig':
        data = dict(data or {})
        quad = data.pop('quadrature', None)
        quad = QuadratureConfig.from_dict(dict({'epsabs': 1e-6, 'epsrel': 1e-6, 'max_panels': 200},
                                               **(quad or {})))
        return _from_mapping(cls, dict(data, quadrature=quad), 'validation')


@dataclass(frozen=True)
class HjbGridConfig(BaseModel):
    """HJB 验证网格与容差"""
    points: int = 40
    lower_factor: float = 1e-3
    upper_gap: float = 1e-3
    horizon: float = 10.0
    fd_relative_step: float = 1e-4
    ode_tol: float = 1e-6
    gradient_tol: float = 1e-10
    drift_tol: float = 1e-10
    pasting_tol: float = 1e-10
    second_tol: float = 1e-6
    limit_tol: float = 1e-6

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'HjbGridConfig':
        return _from_mapping(cls, data, 'verify')


@dataclass(frozen=True)
class SimConfig(BaseModel):
    """阈值收获策略的模拟设置"""
    threshold: float
    x0: float
    dt: float = 1e-3
    horizon: float = 200.0
    n_paths: int = 256
    burn_in_fraction: Optional[float] = None
    seed: int = 20240101
    floor: float = 1e-12
    scheme: str = 'euler_full_truncation'
    max_floor_fraction: float = 0.01
    n_bins: int = 200
    histogram_upper: Optional[float] = None
    n_windows: int = 20
    batch_size: int = 32
    block_steps: int = 4096
    workers: int = 1
    antithetic: bool = False
    common_seed: bool = False
    moment_exponent: Optional[float] = None

    def validate(self) -> 'SimConfig':
        """校验配置不变式，违反时抛出 ConfigError"""
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt 必须为正数: {self.dt}", field='dt')
        if not self.horizon >= 100 * self.dt:
            raise ConfigError(f"horizon 必须不小于 100·dt: T={self.horizon}, dt={self.dt}", field='horizon')
        if int(self.n_paths) < 1:
            raise ConfigError(f"路径数必须不小于 1: {self.n_paths}", field='paths')
        if self.burn_in_fraction is not None and not 0.0 <= self.burn_in_fraction < 1.0:
            raise ConfigError(f"burn-in 比例必须位于 [0,1): {self.burn_in_fraction}", field='burn_in_fraction')
        if not self.threshold > 0:
            raise ConfigError(f"阈值 β 必须为正数: {self.threshold}", field='beta')
        if not (self.x0 > 0 and math.isfinite(self.x0)):
            raise ConfigError(f"初始状态 x0 必须为正数: {self.x0}", field='x0')
        if self.floor < 0:
            raise ConfigError(f"状态下限 floor 必须非负: {self.floor}", field='floor')
        if self.scheme != 'euler_full_truncation':
            raise ConfigError(f"不支持的离散格式: {self.scheme}", field='scheme')
        if not math.isfinite(self.threshold) and self.histogram_upper is None:
            raise ConfigError("无控制模拟需要指定 histogram_upper", field='histogram_upper')
        if self.n_bins < 1 or self.n_windows < 2 or self.batch_size < 1 or self.block_steps < 1:
            raise ConfigError("n_bins/n_windows/batch_size/block_steps 取值非法", field='simulation')
        if self.workers < 1:
            raise ConfigError(f"workers 必须不小于 1: {self.workers}", field='workers')
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def effective_burn_in(self) -> float:
        """未指定时：x0 ≠ β 取 10%，否则为 0"""
        if self.burn_in_fraction is not None:
            return self.burn_in_fraction
        return 0.1 if self.x0 != self.threshold else 0.0

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'SimConfig':
        return _from_mapping(cls, data, 'simulation')


# 模拟结果
@dataclass
class PathAccumulators(BaseModel):
    """单条（或一批）路径的累积量"""
    payoff_integral: float
    harvest_total: float
    initial_harvest: float
    terminal_state: float
    estimate: float
    window_averages: List[float] = field(default_factory=list)
    floor_events: int = 0
    max_state: float = math.nan
    harvest_monotone: bool = True
    moment_average: float = math.nan


@dataclass
class SimResult(BaseModel):
    """长期平均收益的蒙特卡洛估计"""
    threshold: float
    mean: float
    stderr: float
    per_path_values: List[float] = field(default_factory=list)
    per_path_harvest_rates: List[float] = field(default_factory=list)
    harvest_rate: float = math.nan
    histogram_edges: List[float] = field(default_factory=list)
    histogram_mass: List[float] = field(default_factory=list)
    trace: List[float] = field(default_factory=list)
    fluctuation_band: float = math.nan
    floor_events: int = 0
    moment_average: float = math.nan
    mode: str = 'expected'
    c_dt: float = 0.0
    config: Dict[str, Any] = field(default_factory=dict)

    def tolerance(self, dt: Optional[float] = None, n_stderr: float = 3.0) -> float:
        """容差带: n·stderr + C_dt·√dt"""
        dt = dt if dt is not None else self.config.get('dt', 0.0)
        spread = self.stderr if self.mode == 'expected' else self.fluctuation_band
        spread = 0.0 if not math.isfinite(spread) else spread
        return n_stderr * spread + self.c_dt * math.sqrt(dt)

    def summary(self) -> Dict[str, Any]:
        """不含逐路径数据的摘要"""
        data = self.to_dict()
        for key in ('per_path_values', 'per_path_harvest_rates', 'histogram_edges', 'histogram_mass'):
            data.pop(key)
        return data


@dataclass
class OccupationReport(BaseModel):
    """经验占位测度与归一化速度测度的比较"""
    threshold: float
    cdf_distance: float
    tolerance: float
    passed: bool
    edges: List[float] = field(default_factory=list)
    empirical_cdf: List[float] = field(default_factory=list)
    speed_cdf: List[float] = field(default_factory=list)


@dataclass
class MomentReport(BaseModel):
    """无控制过程的遍历矩比较"""
    exponent: float
    simulated: float
    analytic: float
    relative_error: float
    tolerance: float
    passed: bool


@dataclass
class DtCalibration(BaseModel):
    """步长减半得到的离散化常数 C_dt"""
    dt: float
    coarse: float
    fine: float
    c_dt: float


@dataclass
class SweepRow(BaseModel):
    """阈值扫描中的一行"""
    beta: float
    estimate: float
    stderr: float
    oracle: float
    tolerance: float
    matches_oracle: bool
    below_optimum: bool


@dataclass
class SweepTable(BaseModel):
    """阈值扫描结果"""
    rows: List[SweepRow] = field(default_factory=list)
    lambda_star: Optional[float] = None
    c_dt: float = 0.0
    beta_star: Optional[float] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def all_below_optimum(self) -> bool:
        return all(r.below_optimum for r in self.rows)

    @property
    def argmax_beta(self) -> float:
        return max(self.rows, key=lambda r: r.estimate).beta

    @property
    def optimum_row(self) -> Optional[SweepRow]:
        """网格中最接近 β* 的行"""
        if self.beta_star is None or not self.rows:
            return None
        return min(self.rows, key=lambda r: abs(r.beta - self.beta_star))

    @property
    def maximal_at_optimum(self) -> bool:
        """其余各行的估计不超过 β* 行的估计加该行容差"""
        best = self.optimum_row
        if best is None:
            return True
        return all(r.estimate <= best.estimate + r.tolerance for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.all_below_optimum and self.maximal_at_optimum


@dataclass
class RunManifest(BaseModel):
    """运行清单：完全决定输出产物"""
    model_config: Dict[str, Any]
    actions: List[str]
    tolerances: Dict[str, Any]
    seeds: Dict[str, Any]
    output_dir: str
    tool_version: str
    timestamp: str
    run: Dict[str, Any] = field(default_factory=dict)
    manifest_version: int = 1

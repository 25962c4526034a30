#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
模型服务
内置示例模型、用户自定义模型、K·b+h 的关键点与反函数、标准假设的数值检验
"""

import math
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from loguru import logger
from scipy.optimize import brentq

from harvest import AmbiguityError, ConfigError, DomainError, ModelValidationError
from harvest.models import (AssumptionCheck, AssumptionReport, CriticalPoints, ModelLimits,
                            ModelSpec, SearchConfig, ValidationConfig)
from harvest.utils.numerics import central_difference, grow_bracket, sample_limit, sign_change_indices

CATALOG_KINDS = ('logistic', 'log_ou', 'mean_revert')
PAYOFF_KINDS = ('zero', 'power_inada')
ELL_RANGES = {
    'logistic': (1.0, 1.5),
    'mean_revert': (0.5, 1.0),
}
ELL_ATOL = 1e-12


def normalize_kind(kind: str) -> str:
    """'log-ou' / 'mean-revert' 等写法统一为下划线形式"""
    return str(kind).strip().lower().replace('-', '_')


def _positive(params: Dict[str, float], name: str) -> float:
    if name not in params:
        raise ModelValidationError(f"缺少参数 {name}")
    value = float(params[name])
    if not value > 0 or not math.isfinite(value):
        raise ModelValidationError(f"参数 {name} 必须为正数: {value}")
    return value


def _payoff(payoff_kind: str, payoff_params: Optional[Dict[str, float]]):
    """构造收益函数 h 与 h'"""
    payoff_params = payoff_params or {}
    if payoff_kind == 'zero':
        return (lambda x: 0.0 * np.asarray(x, dtype=float),
                lambda x: 0.0 * np.asarray(x, dtype=float),
                {'kind': 'zero'})
    if payoff_kind == 'power_inada':
        a = float(payoff_params.get('a', 0.5))
        c = float(payoff_params.get('c', 1.0))
        if not 0.0 < a < 1.0:
            raise ModelValidationError(f"power_inada 指数 a 必须位于 (0,1): {a}")
        if not c > 0:
            raise ModelValidationError(f"power_inada 系数 c 必须为正: {c}")
        return (lambda x: c * np.power(x, a),
                lambda x: c * a * np.power(x, a - 1.0),
                {'kind': 'power_inada', 'a': a, 'c': c})
    raise ModelValidationError(f"未知收益函数类型: {payoff_kind}")


def _logistic(kappa, gamma, sigma, ell):
    s2 = sigma ** 2

    def drift(x):
        return kappa * (gamma - x) * x

    def drift_deriv(x):
        return kappa * gamma - 2.0 * kappa * x

    def vol(x):
        return sigma * np.power(x, ell)

    if abs(ell - 1.0) <= ELL_ATOL:
        c1, c2 = 2 * kappa * gamma / s2, 2 * kappa / s2

        def log_scale(beta, x):
            return c1 * np.log(beta / x) + c2 * (x - beta)
    elif abs(ell - 1.5) <= ELL_ATOL:
        c1, c2 = 2 * kappa / s2, 2 * kappa * gamma / s2

        def log_scale(beta, x):
            return c1 * np.log(x / beta) + c2 * (1.0 / x - 1.0 / beta)
    else:
        e1, e2 = 2.0 * (ell - 1.0), 3.0 - 2.0 * ell
        c1 = 2 * kappa * gamma / (2 * (ell - 1.0) * s2)
        c2 = 2 * kappa / (e2 * s2)

        def log_scale(beta, x):
            return c1 * (np.power(x, -e1) - np.power(beta, -e1)) + c2 * (np.power(x, e2) - np.power(beta, e2))

    return drift, drift_deriv, vol, log_scale, 2.0 * ell, 0.0


def _log_ou(kappa, gamma, sigma, ell):
    s2 = sigma ** 2
    a, c = kappa / s2, 2 * kappa * gamma / s2 + 1.0

    def drift(x):
        return (kappa * gamma + 0.5 * s2 - kappa * np.log(x)) * x

    def drift_deriv(x):
        return kappa * gamma + 0.5 * s2 - kappa * np.log(x) - kappa

    def vol(x):
        return sigma * np.asarray(x, dtype=float)

    def log_scale(beta, x):
        lx, lb = np.log(x), np.log(beta)
        return a * (lx * lx - lb * lb) - c * (lx - lb)

    return drift, drift_deriv, vol, log_scale, 2.0, 0.0


def _mean_revert(kappa, gamma, sigma, ell):
    s2 = sigma ** 2

    def drift(x):
        return kappa * (gamma - x)

    def drift_deriv(x):
        return -kappa + 0.0 * np.asarray(x, dtype=float)

    def vol(x):
        return sigma * np.power(x, ell)

    if abs(ell - 0.5) <= ELL_ATOL:
        c1, c2 = 2 * kappa * gamma / s2, 2 * kappa / s2

        def log_scale(beta, x):
            return c1 * np.log(beta / x) + c2 * (x - beta)
    elif abs(ell - 1.0) <= ELL_ATOL:
        c1, c2 = 2 * kappa / s2, 2 * kappa * gamma / s2

        def log_scale(beta, x):
            return c1 * np.log(x / beta) + c2 * (1.0 / x - 1.0 / beta)
    else:
        e1, e2 = 2.0 * ell - 1.0, 2.0 * (1.0 - ell)
        c1 = 2 * kappa * gamma / (e1 * s2)
        # 直接积分 2b/σ² 得到的系数为 κ/((1-ℓ)σ²)
        c2 = kappa / ((1.0 - ell) * s2)

        def log_scale(beta, x):
            return c1 * (np.power(x, -e1) - np.power(beta, -e1)) + c2 * (np.power(x, e2) - np.power(beta, e2))

    return drift, drift_deriv, vol, log_scale, 2.0 * ell, kappa * gamma


_BUILDERS = {
    'logistic': _logistic,
    'log_ou': _log_ou,
    'mean_revert': _mean_revert,
}


def build_catalog_model(kind: str, params: Dict[str, float], payoff_kind: str = 'zero',
                        payoff_params: Optional[Dict[str, float]] = None, price: float = 1.0,
                        limits: Optional[Dict[str, float]] = None, strict: bool = True) -> ModelSpec:
    """构造内置示例模型

    Args:
        kind: logistic | log_ou | mean_revert
        params: kappa, gamma, sigma, ell
        payoff_kind: zero | power_inada
        payoff_params: power_inada 的 a, c
        price: 单位收获利润 K
        limits: 覆盖解析极限
        strict: 为 True 时示例的附加条件不满足即拒绝；否则仅告警，交由假设检验报告

    Returns:
        ModelSpec
    """
    kind = normalize_kind(kind)
    if kind not in CATALOG_KINDS:
        raise ModelValidationError(f"未知模型类型: {kind}")
    params = dict(params or {})

    kappa = _positive(params, 'kappa')
    sigma = _positive(params, 'sigma')
    if kind == 'log_ou':
        gamma = float(params.get('gamma', 0.0))
        if not math.isfinite(gamma):
            raise ModelValidationError(f"参数 gamma 必须为有限数: {gamma}")
        ell = 1.0
    else:
        gamma = _positive(params, 'gamma')
        lo, hi = ELL_RANGES[kind]
        ell = float(params.get('ell', lo))
        if not lo - ELL_ATOL <= ell <= hi + ELL_ATOL:
            raise ModelValidationError(f"{kind} 要求 ℓ ∈ [{lo}, {hi}]: ℓ={ell}")
        if abs(ell - lo) <= ELL_ATOL:
            margin = kappa * gamma - 0.5 * sigma ** 2
            if margin <= 0:
                message = f"{kind} ℓ={lo} 要求 κγ - σ²/2 > 0: 当前为 {margin:.6g}"
                if strict:
                    raise ModelValidationError(message, failed_checks=['scale_divergence_at_zero'])
                logger.warning(f"{message}，继续构造模型并交由假设检验")

    price = float(price)
    if not price > 0:
        raise ModelValidationError(f"价格 K 必须为正: {price}", failed_checks=['price_positive'])

    drift, drift_deriv, vol, log_scale, growth, drift_at_zero = _BUILDERS[kind](kappa, gamma, sigma, ell)
    payoff, payoff_deriv, payoff_desc = _payoff(payoff_kind, payoff_params)

    analytic = {
        'drift_at_zero': drift_at_zero,
        'vol_at_zero': 0.0,
        'payoff_at_zero': 0.0,
        'level_at_infinity': -math.inf,
    }
    analytic.update({k: float(v) for k, v in (limits or {}).items()})

    descriptor = {
        'kind': kind,
        'params': {'kappa': kappa, 'gamma': gamma, 'sigma': sigma, 'ell': ell} if kind != 'log_ou'
        else {'kappa': kappa, 'gamma': gamma, 'sigma': sigma},
        'payoff': payoff_desc,
        'price': price,
        'limits': dict(limits or {}),
    }
    model = ModelSpec(
        name=f"{kind}(ℓ={ell:g})" if kind != 'log_ou' else kind,
        drift=drift,
        drift_deriv=drift_deriv,
        vol=vol,
        payoff=payoff,
        payoff_deriv=payoff_deriv,
        price=price,
        growth_exponent=growth,
        limits=ModelLimits(**analytic),
        closed_log_scale=log_scale,
        hoelder_half=True,
        descriptor=descriptor,
    )
    logger.debug(f"构造内置模型: {model.name}, 参数={descriptor['params']}, 收益={payoff_desc}")
    return model


def _expression(source: str, params: Dict[str, float], label: str) -> Callable:
    """把受限 numpy 表达式编译成函数，命名空间只含 x、np 与参数"""
    try:
        code = compile(str(source), f'<{label}>', 'eval')
    except SyntaxError as e:
        raise ConfigError(f"表达式语法错误: {e.msg}", field=f"model.expressions.{label}")
    namespace = {'np': np, **{k: float(v) for k, v in params.items()}}

    def func(x):
        value = eval(code, {'__builtins__': {}}, dict(namespace, x=x))
        return value + 0.0 * np.asarray(x, dtype=float)

    return func


def build_user_model(expressions: Dict[str, str], params: Optional[Dict[str, float]] = None,
                     price: float = 1.0, growth_exponent: float = 2.0,
                     limits: Optional[Dict[str, float]] = None, name: str = 'user') -> ModelSpec:
    """由表达式构造用户模型，缺省导数用中心差分"""
    params = dict(params or {})
    for key in ('drift', 'vol'):
        if key not in expressions:
            raise ConfigError(f"用户模型缺少表达式 {key}", field=f"model.expressions.{key}")
    drift = _expression(expressions['drift'], params, 'drift')
    vol = _expression(expressions['vol'], params, 'vol')
    payoff = _expression(expressions.get('payoff', '0'), params, 'payoff')

    def numeric_derivative(func):
        def deriv(x):
            if np.ndim(x) == 0:
                return central_difference(func, float(x))
            return np.array([central_difference(func, float(v)) for v in np.ravel(x)]).reshape(np.shape(x))
        return deriv

    drift_deriv = (_expression(expressions['drift_deriv'], params, 'drift_deriv')
                   if 'drift_deriv' in expressions else numeric_derivative(drift))
    payoff_deriv = (_expression(expressions['payoff_deriv'], params, 'payoff_deriv')
                    if 'payoff_deriv' in expressions else numeric_derivative(payoff))

    price = float(price)
    if not price > 0:
        raise ModelValidationError(f"价格 K 必须为正: {price}", failed_checks=['price_positive'])
    growth_exponent = float(growth_exponent)
    if not growth_exponent > 0:
        raise ModelValidationError(f"增长指数 k 必须为正: {growth_exponent}")

    return ModelSpec(
        name=name,
        drift=drift,
        drift_deriv=drift_deriv,
        vol=vol,
        payoff=payoff,
        payoff_deriv=payoff_deriv,
        price=price,
        growth_exponent=growth_exponent,
        limits=ModelLimits(**{k: float(v) for k, v in (limits or {}).items()}),
        closed_log_scale=None,
        hoelder_half=False,
        descriptor={
            'kind': 'user',
            'expressions': dict(expressions),
            'params': params,
            'price': price,
            'growth_exponent': growth_exponent,
            'limits': dict(limits or {}),
        },
    )


def model_from_config(section: Dict[str, Any], strict: bool = True) -> ModelSpec:
    """从配置中的 model 节构造模型

    Args:
        section: model 节字典
        strict: 传给 build_catalog_model

    Returns:
        ModelSpec
    """
    if not isinstance(section, dict):
        raise ConfigError("model 节必须是映射", field='model')
    if 'kind' not in section:
        raise ConfigError("缺少模型类型", field='model.kind')
    kind = normalize_kind(section['kind'])
    limits = section.get('limits') or {}
    unknown_limits = set(limits) - set(ModelLimits.__dataclass_fields__)
    if unknown_limits:
        raise ConfigError(f"未知极限项: {sorted(unknown_limits)}", field='model.limits')
    try:
        price = float(section.get('price', 1.0))
    except (TypeError, ValueError):
        raise ConfigError(f"价格必须为数值: {section.get('price')}", field='model.price')

    if kind == 'user':
        return build_user_model(
            expressions=section.get('expressions') or {},
            params=section.get('params') or {},
            price=price,
            growth_exponent=section.get('growth_exponent', 2.0),
            limits=limits,
            name=section.get('name', 'user'),
        )
    if kind not in CATALOG_KINDS:
        raise ConfigError(f"未知模型类型: {section['kind']}", field='model.kind')

    payoff = section.get('payoff') or {'kind': 'zero'}
    if isinstance(payoff, str):
        payoff = {'kind': payoff}
    payoff_kind = normalize_kind(payoff.get('kind', 'zero'))
    if payoff_kind not in PAYOFF_KINDS:
        raise ConfigError(f"未知收益函数类型: {payoff_kind}", field='model.payoff.kind')
    params = section.get('params') or {}
    try:
        params = {k: float(v) for k, v in params.items()}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"模型参数必须为数值: {e}", field='model.params')
    return build_catalog_model(kind, params, payoff_kind,
                               {k: v for k, v in payoff.items() if k != 'kind'},
                               price=price, limits=limits, strict=strict)


# 关键点与反函数
def _find_xi(model: ModelSpec, search: SearchConfig) -> Dict[str, Any]:
    grid = np.geomspace(search.lower, search.upper, search.grid_points)
    with np.errstate(all='ignore'):
        values = np.asarray(model.level_deriv(grid), dtype=float)
    changes = sign_change_indices(values)
    if not changes:
        raise ModelValidationError(
            "K·b' + h' 在搜索区间内没有变号，不满足 ξ 存在性条件",
            failed_checks=['level_single_peak'])
    if len(changes) > 1:
        raise AmbiguityError("K·b' + h' 多次变号", [(float(grid[i]), float(grid[i + 1])) for i in changes])
    i = changes[0]
    if not values[i] > 0:
        raise ModelValidationError(
            "K·b' + h' 的符号模式应为先正后负", failed_checks=['level_single_peak'])
    # 相邻非零点之间可能隔着零值
    right = i + 1
    while not (np.isfinite(values[right]) and values[right] != 0.0):
        right += 1
    left_x, right_x = float(grid[i]), float(grid[right])
    xi = brentq(lambda x: float(model.level_deriv(x)), left_x, right_x, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                maxiter=200)
    return {'xi': xi, 'grid': grid, 'values': values}


def _level_at_zero(model: ModelSpec) -> Dict[str, Any]:
    limits = model.limits
    if limits.drift_at_zero is not None and limits.payoff_at_zero is not None:
        return {'value': model.price * limits.drift_at_zero + limits.payoff_at_zero,
                'source': 'analytic', 'consistent': True}
    limit = sample_limit(lambda x: float(model.level(x)), 'zero')
    return {'value': limit['value'], 'source': 'numeric', 'consistent': limit['consistent']}


def _lambda_under(model: ModelSpec, xi: float, depth: int = 40) -> Dict[str, Any]:
    if model.limits.level_at_infinity is not None:
        return {'value': model.limits.level_at_infinity, 'source': 'analytic', 'monotone': True,
                'consistent': True}
    base = max(1.0, xi)
    xs = base * np.power(2.0, np.arange(1, depth + 1, dtype=float))
    with np.errstate(all='ignore'):
        values = np.asarray(model.level(xs), dtype=float)
    # 单调性证书：ξ 右侧 K·b+h 严格递减
    monotone = bool(np.all(np.diff(values[np.isfinite(values)]) <= 0))
    limit = sample_limit(lambda x: float(model.level(x)), 'infinity', depth=depth, base=base)
    return {'value': limit['value'], 'source': 'numeric', 'monotone': monotone,
            'consistent': limit['consistent']}


def critical_points(model: ModelSpec, search: Optional[SearchConfig] = None) -> CriticalPoints:
    """计算 ξ、λ̄、λ_under 与 K·b(0)+h(0)

    Args:
        model: 模型
        search: ξ 的搜索区间

    Returns:
        CriticalPoints
    """
    search = search or SearchConfig()
    located = _find_xi(model, search)
    xi = located['xi']
    lambda_bar = float(model.level(xi))
    zero = _level_at_zero(model)
    under = _lambda_under(model, xi)

    if not under['monotone']:
        raise ModelValidationError("λ_under 探测缺少单调性证书", failed_checks=['level_ordering'])
    if not (zero['consistent'] and math.isfinite(zero['value'])):
        raise ModelValidationError(f"K·b(0)+h(0) 极限探测不一致: {zero['value']}",
                                   failed_checks=['payoff_limit_at_zero'])
    if not under['value'] < zero['value'] < lambda_bar:
        raise ModelValidationError(
            f"要求 λ_under < K·b(0)+h(0) < λ̄: {under['value']} , {zero['value']} , {lambda_bar}",
            failed_checks=['level_ordering'])

    cp = CriticalPoints(
        xi=xi,
        lambda_bar=lambda_bar,
        lambda_under=float(under['value']),
        level_at_zero=float(zero['value']),
        lambda_under_source=under['source'],
        level_at_zero_source=zero['source'],
        sign_changes=1,
    )
    logger.debug(f"关键点: ξ={xi:.12g}, λ̄={lambda_bar:.12g}, λ_under={cp.lambda_under}, "
                 f"K·b(0)+h(0)={cp.level_at_zero:.12g}")
    return cp


def _root_tolerance(lam: float) -> float:
    return 1e-10 * max(1.0, abs(lam))


def rho_upper(model: ModelSpec, cp: CriticalPoints, lam: float) -> float:
    """K·b + h = λ 在 ξ 右侧的唯一根 ϱ(λ)"""
    if not cp.lambda_under < lam < cp.lambda_bar:
        raise DomainError(f"ϱ 的定义域为 ({cp.lambda_under}, {cp.lambda_bar}): λ={lam}")

    def f(x):
        return float(model.level(x)) - lam

    bracket, trace = grow_bracket(f, cp.xi, 2.0 * cp.xi, 2.0, cp.xi * 2.0 ** 200, reference_sign=1.0)
    if bracket is None:
        raise DomainError(f"ϱ(λ) 区间扩张失败: λ={lam}, 轨迹末端={trace[-1]}")
    root = brentq(f, bracket[0], bracket[1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300)
    if abs(f(root)) > _root_tolerance(lam):
        logger.warning(f"ϱ(λ) 残差偏大: λ={lam}, 残差={f(root):.3e}")
    return max(root, math.nextafter(cp.xi, math.inf))


def rho_lower(model: ModelSpec, cp: CriticalPoints, lam: float) -> float:
    """K·b + h = λ 在 ξ 左侧的唯一根 ρ(λ)"""
    if not cp.level_at_zero < lam < cp.lambda_bar:
        raise DomainError(f"ρ 的定义域为 ({cp.level_at_zero}, {cp.lambda_bar}): λ={lam}")

    def f(x):
        return float(model.level(x)) - lam

    bracket, trace = grow_bracket(f, cp.xi, 0.5 * cp.xi, 0.5, cp.xi * 2.0 ** -200, reference_sign=1.0)
    if bracket is None:
        raise DomainError(f"ρ(λ) 区间收缩失败: λ={lam}, 轨迹末端={trace[-1]}")
    root = brentq(f, bracket[0], bracket[1], xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=300)
    return min(root, math.nextafter(cp.xi, 0.0))


# 假设检验
def _check(name: str, assumption: int, passed: bool, evidence: Dict[str, Any],
           witness: Any = None, numeric_only: bool = True, message: str = '') -> AssumptionCheck:
    return AssumptionCheck(name=name, assumption=assumption, passed=bool(passed), evidence=evidence,
                           witness=None if passed else witness, numeric_only=numeric_only, message=message)


def _limit_check(name: str, analytic: Optional[float], func: Callable[[float], float]) -> AssumptionCheck:
    if analytic is not None:
        return _check(name, 1 if name != 'payoff_limit_at_zero' else 4, math.isfinite(analytic),
                      {'value': analytic, 'source': 'analytic'}, witness=analytic, numeric_only=False)
    limit = sample_limit(func, 'zero')
    passed = limit['consistent'] and math.isfinite(limit['value'])
    return _check(name, 1 if name != 'payoff_limit_at_zero' else 4, passed,
                  {'value': limit['value'], 'source': 'numeric', 'tail': limit['tail']},
                  witness=limit['tail'], message='' if passed else '极限探测不一致或发散')


def _integral_check(name: str, assumption: int, integral) -> AssumptionCheck:
    evidence = {'value': integral.value, 'abs_error': integral.abs_error_estimate,
                'diagnostics': integral.diagnostics}
    return _check(name, assumption, integral.converged, evidence,
                  witness={'estimate': integral.value, 'diagnostics': integral.diagnostics},
                  message='' if integral.converged else '广义积分不收敛')


def validate_assumptions(model: ModelSpec, cfg: Optional[ValidationConfig] = None) -> AssumptionReport:
    """对标准假设逐项给出数值结论，失败只记录不抛出

    Args:
        model: 模型
        cfg: 检验配置

    Returns:
        AssumptionReport
    """
    from harvest.services.scale_speed import ScaleSpeed

    cfg = cfg or ValidationConfig()
    report = AssumptionReport(model_name=model.name)
    grid = np.geomspace(cfg.x_min, cfg.x_max, cfg.grid_points)
    k = model.growth_exponent

    # 假设 1
    with np.errstate(all='ignore'):
        sigma2 = np.asarray(model.vol(grid), dtype=float) ** 2
    bad = np.where(~(np.isfinite(sigma2) & (sigma2 > 0)))[0]
    report.checks.append(_check('vol_positive', 1, bad.size == 0, {'grid_points': int(grid.size)},
                                witness=float(grid[bad[0]]) if bad.size else None))

    if bad.size == 0:
        ratio = sigma2 / (1.0 + grid ** k)
        upper = grid >= 1.0
        slope = float(np.polyfit(np.log1p(grid[upper] ** k), np.log(sigma2[upper]), 1)[0])
        bound = float(np.max(ratio))
        passed = math.isfinite(bound) and slope <= 1.0 + cfg.growth_slope_tol
        report.checks.append(_check('growth_bound', 1, passed,
                                    {'C': bound, 'k': k, 'fitted_slope': slope},
                                    witness=float(grid[int(np.argmax(ratio))]),
                                    message='有限网格上的拟合，仅为数值证据'))
    else:
        report.checks.append(_check('growth_bound', 1, False, {'k': k}, witness=float(grid[bad[0]])))

    report.checks.append(_limit_check('drift_limit_at_zero', model.limits.drift_at_zero,
                                      lambda x: float(model.drift(x))))
    report.checks.append(_limit_check('vol_limit_at_zero', model.limits.vol_at_zero,
                                      lambda x: float(model.vol(x))))

    # 假设 2
    ss = ScaleSpeed(model, cfg.anchor, cfg.quadrature)
    for name, limit in (('scale_divergence_at_zero', ss.scale_limit_at_zero(cfg.limit_depth)),
                        ('scale_divergence_at_infinity', ss.scale_limit_at_infinity(cfg.limit_depth))):
        passed = limit['diverges'] and limit['consistent']
        report.checks.append(_check(name, 2, passed, limit, witness={'estimate': limit['estimate'],
                                                                     'decay_ratio': limit['decay_ratio']},
                                    message='' if passed else 'p_β 在端点处收敛'))
    report.checks.append(_integral_check('speed_mass_near_zero', 2, ss.speed_mass(0.0, 1.0)))

    # 假设 3
    if model.hoelder_half:
        report.checks.append(_check('vol_hoelder_half', 3, True, {'source': 'catalog'}, numeric_only=False))
    else:
        message = 'σ 的 1/2 阶 Hölder 连续性无法数值验证'
        report.warnings.append(message)
        report.checks.append(_check('vol_hoelder_half', 3, True, {'source': 'unchecked'}, message=message))
    report.checks.append(_integral_check('moment_integrability', 3,
                                         ss.speed_integral(lambda s: s ** k, 0.0, math.inf)))
    report.checks.append(_integral_check('total_speed_mass', 3, ss.speed_mass(0.0, math.inf)))

    # 假设 4
    with np.errstate(all='ignore'):
        payoff = np.asarray(model.payoff(grid), dtype=float)
    finite = bool(np.all(np.isfinite(payoff)))
    payoff_limit = sample_limit(lambda x: float(model.payoff(x)), 'zero')
    bounded = finite and payoff_limit['value'] != -math.inf
    report.checks.append(_check('payoff_bounded_below', 4, bounded,
                                {'min': float(np.min(payoff)) if finite else None},
                                witness=float(grid[int(np.argmin(np.where(np.isfinite(payoff), payoff, -np.inf)))])))
    report.checks.append(_limit_check('payoff_limit_at_zero', model.limits.payoff_at_zero,
                                      lambda x: float(model.payoff(x))))
    report.checks.append(_integral_check('payoff_integrability', 4,
                                         ss.speed_integral(lambda s: abs(float(model.payoff(s))), 0.0, math.inf)))

    try:
        cp = critical_points(model)
        report.checks.append(_check('level_single_peak', 4, True, {'xi': cp.xi, 'sign_changes': 1},
                                    message='网格变号证书'))
        report.checks.append(_check('level_ordering', 4, True,
                                    {'lambda_under': cp.lambda_under, 'level_at_zero': cp.level_at_zero,
                                     'lambda_bar': cp.lambda_bar}))
    except AmbiguityError as e:
        report.checks.append(_check('level_single_peak', 4, False, {'candidates': e.candidates},
                                    witness=e.candidates, message=str(e)))
    except ModelValidationError as e:
        failed = e.failed_checks[0] if e.failed_checks else 'level_single_peak'
        if failed not in ('level_single_peak', 'level_ordering'):
            failed = 'level_ordering'
        report.checks.append(_check(failed, 4, False, {}, witness=str(e), message=str(e)))

    report.checks.append(_check('price_positive', 4, model.price > 0, {'K': model.price},
                                witness=model.price, numeric_only=False))

    for check in report.failed_checks:
        logger.warning(f"假设 {check.assumption} 检验未通过: {check.name}, 证据={check.witness}")
    logger.info(f"假设检验完成: {model.name}, 求解假设={'通过' if report.passed else '未通过'}, "
                f"路径假设={'通过' if report.pathwise_passed else '未通过'}")
    return report

#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
数值工具
区间扩张、中心差分、Aitken 外推与几何探测
"""

import math
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

EPS = float(np.finfo(float).eps)
FD_SCALE = EPS ** (1.0 / 3.0)


def central_difference(func: Callable[[float], float], x: float, step: Optional[float] = None) -> float:
    """中心差分求导

    步长缺省为 ε^{1/3}·max(1,|x|)，并限制在 x/2 以内保证自变量为正。

    Args:
        func: 标量函数
        x: 求导点
        step: 差分步长

    Returns:
        导数近似值
    """
    h = step if step is not None else FD_SCALE * max(1.0, abs(x))
    if x > 0:
        h = min(h, 0.5 * x)
    return (float(func(x + h)) - float(func(x - h))) / (2.0 * h)


def sign_change_indices(values) -> List[int]:
    """返回相邻有限非零值发生变号的位置（左端下标）"""
    arr = np.asarray(values, dtype=float)
    idx = [i for i in range(arr.size) if np.isfinite(arr[i]) and arr[i] != 0.0]
    changes = []
    for left, right in zip(idx[:-1], idx[1:]):
        if np.sign(arr[left]) != np.sign(arr[right]):
            changes.append(left)
    return changes


def aitken(s0: float, s1: float, s2: float) -> float:
    """Aitken Δ² 外推，分母退化时返回最后一项"""
    denom = s2 - 2.0 * s1 + s0
    if denom == 0.0 or not math.isfinite(denom):
        return s2
    return s2 - (s2 - s1) ** 2 / denom


def geometric_points(base: float, depth: int, toward: str, start: int = 1) -> np.ndarray:
    """几何探测点 base·2^{±j}, j=start..depth"""
    j = np.arange(start, depth + 1, dtype=float)
    if toward == 'zero':
        return base * np.power(2.0, -j)
    if toward == 'infinity':
        return base * np.power(2.0, j)
    raise ValueError(f"未知探测方向: {toward}")


def sample_limit(func: Callable[[float], float], toward: str, depth: int = 40,
                base: float = 1.0, rtol: float = 1e-6) -> Dict[str, Any]:
    """沿几何网格探测函数在 0 或 ∞ 处的极限

    用最后两组三点 Aitken 外推值的一致性作为 Richardson 式检验，
    不一致时只报告，不猜测。

    Args:
        func: 标量函数
        toward: 'zero' 或 'infinity'
        depth: 探测深度
        base: 基点
        rtol: 一致性相对容差

    Returns:
        包含 value / consistent / tail 的字典
    """
    xs = geometric_points(base, depth, toward)
    with np.errstate(all='ignore'):
        values = np.array([float(func(x)) for x in xs])
    tail = values[-6:].tolist()

    if not np.all(np.isfinite(values[-6:])):
        return {'value': math.nan, 'consistent': False, 'tail': tail, 'diverging': False}

    diffs = np.diff(values[-6:])
    # 增量同号且不衰减，视为发散
    if np.all(diffs > 0) or np.all(diffs < 0):
        ratios = np.abs(diffs[1:]) / np.maximum(np.abs(diffs[:-1]), 1e-300)
        if np.all(ratios >= 1.0):
            value = math.inf if diffs[-1] > 0 else -math.inf
            return {'value': value, 'consistent': True, 'tail': tail, 'diverging': True}

    previous = aitken(*values[-4:-1])
    latest = aitken(*values[-3:])
    consistent = abs(latest - previous) <= rtol * max(1.0, abs(latest))
    if not consistent:
        logger.debug(f"极限探测不一致: {previous} vs {latest}")
    return {'value': float(latest), 'consistent': bool(consistent), 'tail': tail, 'diverging': False}


def grow_bracket(func: Callable[[float], float], anchor: float, start: float, factor: float,
                 limit: float, reference_sign: float) -> Tuple[Optional[Tuple[float, float]], List[Tuple[float, float]]]:
    """按几何倍数移动端点直至函数符号与参考符号相反

    Args:
        func: 标量函数
        anchor: 已知符号的一端
        start: 移动端起点
        factor: 倍率（>1 向右，<1 向左）
        limit: 端点的最远位置
        reference_sign: 另一端的函数符号

    Returns:
        (区间, 轨迹)；超过 limit 仍未变号时区间为 None
    """
    trace = []
    previous = anchor
    x = start
    while True:
        value = float(func(x))
        trace.append((x, value))
        if math.isfinite(value) and np.sign(value) == -reference_sign:
            lo, hi = (previous, x) if factor > 1 else (x, previous)
            return (lo, hi), trace
        previous = x
        x = x * factor
        if (factor > 1 and x > limit) or (factor < 1 and x < limit):
            return None, trace

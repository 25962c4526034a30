#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
数据处理工具
提供样本统计、批均值、占位直方图与结果表格转换等功能
"""

import math
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger


class DataProcessor:
    """数据处理器类"""

    @staticmethod
    def sample_statistics(values: Sequence[float]) -> Dict[str, float]:
        """样本均值与标准误

        Args:
            values: 逐路径估计值

        Returns:
            包含 mean / std / stderr / count 的字典；单样本时 std 与 stderr 为 nan
        """
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            logger.warning("样本为空，无法计算统计量")
            return {'mean': math.nan, 'std': math.nan, 'stderr': math.nan, 'count': 0}
        mean = float(np.mean(arr))
        if arr.size < 2:
            return {'mean': mean, 'std': math.nan, 'stderr': math.nan, 'count': 1}
        std = float(np.std(arr, ddof=1))
        return {'mean': mean, 'std': std, 'stderr': std / math.sqrt(arr.size), 'count': int(arr.size)}

    @staticmethod
    def histogram_counts(states: np.ndarray, n_bins: int, upper: float) -> np.ndarray:
        """把状态样本计入 [0, upper] 上的等宽直方图

        超出上界的样本计入最后一格。计数为整数，合并顺序不影响结果。
        """
        arr = np.asarray(states, dtype=float).ravel()
        idx = np.floor(arr / upper * n_bins).astype(np.int64)
        idx = np.clip(idx, 0, n_bins - 1)
        return np.bincount(idx, minlength=n_bins).astype(np.int64)

    @staticmethod
    def normalized_mass(counts: Sequence[int]) -> np.ndarray:
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            return np.zeros_like(counts)
        return counts / total

    @staticmethod
    def running_trace(window_averages: np.ndarray) -> Tuple[List[float], float]:
        """窗口平均的累积运行平均与批均值波动带

        多条路径时先按路径取平均。波动带为 std(窗口平均)/√窗口数。

        Args:
            window_averages: 形如 (路径数, 窗口数) 的窗口平均

        Returns:
            (运行平均轨迹, 波动带)
        """
        arr = np.atleast_2d(np.asarray(window_averages, dtype=float))
        per_window = np.nanmean(arr, axis=0)
        finite = per_window[np.isfinite(per_window)]
        if finite.size == 0:
            return [], math.nan
        trace = np.cumsum(finite) / np.arange(1, finite.size + 1)
        band = float(np.std(finite, ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else math.nan
        return trace.tolist(), band

    @staticmethod
    def records_frame(records: Sequence[Dict[str, Any]], columns: Sequence[str] = None) -> pd.DataFrame:
        """记录列表转 DataFrame，列顺序固定"""
        df = pd.DataFrame(list(records))
        if columns is not None:
            for column in columns:
                if column not in df.columns:
                    df[column] = np.nan
            df = df[list(columns)]
        return df

    def sweep_frame(self, table) -> pd.DataFrame:
        """阈值扫描表"""
        columns = ['beta', 'estimate', 'stderr', 'oracle', 'tolerance', 'matches_oracle', 'below_optimum']
        return self.records_frame([row.to_dict() for row in table.rows], columns)

    def trace_frame(self, result) -> pd.DataFrame:
        """运行平均轨迹表"""
        n = len(result.trace)
        return pd.DataFrame({
            'window': np.arange(1, n + 1),
            'running_average': result.trace,
        })

    def histogram_frame(self, result) -> pd.DataFrame:
        """占位直方图表"""
        edges = np.asarray(result.histogram_edges, dtype=float)
        mass = np.asarray(result.histogram_mass, dtype=float)
        return pd.DataFrame({
            'left': edges[:-1],
            'right': edges[1:],
            'mass': mass,
            'cdf': np.cumsum(mass),
        })

    def grid_frame(self, grid: Sequence[float], **columns: Sequence[float]) -> pd.DataFrame:
        """网格上的函数值表"""
        data = {'x': np.asarray(grid, dtype=float)}
        for name, values in columns.items():
            data[name] = np.asarray(values, dtype=float)
        return pd.DataFrame(data)

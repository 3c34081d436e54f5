"""Корреляция Пирсона и t-тесты (Уэлча и парный)"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import t as t_dist

from utils.exceptions import InsufficientDataError


@dataclass(frozen=True)
class TTestResult:
    t: float
    dof: float
    p: float

    @property
    def band(self) -> str:
        return significance_band(self.p)

    def as_dict(self) -> Dict[str, object]:
        return {"t": self.t, "dof": self.dof, "p": self.p, "significance": self.band}


def _as_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InsufficientDataError(f"{name} contains non-finite values")
    return arr


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation of two equal-length samples"""
    x, y = _as_array(xs, "xs"), _as_array(ys, "ys")
    if x.shape != y.shape:
        raise ValueError(f"samples differ in length: {x.size} vs {y.size}")
    if x.size < 3:
        raise InsufficientDataError(f"pearson_r needs at least 3 pairs, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise InsufficientDataError("pearson_r is undefined for a zero-variance sample")
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def pearson_p(r: float, n: int) -> float:
    """Two-sided p of H0: rho = 0 via the t distribution with n-2 dof"""
    if abs(r) >= 1.0:
        return 0.0
    t_value = r * np.sqrt((n - 2) / (1 - r ** 2))
    return float(2 * t_dist.sf(abs(t_value), n - 2))


def welch_t(sample_a: Sequence[float], sample_b: Sequence[float]) -> TTestResult:
    """t-тест Уэлча (неравные дисперсии) с числом степеней свободы Уэлча-Саттертуэйта"""
    a, b = _as_array(sample_a, "sample_a"), _as_array(sample_b, "sample_b")
    if a.size < 2 or b.size < 2:
        raise InsufficientDataError(f"welch_t needs >= 2 values per sample, got {a.size} and {b.size}")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    if va + vb == 0:
        raise InsufficientDataError("welch_t is undefined when both samples are constant")
    t_value = float((a.mean() - b.mean()) / np.sqrt(va + vb))
    dof = float((va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1)))
    return TTestResult(t=t_value, dof=dof, p=float(2 * t_dist.sf(abs(t_value), dof)))


def paired_t(pre: Sequence[float], post: Sequence[float]) -> TTestResult:
    """Парный t-тест по разностям post - pre"""
    x, y = _as_array(pre, "pre"), _as_array(post, "post")
    if x.shape != y.shape:
        raise ValueError(f"samples differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise InsufficientDataError(f"paired_t needs >= 2 pairs, got {x.size}")
    d = y - x
    sd = d.std(ddof=1)
    if sd == 0:
        raise InsufficientDataError("paired_t is undefined for constant differences")
    t_value = float(d.mean() / (sd / np.sqrt(d.size)))
    dof = float(d.size - 1)
    return TTestResult(t=t_value, dof=dof, p=float(2 * t_dist.sf(abs(t_value), dof)))


def significance_band(p: Optional[float]) -> str:
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def summarize(values: Sequence[float]) -> Dict[str, Optional[float]]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"n": 0, "mean": None, "std": None}
    return {
        "n": int(arr.size),
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else None,
    }

"""ECDFs, KS distances, Hill estimates, tail-ratio plateaus and transform checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

HILL_BOOTSTRAP = 200
MIN_EXCEEDANCES = 100


class InsufficientTail(ValueError):
    pass


@dataclass
class EcdfSummary:
    """Sorted sample with optional weights; evaluation is right-continuous."""

    sample: np.ndarray
    n: int
    weights: Optional[np.ndarray] = None
    _cum: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_sample(cls, x, weights=None) -> "EcdfSummary":
        x = np.asarray(x, float).ravel()
        if x.size == 0:
            raise ValueError("empty sample")
        order = np.argsort(x, kind="stable")
        xs = x[order]
        if weights is None:
            cum = np.arange(1, xs.size + 1) / xs.size
            w = None
        else:
            w = np.asarray(weights, float).ravel()[order]
            if np.any(w < 0) or w.sum() <= 0:
                raise ValueError("weights must be nonnegative with positive sum")
            cum = np.cumsum(w) / w.sum()
        return cls(xs, xs.size, w, cum)

    def __call__(self, x):
        idx = np.searchsorted(self.sample, np.asarray(x, float), side="right")
        return np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)

    def left(self, x):
        """F(x-)."""
        idx = np.searchsorted(self.sample, np.asarray(x, float), side="left")
        return np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)


def _as_ecdf(a) -> EcdfSummary:
    return a if isinstance(a, EcdfSummary) else EcdfSummary.from_sample(a)


def ks_distance(a, b: Union[EcdfSummary, np.ndarray, Callable]) -> float:
    """sup_x |F_a(x) - F_b(x)|; ``b`` is a sample, an EcdfSummary or a CDF."""
    ea = _as_ecdf(a)
    if callable(b) and not isinstance(b, EcdfSummary):
        x = np.unique(ea.sample)
        f = np.asarray(b(x), float)
        return float(max(np.max(np.abs(ea(x) - f)), np.max(np.abs(ea.left(x) - f))))
    eb = _as_ecdf(b)
    x = np.union1d(ea.sample, eb.sample)
    return float(np.max(np.abs(ea(x) - eb(x))))


@dataclass
class HillResult:
    estimate: float
    ci_low: float
    ci_high: float
    k: int
    n: int


def hill_estimator(sample, k: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                   n_boot: int = HILL_BOOTSTRAP, level: float = 0.95) -> HillResult:
    """Hill estimate of the tail index from the k largest values, with a
    percentile bootstrap interval."""
    x = np.asarray(sample, float).ravel()
    n = x.size
    if n < 3 or np.any(~(x > 0)):
        raise ValueError("Hill estimator needs a positive sample")
    if k is None:
        k = int(round(n**0.6))
    k = int(k)
    if not 1 <= k < n / 2:
        raise ValueError("k must satisfy 1 <= k < n/2")

    def est(v):
        top = -np.sort(-np.partition(v, n - k - 1)[n - k - 1:])
        ex = np.log(top[:k] / top[k])
        m = ex.mean()
        if not m > 0:
            raise ValueError("degenerate sample: zero log-excess")
        return 1.0 / m

    h = est(x)
    lo = hi = math.nan
    if n_boot > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        reps = []
        for _ in range(n_boot):
            try:
                reps.append(est(x[rng.integers(0, n, n)]))
            except ValueError:
                continue
        if reps:
            a = (1.0 - level) / 2.0
            lo, hi = (float(v) for v in np.quantile(reps, [a, 1.0 - a]))
    return HillResult(float(h), lo, hi, k, n)


@dataclass
class RatioTail:
    plateau: float
    flatness: float
    t_grid: np.ndarray
    ratios: np.ndarray
    exceedances: np.ndarray


def default_tail_grid(sample, points: int = 10, min_exceed: int = 2 * MIN_EXCEEDANCES,
                      max_frac: float = 0.1) -> np.ndarray:
    """Thresholds at order statistics with exceedance counts log-spaced
    between n * max_frac and ``min_exceed``."""
    x = np.sort(np.asarray(sample, float))
    n = x.size
    hi = max(int(n * max_frac), min_exceed + 1)
    counts = np.unique(np.geomspace(hi, min_exceed, points).astype(int))
    counts = counts[counts < n]
    return np.sort(x[n - counts - 1])


def ratio_tail_estimate(sample, ref_tail: Callable, t_grid=None) -> RatioTail:
    """Median of P^{X > t} / ref(t) over ``t_grid`` and the largest relative
    deviation from it."""
    x = np.asarray(sample, float).ravel()
    t = default_tail_grid(x) if t_grid is None else np.asarray(t_grid, float)
    xs = np.sort(x)
    exc = x.size - np.searchsorted(xs, t, side="right")
    if np.any(exc < MIN_EXCEEDANCES):
        raise InsufficientTail(f"fewer than {MIN_EXCEEDANCES} exceedances on the grid")
    ratios = (exc / x.size) / np.asarray(ref_tail(t), float)
    plateau = float(np.median(ratios))
    flat = float(np.max(np.abs(ratios / plateau - 1.0)))
    return RatioTail(plateau, flat, t, ratios, exc)


def laplace_check(sample, target, s_grid) -> np.ndarray:
    """|mean exp(-s X) - target(s)| for each s; ``target`` is a callable or values."""
    x = np.asarray(sample, float).ravel()
    s = np.asarray(s_grid, float)
    if np.any(s <= 0):
        raise ValueError("s-grid must be positive")
    tv = np.asarray(target(s) if callable(target) else target, float)
    emp = np.array([np.mean(np.exp(-si * x)) for si in s])
    return np.abs(emp - tv)


def summary_block(metric: str, value: float, n: int, ci_low: float = math.nan,
                  ci_high: float = math.nan, params: Optional[dict] = None) -> dict:
    def num(v):
        return None if v is None or not np.isfinite(v) else float(v)

    return {"metric": metric, "value": num(value), "ci_low": num(ci_low),
            "ci_high": num(ci_high), "n": int(n), "params": dict(params or {})}

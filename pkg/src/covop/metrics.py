"""Empirical CDFs, Kolmogorov distance and log-log rate fits."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError


class ScalarSample:
    """A sorted sample with its right-continuous empirical CDF."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=float).ravel())
        if v.size == 0:
            raise ConfigError("a ScalarSample needs at least one value")
        if np.isnan(v).any():
            raise ConfigError("a ScalarSample cannot contain NaN")
        v.setflags(write=False)
        self.values = v

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"ScalarSample(n={self.n}, min={self.values[0]:.4g}, max={self.values[-1]:.4g})"

    def ecdf(self, t):
        """``#{x_i <= t} / n``."""
        return np.searchsorted(self.values, t, side="right") / self.n

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.values, q))

    def mean(self) -> float:
        return float(self.values.mean())

    def median(self) -> float:
        return float(np.median(self.values))


def _as_sample(x) -> ScalarSample:
    return x if isinstance(x, ScalarSample) else ScalarSample(x)


def kolmogorov_distance(a, b) -> float:
    """``sup_t |F_a(t) - F_b(t)|`` for two empirical CDFs, computed exactly.

    Both ECDFs are step functions that only jump at sample points, so the
    supremum is attained at one of the merged jump points (evaluated from the
    right); left limits coincide with the value at the previous jump point.
    """
    a = _as_sample(a)
    b = _as_sample(b)
    grid = np.union1d(a.values, b.values)
    ca = np.searchsorted(a.values, grid, side="right")
    cb = np.searchsorted(b.values, grid, side="right")
    return float(np.max(np.abs(ca / a.n - cb / b.n)))


class RateFit(NamedTuple):
    slope: float
    stderr: float
    intercept: float


def rate_fit(ns: Sequence[float], values: Sequence[float], burn_in: int = 0) -> RateFit:
    """OLS fit of ``log(value)`` on ``log(n)``.

    ``burn_in`` drops that many of the smallest ``n`` before fitting.
    """
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if ns.shape != values.shape or ns.ndim != 1:
        raise ConfigError("ns and values must be 1-d sequences of equal length")
    if burn_in:
        order = np.argsort(ns, kind="stable")[burn_in:]
        ns, values = ns[order], values[order]
    if ns.size < 3:
        raise ConfigError(f"rate_fit needs at least 3 points, got {ns.size}")
    if np.any(ns <= 0) or np.any(values <= 0):
        raise ConfigError("rate_fit needs strictly positive n and values")
    x = np.log(ns)
    y = np.log(values)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ConfigError("degenerate design: all n are equal")
    slope = float(xc @ (y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = ns.size - 2
    s2 = float(resid @ resid) / dof
    return RateFit(slope, math.sqrt(s2 / sxx), intercept)


def theoretical_rate(beta: float, epsilon: float = 0.1) -> float:
    """Exponent ``(beta - 1/2) / (2 beta + 4 + epsilon)`` of the bootstrap error bound."""
    if not beta > 0.5:
        raise ConfigError(f"theoretical_rate needs beta > 1/2, got {beta}", key="beta")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}", key="epsilon")
    return (beta - 0.5) / (2.0 * beta + 4.0 + epsilon)


def earlier_rate(beta: float) -> float:
    """Exponent ``(beta - 1/2) / (6 beta + 4)`` of the earlier empirical-process bound."""
    if not beta > 0.5:
        raise ConfigError(f"earlier_rate needs beta > 1/2, got {beta}", key="beta")
    return (beta - 0.5) / (6.0 * beta + 4.0)


def moment_root(values, q: float) -> float:
    """``(mean |x|^q)^{1/q}`` of a sample."""
    v = np.abs(np.asarray(getattr(values, "values", values), dtype=float))
    if q < 1:
        raise ConfigError(f"q must be at least 1, got {q}", key="q")
    top = float(v.max()) if v.size else 0.0
    if top == 0.0:
        return 0.0
    # scale by the largest value so v**q cannot underflow or overflow
    return top * float(np.mean((v / top) ** q) ** (1.0 / q))

"""Empirical and multiplier bootstrap for ``sqrt(n) ||Sigma_hat* - Sigma_hat||_op``.

Every replicate is written as ``(1/sqrt(n)) ||sum_i xi_i x_i x_i^T||_op`` for
a weight vector ``xi``.  The empirical bootstrap corresponds to
``xi_i = count_i - 1`` where the counts come from ``n`` index draws with
replacement, so it agrees exactly with resampling the rows.

Replicate ``b`` draws its weights from ``stream(derive_seed(seed, b))``.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .covariance import operator_norms_batched, symmetrize
from .errors import ConfigError
from .metrics import ScalarSample
from .rng import derive_seed, stream

# Replicates processed per batched eigen-solve; fixed so results never
# depend on how work is scheduled.
CHUNK = 64


class MultiplierLaw(str, enum.Enum):
    MULTINOMIAL_MINUS_ONE = "multinomial_minus_one"
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"

    def weights(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self is MultiplierLaw.MULTINOMIAL_MINUS_ONE:
            idx = rng.integers(0, n, size=n)
            return np.bincount(idx, minlength=n).astype(float) - 1.0
        if self is MultiplierLaw.GAUSSIAN:
            return rng.standard_normal(n)
        return 2.0 * rng.integers(0, 2, size=n).astype(float) - 1.0


def parse_law(law) -> MultiplierLaw:
    try:
        return MultiplierLaw(law)
    except ValueError:
        raise ConfigError(f"unknown multiplier law {law!r}", key="law") from None


def replicate_weights(law, n: int, seed: int, b: int) -> np.ndarray:
    """Weights of replicate ``b``."""
    return parse_law(law).weights(stream(derive_seed(seed, b)), n)


def resample_indices(n: int, seed: int, b: int) -> np.ndarray:
    """Row indices drawn with replacement by empirical-bootstrap replicate ``b``."""
    return stream(derive_seed(seed, b)).integers(0, n, size=n)


def _prepared(data, k):
    x = np.asarray(getattr(data, "values", data), dtype=float)
    if x.ndim != 2:
        raise ConfigError(f"expected an n x p array, got shape {x.shape}")
    p = x.shape[1]
    if k is not None and not 1 <= k <= p:
        raise ConfigError(f"k must lie in [1, {p}], got {k}", key="k")
    return x if k is None else x[:, :k]


def _dual_root(x: np.ndarray) -> np.ndarray:
    gram = symmetrize(x @ x.T)
    w, u = np.linalg.eigh(gram)
    return symmetrize((u * np.sqrt(np.clip(w, 0.0, None))) @ u.T)


def bootstrap_values(data, law, replicates: int, seed: int, k: int | None = None, dual: bool = False) -> np.ndarray:
    """Replicate values in replicate order (``values[b]`` belongs to replicate ``b``).

    With ``dual`` the norm is computed from the ``n x n`` matrix
    ``G^{1/2} diag(xi) G^{1/2}``, ``G = X X^T``, which has the same nonzero
    spectrum as ``X^T diag(xi) X``; it pays off when ``n < p``.
    """
    law = parse_law(law)
    if replicates < 1:
        raise ConfigError(f"replicates must be positive, got {replicates}", key="bootstrap_replicates")
    x = _prepared(data, k)
    n = x.shape[0]
    if dual:
        h = _dual_root(x)
        left, right = h, h
    else:
        left, right = x.T, x
    out = np.empty(replicates)
    for start in range(0, replicates, CHUNK):
        stop = min(start + CHUNK, replicates)
        mats = np.stack([_replicate_matrix(left, right, law.weights(stream(derive_seed(seed, b)), n)) for b in range(start, stop)])
        out[start:stop] = operator_norms_batched(mats) / math.sqrt(n)
    return out


def _replicate_matrix(left: np.ndarray, right: np.ndarray, w: np.ndarray) -> np.ndarray:
    # One 2-d product per replicate so a replicate never depends on its batch.
    return symmetrize((left * w) @ right)


def bootstrap_norms(data, law, replicates: int, seed: int, k: int | None = None, dual: bool = False) -> ScalarSample:
    """Bootstrap sample of ``sqrt(n) ||Sigma_hat* - Sigma_hat||_op`` (optionally k-projected)."""
    return ScalarSample(bootstrap_values(data, law, replicates, seed, k=k, dual=dual))


def bootstrap_replicate(data, law, seed: int, b: int, k: int | None = None) -> float:
    """Recompute the single replicate ``b`` (same value as in :func:`bootstrap_values`)."""
    x = _prepared(data, k)
    n = x.shape[0]
    w = parse_law(law).weights(stream(derive_seed(seed, b)), n)
    mat = _replicate_matrix(x.T, x, w)
    return float(operator_norms_batched(mat[None])[0] / math.sqrt(n))

"""Sample covariance, operator norms and the statistic ``T_n``.

Symmetric matrices are plain ``numpy`` arrays; :func:`symmetrize` is the
constructor that enforces exact symmetry where it matters.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import ConfigError, NumericalError

# Above this dimension the operator norm switches from a full
# eigendecomposition to Lanczos iteration for the extreme eigenvalues.
DENSE_EIG_MAX_DIM = 512


def _values(data) -> np.ndarray:
    return np.asarray(getattr(data, "values", data), dtype=float)


def symmetrize(a) -> np.ndarray:
    """Return ``(a + a.T) / 2``; the result is exactly symmetric."""
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ConfigError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sample_covariance(data) -> np.ndarray:
    """``(1/n) sum_i x_i x_i^T`` without mean-centering."""
    x = _values(data)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigError(f"expected an n x p array with n >= 1, got shape {x.shape}")
    return symmetrize(x.T @ x / x.shape[0])


def operator_norm_sym(a) -> float:
    """Spectral radius of a symmetric matrix, ``max |eigenvalue|``."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    if d == 0:
        return 0.0
    if d <= DENSE_EIG_MAX_DIM:
        try:
            ev = np.linalg.eigvalsh(a)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"symmetric eigensolver failed on a {d}x{d} matrix: {exc}") from exc
        return float(max(-ev[0], ev[-1]))
    # fixed start vector: ARPACK otherwise seeds itself randomly and repeated calls differ
    v0 = np.full(d, 1.0 / math.sqrt(d))
    try:
        ev = eigsh(a, k=1, which="LM", v0=v0, return_eigenvectors=False, tol=1e-12, maxiter=20 * d)
    except ArpackNoConvergence as exc:
        raise NumericalError(f"Lanczos iteration did not converge on a {d}x{d} matrix: {exc}") from exc
    return float(abs(ev[0]))


def operator_norms_batched(stack: np.ndarray) -> np.ndarray:
    """Operator norms of a stack of symmetric matrices with shape ``(m, d, d)``."""
    stack = np.asarray(stack, dtype=float)
    if stack.shape[-1] > DENSE_EIG_MAX_DIM:
        return np.array([operator_norm_sym(a) for a in stack])
    try:
        ev = np.linalg.eigvalsh(stack)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"batched symmetric eigensolver failed: {exc}") from exc
    return np.maximum(-ev[..., 0], ev[..., -1])


def frobenius(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float)))


def _check_sigma(x: np.ndarray, sigma: np.ndarray) -> None:
    if sigma.shape != (x.shape[1], x.shape[1]):
        raise ConfigError(f"sigma has shape {sigma.shape} but the data have {x.shape[1]} columns")


def projected_t_statistic(data, sigma, k: int) -> float:
    """``sqrt(n) ||Sigma_hat_k - Sigma_k||_op`` on the leading ``k x k`` blocks."""
    x = _values(data)
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(x, sigma)
    p = x.shape[1]
    if not 1 <= k <= p:
        raise ConfigError(f"k must lie in [1, {p}], got {k}", key="k")
    xk = x[:, :k]
    diff = sample_covariance(xk) - sigma[:k, :k]
    return math.sqrt(x.shape[0]) * operator_norm_sym(diff)


def t_statistic(data, sigma) -> float:
    """``T_n = sqrt(n) ||Sigma_hat - Sigma||_op``."""
    x = _values(data)
    return projected_t_statistic(x, sigma, x.shape[1])


def projected_t_statistics(data, sigma, ks) -> np.ndarray:
    """``T_{n,k}`` for every ``k`` in ``ks`` from one sample covariance."""
    x = _values(data)
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(x, sigma)
    diff = sample_covariance(x) - sigma
    root_n = math.sqrt(x.shape[0])
    out = []
    for k in ks:
        if not 1 <= k <= x.shape[1]:
            raise ConfigError(f"k must lie in [1, {x.shape[1]}], got {k}", key="k")
        out.append(root_n * operator_norm_sym(diff[:k, :k]))
    return np.array(out)


def k_index(n: int, beta: float, dim: int) -> int:
    """Projection dimension ``ceil(min(n^(1/(2 beta + 4)), dim))``."""
    if not beta > 0.5:
        raise ConfigError(f"k_index needs beta > 1/2, got {beta}", key="beta")
    v = n ** (1.0 / (2.0 * beta + 4.0))
    # Snap exact integer roots (10^6 at beta=1 evaluates to 9.999...).
    if abs(v - round(v)) < 1e-9 * max(1.0, v):
        v = float(round(v))
    return int(math.ceil(min(v, dim)))

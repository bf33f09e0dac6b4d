"""Linear operators on the space of symmetric matrices.

The space of symmetric ``d x d`` matrices with inner product ``tr(AB)`` is
identified with R^q, ``q = d(d+1)/2``, through the half-vectorization
isometry ``sym_vec``: diagonal entries first, then the strict upper
triangle in row-major order scaled by ``sqrt(2)``.  An operator on the
matrix space is then an ordinary ``q x q`` matrix (:class:`SymOperatorRep`).

The fourth-moment operator ``J`` of a random vector ``v`` is the covariance
operator of ``v v^T``; ``C`` is the same object for the (unwhitened) data,
``C = (S ⊗ S) J (S ⊗ S)`` with ``S = Sigma_k^{1/2}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .covariance import operator_norms_batched
from .errors import ConfigError, NumericalError
from .metrics import ScalarSample
from .rng import stream

ORDERING = "diag-first"

# Relative eigenvalue cut-off below which an operator is treated as singular
# when an inverse square root is requested.
SINGULAR_RTOL = 1e-12
# Negative eigenvalues above -PSD_ATOL * max(1, lambda_max) are clipped to 0.
PSD_ATOL = 1e-10


def sym_dim(q: int) -> int:
    """Matrix dimension ``d`` with ``d(d+1)/2 == q``."""
    d = int(round((math.sqrt(8 * q + 1) - 1) / 2))
    if d < 1 or d * (d + 1) // 2 != q:
        raise ConfigError(f"length {q} is not of the form d(d+1)/2")
    return d


def _slots(d: int):
    iu, ju = np.triu_indices(d, 1)
    return iu, ju


def sym_vec(a) -> np.ndarray:
    """Half-vectorize a symmetric matrix (or a stack ``(..., d, d)``)."""
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    iu, ju = _slots(d)
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    off = math.sqrt(2.0) * a[..., iu, ju]
    return np.concatenate([diag, off], axis=-1)


def sym_unvec(v) -> np.ndarray:
    """Inverse of :func:`sym_vec`."""
    v = np.asarray(v, dtype=float)
    q = v.shape[-1]
    d = sym_dim(q)
    iu, ju = _slots(d)
    out = np.zeros(v.shape[:-1] + (d, d))
    idx = np.arange(d)
    out[..., idx, idx] = v[..., :d]
    off = v[..., d:] / math.sqrt(2.0)
    out[..., iu, ju] = off
    out[..., ju, iu] = off
    return out


def outer_vec(z) -> np.ndarray:
    """``sym_vec(z_i z_i^T)`` for each row ``z_i`` of an ``n x d`` array."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    iu, ju = _slots(d)
    return np.concatenate([z * z, math.sqrt(2.0) * z[..., iu] * z[..., ju]], axis=-1)


@dataclass(frozen=True, eq=False)
class SymOperatorRep:
    """A linear operator on symmetric ``d x d`` matrices in ``sym_vec`` coordinates."""

    d: int
    rep: np.ndarray

    def __post_init__(self):
        r = np.array(self.rep, dtype=float)
        q = self.d * (self.d + 1) // 2
        if r.shape != (q, q):
            raise ConfigError(f"operator on {self.d}x{self.d} matrices needs a {q}x{q} rep, got {r.shape}")
        r.setflags(write=False)
        object.__setattr__(self, "rep", r)

    @property
    def q(self) -> int:
        return self.rep.shape[0]

    def __call__(self, a) -> np.ndarray:
        """Apply to a symmetric matrix, returning a symmetric matrix."""
        return sym_unvec(self.rep @ sym_vec(a))

    def quadratic_form(self, a) -> float:
        v = sym_vec(a)
        return float(v @ self.rep @ v)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.rep + self.rep.T))

    def header(self) -> dict:
        return {"d": int(self.d), "q": int(self.q), "ordering": ORDERING}

    def to_bytes(self) -> bytes:
        """JSON header line followed by the row-major float64 (little-endian) entries."""
        head = json.dumps(self.header(), sort_keys=True).encode() + b"\n"
        return head + np.ascontiguousarray(self.rep, dtype="<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SymOperatorRep":
        head, _, body = blob.partition(b"\n")
        meta = json.loads(head)
        if meta.get("ordering") != ORDERING:
            raise ConfigError(f"unsupported ordering {meta.get('ordering')!r}", key="ordering")
        q = int(meta["q"])
        rep = np.frombuffer(body, dtype="<f8")
        if rep.size != q * q:
            raise ConfigError(f"expected {q * q} entries, found {rep.size}")
        return cls(int(meta["d"]), rep.reshape(q, q))

    def to_dict(self) -> dict:
        return {**self.header(), "data": self.rep.ravel().tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "SymOperatorRep":
        q = int(obj["q"])
        return cls(int(obj["d"]), np.asarray(obj["data"], dtype=float).reshape(q, q))


def _rep(x) -> np.ndarray:
    return x.rep if isinstance(x, SymOperatorRep) else np.asarray(x, dtype=float)


def _wrap(rep: np.ndarray) -> SymOperatorRep:
    return SymOperatorRep(sym_dim(rep.shape[0]), rep)


def _psd_sqrt(s: np.ndarray, what: str) -> np.ndarray:
    w, u = np.linalg.eigh(0.5 * (s + s.T))
    floor = -PSD_ATOL * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w[0] < floor:
        raise NumericalError(f"{what} is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T


def sym_conjugation_rep(s) -> SymOperatorRep:
    """Rep of ``A -> S A S`` (the symmetric Kronecker map ``S ⊗ S``)."""
    s = np.asarray(s, dtype=float)
    d = s.shape[0]
    q = d * (d + 1) // 2
    basis = sym_unvec(np.eye(q))
    images = sym_vec(s @ basis @ s)  # row k = psi(S E_k S)
    return SymOperatorRep(d, images.T)


# ---------------------------------------------------------------------------
# Analytic fourth-moment operators
# ---------------------------------------------------------------------------


def _diag_selector(d: int) -> np.ndarray:
    q = d * (d + 1) // 2
    sel = np.zeros(q)
    sel[:d] = 1.0
    return sel


def analytic_J_iid(d: int, var_zeta_sq: float) -> SymOperatorRep:
    """``<A, J A> = 2||A||_F^2 + (var(zeta^2) - 2) sum_j A_jj^2`` for i.i.d. scores."""
    q = d * (d + 1) // 2
    rep = 2.0 * np.eye(q) + np.diag((var_zeta_sq - 2.0) * _diag_selector(d))
    return SymOperatorRep(d, rep)


def analytic_J_elliptical(d: int, r_p: float) -> SymOperatorRep:
    """``<A, J A> = (r_p - 1) tr(A)^2 + 2 r_p ||A||_F^2``."""
    q = d * (d + 1) // 2
    v = _diag_selector(d)
    return SymOperatorRep(d, 2.0 * r_p * np.eye(q) + (r_p - 1.0) * np.outer(v, v))


def analytic_J_scale_mixture(d: int, var_eta_sq: float) -> SymOperatorRep:
    """Gaussian scale mixture ``eta * W``:
    ``<A, J A> = tr(A)^2 var(eta^2) + 2 ||A||_F^2 (var(eta^2) + 1)``."""
    q = d * (d + 1) // 2
    v = _diag_selector(d)
    return SymOperatorRep(d, 2.0 * (var_eta_sq + 1.0) * np.eye(q) + var_eta_sq * np.outer(v, v))


# ---------------------------------------------------------------------------
# Empirical operators
# ---------------------------------------------------------------------------


def empirical_J(scores, centered: bool = True) -> SymOperatorRep:
    """``(1/n) sum_i psi(z_i z_i^T - m) psi(z_i z_i^T - m)^T``.

    ``m`` is the sample mean of ``z z^T`` when ``centered`` is true and the
    identity otherwise.
    """
    z = np.asarray(scores, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ConfigError(f"scores must be an n x d array with n >= 2, got shape {z.shape}")
    psi = outer_vec(z)
    if centered:
        psi -= psi.mean(axis=0)
    else:
        psi[:, : z.shape[1]] -= 1.0
    rep = psi.T @ psi / z.shape[0]
    return SymOperatorRep(z.shape[1], 0.5 * (rep + rep.T))


def build_C(sigma_k, j_rep) -> SymOperatorRep:
    """``(S ⊗ S) J (S ⊗ S)`` with ``S = sigma_k^{1/2}``."""
    sigma_k = np.asarray(sigma_k, dtype=float)
    j = _rep(j_rep)
    d = sigma_k.shape[0]
    if j.shape[0] != d * (d + 1) // 2:
        raise ConfigError(f"J acts on {sym_dim(j.shape[0])}x{sym_dim(j.shape[0])} matrices, sigma_k is {d}x{d}")
    r = sym_conjugation_rep(_psd_sqrt(sigma_k, "sigma_k")).rep
    c = r @ j @ r
    return SymOperatorRep(d, 0.5 * (c + c.T))


def empirical_C(data, k: int) -> SymOperatorRep:
    """Covariance operator of ``Y* Y*^T`` under resampling, on the leading ``k`` coordinates."""
    x = np.asarray(getattr(data, "values", data), dtype=float)
    if not 1 <= k <= x.shape[1]:
        raise ConfigError(f"k must lie in [1, {x.shape[1]}], got {k}", key="k")
    return empirical_J(x[:, :k], centered=True)


# ---------------------------------------------------------------------------
# Gaussian proxies
# ---------------------------------------------------------------------------


def gaussian_factor(c_rep) -> np.ndarray:
    """Spectral square root ``L`` with ``L L^T = C`` (small negative eigenvalues clipped)."""
    return _psd_sqrt(_rep(c_rep), "covariance operator")


def sample_gaussian_norms(c_rep, count: int, seed: int) -> ScalarSample:
    """Operator norms of ``count`` draws of the centered Gaussian matrix with covariance operator ``C``."""
    if count < 1:
        raise ConfigError(f"count must be positive, got {count}", key="count")
    c = _rep(c_rep)
    factor = gaussian_factor(c)
    g = stream(seed).standard_normal((count, c.shape[0]))
    out = np.empty(count)
    chunk = 4096
    for start in range(0, count, chunk):
        v = g[start : start + chunk] @ factor.T
        out[start : start + chunk] = operator_norms_batched(sym_unvec(v))
    return ScalarSample(out)


class KLResult(NamedTuple):
    kl: float
    pinsker: float


def kl_gaussian(c_rep, c_hat_rep) -> KLResult:
    """KL divergence of ``N(0, C_hat)`` from ``N(0, C)`` and its Pinsker bound.

    ``KL = (tr(C^-1 C_hat) - q - log det(C^-1 C_hat)) / 2``, evaluated from
    the generalized eigenvalues of the pencil ``(C_hat, C)``.
    """
    c = _rep(c_rep)
    ch = _rep(c_hat_rep)
    if c.shape != ch.shape:
        raise ConfigError(f"operator shapes differ: {c.shape} vs {ch.shape}")
    if np.array_equal(c, ch):
        return KLResult(0.0, 0.0)
    try:
        mu = linalg.eigh(0.5 * (ch + ch.T), 0.5 * (c + c.T), eigvals_only=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"C is singular or not positive definite: {exc}") from exc
    if np.any(mu <= 0.0):
        return KLResult(math.inf, math.inf)
    delta = mu - 1.0
    kl = 0.5 * float(np.sum(delta - np.log1p(delta)))
    kl = max(kl, 0.0)
    return KLResult(kl, math.sqrt(kl / 2.0))


def inverse_sqrt(c_rep) -> np.ndarray:
    c = _rep(c_rep)
    w, u = np.linalg.eigh(0.5 * (c + c.T))
    top = float(np.max(np.abs(w)))
    if top == 0.0 or w[0] <= SINGULAR_RTOL * top:
        raise NumericalError(f"operator is singular (eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}])")
    return (u / np.sqrt(w)) @ u.T


def isotropize(c_rep, samples, center=None) -> np.ndarray:
    """``C^{-1/2} psi(sample_i - center)`` for each symmetric matrix sample.

    ``center`` defaults to the sample mean of ``samples``; pass the
    population mean (e.g. ``Sigma_k``) for the population-centered version.
    Returns an ``n x q`` array of ``sym_vec`` coordinates.
    """
    root = inverse_sqrt(c_rep)
    psi = sym_vec(np.asarray(samples, dtype=float))
    if center is None:
        psi = psi - psi.mean(axis=0)
    else:
        psi = psi - sym_vec(center)
    return psi @ root


def isotropize_vectors(c_rep, y, center=None) -> np.ndarray:
    """:func:`isotropize` applied to the rank-one samples ``y_i y_i^T`` without forming them."""
    root = inverse_sqrt(c_rep)
    psi = outer_vec(y)
    psi = psi - (psi.mean(axis=0) if center is None else sym_vec(center))
    return psi @ root


# ---------------------------------------------------------------------------
# Ranks
# ---------------------------------------------------------------------------


def _psd_checked(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    if not np.any(w != 0.0):
        raise ConfigError("rank functionals are undefined for the zero matrix")
    if w[0] < -PSD_ATOL * max(1.0, float(np.max(np.abs(w)))):
        raise ConfigError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    return np.clip(w, 0.0, None)


def stable_rank(a) -> float:
    """``tr(A)^2 / ||A||_F^2``."""
    w = _psd_checked(a)
    return float(w.sum() ** 2 / np.sum(w * w))


def effective_rank(a) -> float:
    """``tr(A) / ||A||_op``."""
    w = _psd_checked(a)
    return float(w.sum() / w.max())

"""Data-generating models.

Three families are supported, all expressed in the eigenbasis of the
population covariance (so the covariance is diagonal and the loading
matrix ``M = Sigma^{1/2}`` is diagonal too):

* ``kl``   -- Karhunen-Loeve expansion with i.i.d. standardized scores,
  ``x_j = sqrt(lambda_j) * zeta_j``.
* ``mp``   -- Marchenko-Pastur (independent components), ``x = Sigma^{1/2} z``
  with i.i.d. standardized entries of ``z``.  In eigen-coordinates this has
  the same law as ``kl``; it is kept as a separate family for bookkeeping.
* ``elliptical`` -- ``x = Sigma^{1/2} (eta * u)`` with ``u`` uniform on the
  unit sphere of R^p and ``eta^2`` drawn from an ``EtaLaw`` with mean ``p``.

Eigenvalues follow the power law ``lambda_j = scale * j^(-2 beta)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import special

from .errors import ConfigError
from .rng import stream

__all__ = [
    "SpectrumSpec",
    "ScoreKind",
    "ScoreLaw",
    "EtaKind",
    "EtaLaw",
    "Family",
    "ModelSpec",
    "Dataset",
    "eigen_spectrum",
    "sample_dataset",
    "population_covariance",
    "truncation_dimension",
    "standardized_scores",
    "fourth_moment_operator",
]


# ---------------------------------------------------------------------------
# Spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumSpec:
    """Power-law spectrum ``scale * j^(-2 beta)`` truncated at ``p`` terms."""

    beta: float
    p: int
    scale: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.p, (int, np.integer)) and self.p >= 1):
            raise ConfigError(f"p must be a positive integer, got {self.p!r}", key="p")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ConfigError(f"beta must be positive, got {self.beta!r}", key="beta")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ConfigError(f"scale must be positive, got {self.scale!r}", key="scale")

    def eigenvalues(self) -> np.ndarray:
        j = np.arange(1, self.p + 1, dtype=float)
        return self.scale * j ** (-2.0 * self.beta)


def eigen_spectrum(spec: SpectrumSpec) -> np.ndarray:
    """Eigenvalues ``(scale * j^(-2 beta))_{j=1..p}``, strictly decreasing."""
    return spec.eigenvalues()


def truncation_dimension(beta: float, tail_fraction: float) -> int:
    """Smallest ``p`` whose discarded spectral tail is at most ``tail_fraction``
    of the full trace.

    The tail ``sum_{j>p} j^(-2 beta)`` is bounded by the integral estimate
    ``p^(1-2 beta) / (2 beta - 1)``, so the returned ``p`` is guaranteed to
    satisfy the condition (it may exceed the exact minimal ``p`` by a little).
    """
    if not beta > 0.5:
        raise ConfigError(
            f"beta must exceed 1/2 for the trace to converge (got {beta}); set p manually",
            key="beta",
        )
    if not 0.0 < tail_fraction < 1.0:
        raise ConfigError(f"tail_fraction must be in (0, 1), got {tail_fraction}", key="tail_fraction")
    total = float(special.zeta(2.0 * beta))
    target = tail_fraction * total
    # p^(1-2b)/(2b-1) <= target  <=>  p >= ((2b-1) target)^(-1/(2b-1))
    p = max(1, math.ceil(((2.0 * beta - 1.0) * target) ** (-1.0 / (2.0 * beta - 1.0))))
    # Guard against rounding at the boundary.
    while p > 1 and (p - 1) ** (1.0 - 2.0 * beta) / (2.0 * beta - 1.0) <= target:
        p -= 1
    while p ** (1.0 - 2.0 * beta) / (2.0 * beta - 1.0) > target:
        p += 1
    return p


# ---------------------------------------------------------------------------
# Score and radial laws
# ---------------------------------------------------------------------------


class ScoreKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    STANDARDIZED_UNIFORM = "standardized_uniform"
    STANDARDIZED_EXPONENTIAL = "standardized_exponential"
    RADEMACHER = "rademacher"
    STANDARDIZED_STUDENT_T = "standardized_student_t"


# Student-t scores with df at or below this violate the moment-growth condition
# badly enough to be treated as a negative control.
STUDENT_T_CONTROL_DF = 8.0


@dataclass(frozen=True)
class ScoreLaw:
    """A mean-zero, unit-variance law for i.i.d. scores."""

    kind: ScoreKind = ScoreKind.GAUSSIAN
    df: float | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ScoreKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown score_law {self.kind!r}", key="score_law") from None
        if self.kind is ScoreKind.STANDARDIZED_STUDENT_T:
            if self.df is None or not self.df > 2:
                raise ConfigError(
                    f"standardized_student_t needs df > 2 for unit variance, got {self.df!r}", key="df"
                )
        elif self.df is not None:
            raise ConfigError(f"df is only meaningful for student-t scores (kind={self.kind.value})", key="df")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        k = self.kind
        if k is ScoreKind.GAUSSIAN:
            return rng.standard_normal(size)
        if k is ScoreKind.STANDARDIZED_UNIFORM:
            return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
        if k is ScoreKind.STANDARDIZED_EXPONENTIAL:
            return rng.standard_exponential(size) - 1.0
        if k is ScoreKind.RADEMACHER:
            return 2.0 * rng.integers(0, 2, size).astype(float) - 1.0
        df = float(self.df)
        return rng.standard_t(df, size) * math.sqrt((df - 2.0) / df)

    def var_of_square(self) -> float:
        """Exact ``var(zeta^2) = E zeta^4 - 1``."""
        k = self.kind
        if k is ScoreKind.GAUSSIAN:
            return 2.0
        if k is ScoreKind.STANDARDIZED_UNIFORM:
            return 4.0 / 5.0
        if k is ScoreKind.STANDARDIZED_EXPONENTIAL:
            return 8.0
        if k is ScoreKind.RADEMACHER:
            return 0.0
        df = float(self.df)
        if df <= 4.0:
            return math.inf
        # E t^4 = 3 df^2 / ((df-2)(df-4)); after scaling to unit variance
        # E zeta^4 = 3 (df-2)/(df-4).
        return (2.0 * df - 2.0) / (df - 4.0)

    @property
    def is_negative_control(self) -> bool:
        if self.kind is ScoreKind.RADEMACHER:
            return True
        if self.kind is ScoreKind.STANDARDIZED_STUDENT_T:
            return float(self.df) <= STUDENT_T_CONTROL_DF
        return False


class EtaKind(str, enum.Enum):
    CHI_SQUARED_P = "chi_squared_p"
    GAMMA_P_1 = "gamma_p_1"
    SCALED_NEGATIVE_BINOMIAL = "scaled_negative_binomial"


@dataclass(frozen=True)
class EtaLaw:
    """Law of the squared radius ``eta^2`` in the elliptical family.

    Every kind is a sum of ``p`` i.i.d. positive terms with mean one, hence
    ``E eta^2 = p`` and ``E(Z Z^T) = I``.  The negative-binomial kind counts
    trials until the ``p``-th success (success probability ``tau``) and is
    multiplied by ``tau``.
    """

    kind: EtaKind = EtaKind.CHI_SQUARED_P
    tau: float | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", EtaKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown eta_law {self.kind!r}", key="eta_law") from None
        if self.kind is EtaKind.SCALED_NEGATIVE_BINOMIAL:
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise ConfigError(f"tau must lie in (0, 1), got {self.tau!r}", key="tau")
        elif self.tau is not None:
            raise ConfigError("tau is only meaningful for scaled_negative_binomial", key="tau")

    def sample(self, rng: np.random.Generator, p: int, size) -> np.ndarray:
        if p < 1:
            raise ConfigError(f"eta_law {self.kind.value} needs p >= 1, got {p}", key="p")
        if self.kind is EtaKind.CHI_SQUARED_P:
            return rng.chisquare(p, size)
        if self.kind is EtaKind.GAMMA_P_1:
            return rng.gamma(p, 1.0, size)
        tau = float(self.tau)
        # numpy counts failures before the p-th success; add p for trials.
        return tau * (rng.negative_binomial(p, tau, size) + p).astype(float)

    def var(self, p: int) -> float:
        """``var(eta^2)``."""
        if self.kind is EtaKind.CHI_SQUARED_P:
            return 2.0 * p
        if self.kind is EtaKind.GAMMA_P_1:
            return float(p)
        return p * (1.0 - float(self.tau))

    def r_p(self, p: int) -> float:
        """``E ||Z||^4 / (p (p + 2))`` with ``E ||Z||^2 = p``."""
        return (p * p + self.var(p)) / (p * (p + 2.0))


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


class Family(str, enum.Enum):
    KL = "kl"
    ELLIPTICAL = "elliptical"
    MP = "mp"


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    spectrum: SpectrumSpec
    score_law: ScoreLaw | None = None
    eta_law: EtaLaw | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            raise ConfigError(f"unknown family {self.family!r}", key="family") from None
        if self.family is Family.ELLIPTICAL:
            if self.eta_law is None:
                object.__setattr__(self, "eta_law", EtaLaw())
            if self.score_law is not None:
                raise ConfigError("elliptical models take eta_law, not score_law", key="score_law")
        else:
            if self.score_law is None:
                object.__setattr__(self, "score_law", ScoreLaw())
            if self.eta_law is not None:
                raise ConfigError(f"{self.family.value} models take score_law, not eta_law", key="eta_law")

    @classmethod
    def kl(cls, beta, p, score_law="gaussian", scale=1.0, df=None) -> "ModelSpec":
        return cls(Family.KL, SpectrumSpec(beta, p, scale), score_law=ScoreLaw(score_law, df))

    @classmethod
    def mp(cls, beta, p, score_law="gaussian", scale=1.0, df=None) -> "ModelSpec":
        return cls(Family.MP, SpectrumSpec(beta, p, scale), score_law=ScoreLaw(score_law, df))

    @classmethod
    def elliptical(cls, beta, p, eta_law="chi_squared_p", scale=1.0, tau=None) -> "ModelSpec":
        return cls(Family.ELLIPTICAL, SpectrumSpec(beta, p, scale), eta_law=EtaLaw(eta_law, tau))

    @property
    def p(self) -> int:
        return self.spectrum.p

    @property
    def beta(self) -> float:
        return self.spectrum.beta

    def with_spectrum(self, **changes) -> "ModelSpec":
        s = self.spectrum
        spec = SpectrumSpec(changes.get("beta", s.beta), changes.get("p", s.p), changes.get("scale", s.scale))
        return ModelSpec(self.family, spec, self.score_law, self.eta_law)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "family": self.family.value,
            "beta": float(self.spectrum.beta),
            "p": int(self.spectrum.p),
            "scale": float(self.spectrum.scale),
        }
        if self.score_law is not None:
            d["score_law"] = self.score_law.kind.value
            if self.score_law.df is not None:
                d["df"] = float(self.score_law.df)
        if self.eta_law is not None:
            d["eta_law"] = self.eta_law.kind.value
            if self.eta_law.tau is not None:
                d["tau"] = float(self.eta_law.tau)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        if not isinstance(d, dict):
            raise ConfigError("model must be a JSON object", key="model")
        for key in ("family", "beta", "p"):
            if key not in d:
                raise ConfigError(f"model is missing required key '{key}'", key=key)
        family = d["family"]
        spectrum = SpectrumSpec(float(d["beta"]), _as_int(d["p"], "p"), float(d.get("scale", 1.0)))
        if family == Family.ELLIPTICAL.value:
            eta = EtaLaw(d.get("eta_law", EtaKind.CHI_SQUARED_P.value), d.get("tau"))
            if "score_law" in d or "df" in d:
                raise ConfigError("elliptical models take eta_law, not score_law", key="score_law")
            return cls(family, spectrum, eta_law=eta)
        if "eta_law" in d or "tau" in d:
            raise ConfigError(f"{family} models take score_law, not eta_law", key="eta_law")
        df = d.get("df")
        return cls(family, spectrum, score_law=ScoreLaw(d.get("score_law", "gaussian"), None if df is None else float(df)))


def _as_int(value, key: str) -> int:
    if isinstance(value, bool) or not float(value).is_integer():
        raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
    return int(value)


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` observations (rows) in eigen-coordinates."""

    values: np.ndarray
    model: ModelSpec
    seed: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2:
            raise ConfigError(f"dataset needs an n x p array with n >= 2, got shape {v.shape}")
        if v.shape[1] != self.model.p:
            raise ConfigError(f"dataset has {v.shape[1]} columns but the model has p={self.model.p}", key="p")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def _draw_z(model: ModelSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    p = model.p
    if model.family is Family.ELLIPTICAL:
        g = rng.standard_normal((n, p))
        u = g / np.linalg.norm(g, axis=1, keepdims=True)
        eta_sq = model.eta_law.sample(rng, p, n)
        return u * np.sqrt(eta_sq)[:, None]
    return model.score_law.sample(rng, (n, p))


def sample_dataset(model: ModelSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` observations; deterministic in ``(model, n, seed)``."""
    if n < 2:
        raise ConfigError(f"n must be at least 2, got {n}", key="n")
    z = _draw_z(model, int(n), stream(seed))
    x = z * np.sqrt(model.spectrum.eigenvalues())
    return Dataset(x, model, int(seed))


def population_covariance(model: ModelSpec) -> np.ndarray:
    return np.diag(model.spectrum.eigenvalues())


def standardized_scores(data: Dataset, k: int | None = None) -> np.ndarray:
    """Scores ``zeta_ij = x_ij / sqrt(lambda_j)`` for the leading ``k`` coordinates."""
    k = data.p if k is None else k
    lam = data.model.spectrum.eigenvalues()[:k]
    return data.values[:, :k] / np.sqrt(lam)


def fourth_moment_operator(model: ModelSpec, d: int):
    """Analytic covariance operator of ``zeta zeta^T`` for the leading ``d`` scores."""
    from . import symspace

    if not 1 <= d <= model.p:
        raise ConfigError(f"d must lie in [1, {model.p}], got {d}", key="k")
    if model.family is Family.ELLIPTICAL:
        return symspace.analytic_J_elliptical(d, model.eta_law.r_p(model.p))
    return symspace.analytic_J_iid(d, model.score_law.var_of_square())

"""Analytic-versus-empirical checks behind ``covop theory-check``."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .models import ModelSpec, fourth_moment_operator, sample_dataset, standardized_scores
from .rng import TAG_PROBE, derive_seed, stream
from .symspace import (
    analytic_J_elliptical,
    analytic_J_iid,
    analytic_J_scale_mixture,
    kl_gaussian,
    outer_vec,
    sym_conjugation_rep,
    sym_vec,
)

SPECTRUM_TOL = 1e-10


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str


def _random_sym(rng, d):
    a = rng.standard_normal((d, d))
    return 0.5 * (a + a.T)


def closed_form_spectra_error(d_max: int = 10) -> float:
    """Largest deviation of the analytic J spectra from their closed forms over d = 2..d_max."""
    worst = 0.0
    for d in range(2, d_max + 1):
        q = d * (d + 1) // 2
        for v in (0.0, 0.8, 2.0, 8.0):
            expect = np.sort(np.r_[np.full(q - d, 2.0), np.full(d, v)])
            worst = max(worst, float(np.max(np.abs(analytic_J_iid(d, v).eigenvalues() - expect))))
        for r in (0.9, 1.0, 1.2):
            expect = np.sort(np.r_[np.full(q - 1, 2 * r), (r - 1) * d + 2 * r])
            worst = max(worst, float(np.max(np.abs(analytic_J_elliptical(d, r).eigenvalues() - expect))))
        for v in (0.0, 0.5, 1.0):
            top = analytic_J_scale_mixture(d, v).eigenvalues()[-1]
            worst = max(worst, abs(float(top) - ((d + 2) * v + 2)))
    return worst


def quadratic_form_zscores(model: ModelSpec, d: int, draws: int, seed: int, n_mat: int = 20) -> np.ndarray:
    """z-scores of ``var <A, zeta zeta^T>`` against ``psi(A)^T J psi(A)`` for random ``A``."""
    data = sample_dataset(model.with_spectrum(p=max(d, model.p)), draws, seed)
    z = standardized_scores(data, d)
    psi = outer_vec(z)
    j = fourth_moment_operator(data.model, d)
    rng = stream(derive_seed(seed, TAG_PROBE))
    out = []
    for _ in range(n_mat):
        a = sym_vec(_random_sym(rng, d))
        s = psi @ a
        dev2 = (s - s.mean()) ** 2
        se = dev2.std(ddof=1) / math.sqrt(draws)
        out.append((dev2.mean() * draws / (draws - 1) - float(a @ j.rep @ a)) / se)
    return np.array(out)


def run_checks(seed: int = 0, draws: int = 200_000) -> list[Check]:
    checks = []
    rng = stream(derive_seed(seed, TAG_PROBE, 0))

    a, b = _random_sym(rng, 6), _random_sym(rng, 6)
    err = abs(float(sym_vec(a) @ sym_vec(b)) - float(np.trace(a @ b)))
    checks.append(Check("psi_isometry", bool(err <= 1e-12 * np.linalg.norm(a) * np.linalg.norm(b)), f"|<psi(A),psi(B)> - tr(AB)| = {err:.2e}"))

    g = analytic_J_iid(3, 2.0).rep
    checks.append(Check("gaussian_J_is_2I", bool(np.array_equal(g, 2.0 * np.eye(6))), "analytic_J_iid(3, 2) == 2 I_6"))

    worst = closed_form_spectra_error()
    checks.append(Check("J_closed_form_spectra", worst <= SPECTRUM_TOL, f"max deviation {worst:.2e} over d=2..10"))

    models = {
        "kl_gaussian": ModelSpec.kl(1.0, 4),
        "kl_exponential": ModelSpec.kl(1.0, 4, score_law="standardized_exponential"),
        "mp_uniform": ModelSpec.mp(1.0, 4, score_law="standardized_uniform"),
        "elliptical_gamma": ModelSpec.elliptical(1.0, 4, eta_law="gamma_p_1"),
    }
    for i, (name, model) in enumerate(models.items()):
        zs = quadratic_form_zscores(model, 4, draws, derive_seed(seed, TAG_PROBE, 1, i))
        worst_z = float(np.max(np.abs(zs)))
        checks.append(Check(f"covariance_identity_{name}", worst_z <= 4.0, f"max |z| = {worst_z:.2f} over {zs.size} matrices"))

    q = 6
    m = rng.standard_normal((q, q))
    c = m @ m.T + q * np.eye(q)
    m2 = rng.standard_normal((q, q))
    c_hat = m2 @ m2.T + np.eye(q)
    zero = kl_gaussian(c, c).kl
    checks.append(Check("kl_self_zero", zero == 0.0, f"KL(C, C) = {zero!r}"))
    s = _random_sym(rng, 3) + 4.0 * np.eye(3)
    r = sym_conjugation_rep(s).rep
    base = kl_gaussian(c, c_hat).kl
    moved = kl_gaussian(r @ c @ r.T, r @ c_hat @ r.T).kl
    rel = abs(moved - base) / base
    checks.append(Check("kl_conjugation_invariance", rel <= 1e-8, f"relative change {rel:.2e}"))
    return checks

"""Monte Carlo experiments around the bootstrap for ``T_n``.

All operations are pure functions of their arguments and master seed.
Independent work items (datasets, Monte Carlo draws) may run on a thread
pool; each item seeds its own stream via :func:`covop.rng.derive_seed`, and
BLAS is pinned to one thread while an experiment runs, so the worker count
never changes a single bit of the output.

Seed layout (``master`` is the experiment seed)::

    reference draw m at size n   derive_seed(master, TAG_REFERENCE, n) -> derive_seed(., m)
    dataset r at size n          derive_seed(master, TAG_DATASET, n, r)
    bootstrap of dataset r       derive_seed(master, TAG_BOOTSTRAP, n, r) -> replicate b: derive_seed(., b)
    self-test draws for r        derive_seed(master, TAG_SELF_TEST, n, r) -> derive_seed(., m)
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bootstrap import MultiplierLaw, bootstrap_values, parse_law
from .covariance import k_index, projected_t_statistics
from .errors import ConfigError
from .metrics import (
    ScalarSample,
    earlier_rate,
    kolmogorov_distance,
    moment_root,
    rate_fit,
    theoretical_rate,
)
from .models import ModelSpec, fourth_moment_operator, population_covariance, sample_dataset
from .rng import SCHEME, TAG_BOOTSTRAP, TAG_DATASET, TAG_GAUSSIAN, TAG_REFERENCE, TAG_SELF_TEST, derive_seed
from .symspace import build_C, empirical_C, kl_gaussian, sample_gaussian_norms

log = logging.getLogger(__name__)

MIN_MC = 200
MIN_MOMENT_MC = 1000
ACCURACY_TABLE = "accuracy.csv"
SUMMARY_TABLE = "summary.csv"
MANIFEST = "manifest.json"
ACCURACY_COLUMNS = ["experiment_id", "n", "k", "dataset_index", "d_k"]
SUMMARY_COLUMNS = [
    "n",
    "dk_median",
    "dk_q10",
    "dk_q90",
    "slope",
    "slope_stderr",
    "rate_theory_new",
    "rate_theory_old",
]


def default_workers() -> int:
    env = os.environ.get("COVOP_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"COVOP_THREADS must be a positive integer, got {env!r}", key="COVOP_THREADS") from None
        if value < 1:
            raise ConfigError(f"COVOP_THREADS must be a positive integer, got {env!r}", key="COVOP_THREADS")
        return value
    return 1


def _parallel_map(fn: Callable, items: Sequence, workers: int | None) -> list:
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    model: ModelSpec
    n_grid: list[int]
    mc_reference: int = 2000
    bootstrap_replicates: int = 1000
    datasets_per_n: int = 50
    epsilon: float = 0.1
    k_override: int | None = None
    seed: int = 0
    law: MultiplierLaw = MultiplierLaw.MULTINOMIAL_MINUS_ONE
    # Compare the k-projected statistic and bootstrap instead of the full ones.
    projected: bool = False
    # How per-dataset d_K values are summarized for the slope: "median" or "mean".
    aggregate: str = "median"
    # Replace the bootstrap by fresh draws from L(T_n) (null calibration).
    self_test: bool = False
    burn_in: int = 0

    def __post_init__(self):
        self.law = parse_law(self.law)
        self.n_grid = sorted(int(n) for n in self.n_grid)
        self.validate()

    def validate(self) -> None:
        if not self.n_grid:
            raise ConfigError("n_grid must not be empty", key="n_grid")
        if any(n < 2 for n in self.n_grid):
            raise ConfigError("every n in n_grid must be at least 2", key="n_grid")
        if len(set(self.n_grid)) != len(self.n_grid):
            raise ConfigError("n_grid contains duplicates", key="n_grid")
        if self.mc_reference < MIN_MC:
            raise ConfigError(f"mc_reference must be at least {MIN_MC}", key="mc_reference")
        if self.bootstrap_replicates < MIN_MC:
            raise ConfigError(f"bootstrap_replicates must be at least {MIN_MC}", key="bootstrap_replicates")
        if self.datasets_per_n < 1:
            raise ConfigError("datasets_per_n must be at least 1", key="datasets_per_n")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)", key="epsilon")
        if self.k_override is not None and not 1 <= self.k_override <= self.model.p:
            raise ConfigError(f"k_override must lie in [1, {self.model.p}]", key="k_override")
        if self.aggregate not in ("median", "mean"):
            raise ConfigError("aggregate must be 'median' or 'mean'", key="aggregate")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative", key="seed")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative", key="burn_in")

    def k_for(self, n: int) -> int:
        if self.k_override is not None:
            return self.k_override
        if self.model.beta > 0.5:
            return k_index(n, self.model.beta, self.model.p)
        return self.model.p

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "n_grid": list(self.n_grid),
            "mc_reference": self.mc_reference,
            "bootstrap_replicates": self.bootstrap_replicates,
            "datasets_per_n": self.datasets_per_n,
            "epsilon": self.epsilon,
            "k_override": self.k_override,
            "seed": self.seed,
            "law": self.law.value,
            "projected": self.projected,
            "aggregate": self.aggregate,
            "self_test": self.self_test,
            "burn_in": self.burn_in,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["model"] = ModelSpec.from_dict(d["model"])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}", key=sorted(unknown)[0])
        return cls(**d)

    def experiment_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class NRecord:
    n: int
    k_used: int
    dk_values: np.ndarray
    dk_median: float
    dk_q10: float
    dk_q90: float

    @classmethod
    def from_values(cls, n: int, k_used: int, values) -> "NRecord":
        v = np.asarray(values, dtype=float)
        q10, med, q90 = np.quantile(v, [0.1, 0.5, 0.9])
        return cls(int(n), int(k_used), v, float(med), float(q10), float(q90))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[NRecord]
    fitted_slope: float
    slope_stderr: float
    theoretical_slope: float
    earlier_slope: float
    wall_time: float = 0.0
    started_at: str = ""

    @property
    def experiment_id(self) -> str:
        return self.config.experiment_id()

    def medians(self) -> np.ndarray:
        return np.array([r.dk_median for r in self.records])

    def summary_lines(self) -> list[str]:
        return [
            f"n={r.n} k={r.k_used} dK median={r.dk_median:.4f} [q10={r.dk_q10:.4f}, q90={r.dk_q90:.4f}]"
            for r in self.records
        ]


def _rates(beta: float, epsilon: float) -> tuple[float, float]:
    if beta > 0.5:
        return theoretical_rate(beta, epsilon), earlier_rate(beta)
    return math.nan, math.nan


def _fit(ns, values, burn_in=0):
    try:
        fit = rate_fit(ns, values, burn_in=burn_in)
    except ConfigError:
        return math.nan, math.nan
    return fit.slope, fit.stderr


def _summarize(config: ExperimentConfig, records: list[NRecord], wall: float, started: str) -> ExperimentResult:
    if config.aggregate == "median":
        agg = [r.dk_median for r in records]
    else:
        agg = [float(np.mean(r.dk_values)) for r in records]
    slope, stderr = _fit([r.n for r in records], agg, config.burn_in)
    new, old = _rates(config.model.beta, config.epsilon)
    return ExperimentResult(config, records, slope, stderr, -new, -old, wall, started)


# ---------------------------------------------------------------------------
# Monte Carlo primitives
# ---------------------------------------------------------------------------


def reference_statistics(model: ModelSpec, n: int, count: int, seed: int, ks, workers=None) -> np.ndarray:
    """``(count, len(ks))`` array of ``T_{n,k}`` over independent datasets.

    Draw ``m`` uses dataset seed ``derive_seed(seed, m)``.
    """
    sigma = population_covariance(model)
    ks = list(ks)

    def one(m):
        data = sample_dataset(model, n, derive_seed(seed, m))
        return projected_t_statistics(data, sigma, ks)

    with threadpool_limits(limits=1):
        rows = _parallel_map(one, range(count), workers)
    return np.array(rows).reshape(count, len(ks))


def reference_values(model: ModelSpec, n: int, count: int, seed: int, k: int | None = None, workers=None) -> np.ndarray:
    """``T_n`` (or ``T_{n,k}``) draws in draw order."""
    return reference_statistics(model, n, count, seed, [model.p if k is None else k], workers)[:, 0]


def reference_distribution(model: ModelSpec, n: int, M: int, seed: int, k: int | None = None, workers=None) -> ScalarSample:
    """Monte Carlo sample of ``L(T_n)`` from ``M`` independent datasets."""
    if M < 1:
        raise ConfigError("M must be positive", key="mc_reference")
    return ScalarSample(reference_values(model, n, M, seed, k, workers))


# ---------------------------------------------------------------------------
# Bootstrap accuracy
# ---------------------------------------------------------------------------


def dataset_seed(master: int, n: int, r: int) -> int:
    return derive_seed(master, TAG_DATASET, n, r)


def bootstrap_seed(master: int, n: int, r: int) -> int:
    return derive_seed(master, TAG_BOOTSTRAP, n, r)


def reference_seed(master: int, n: int) -> int:
    return derive_seed(master, TAG_REFERENCE, n)


def _accuracy_at(config: ExperimentConfig, n: int, workers) -> NRecord:
    model = config.model
    k_used = config.k_for(n)
    k_stat = k_used if config.projected else None
    ref = reference_distribution(model, n, config.mc_reference, reference_seed(config.seed, n), k_stat, workers)

    def one(r):
        if config.self_test:
            other = reference_values(model, n, config.bootstrap_replicates, derive_seed(config.seed, TAG_SELF_TEST, n, r), k_stat, 1)
        else:
            data = sample_dataset(model, n, dataset_seed(config.seed, n, r))
            other = bootstrap_values(data, config.law, config.bootstrap_replicates, bootstrap_seed(config.seed, n, r), k=k_stat)
        return kolmogorov_distance(other, ref)

    with threadpool_limits(limits=1):
        dks = _parallel_map(one, range(config.datasets_per_n), workers)
    return NRecord.from_values(n, k_used, dks)


def bootstrap_accuracy(config: ExperimentConfig, out_dir=None, workers=None) -> ExperimentResult:
    """Kolmogorov distance between the bootstrap and a Monte Carlo ``L(T_n)``.

    For each ``n`` the reference sample is shared by all ``datasets_per_n``
    datasets.  When ``out_dir`` is given the tables are rewritten after
    every ``n`` so an interrupted run leaves valid partial results.
    """
    config.validate()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    records: list[NRecord] = []
    for n in config.n_grid:
        records.append(_accuracy_at(config, n, workers))
        log.info("n=%d done (median dK %.4f)", n, records[-1].dk_median)
        if out_dir is not None:
            persist(_summarize(config, records, time.perf_counter() - t0, started), out_dir)
    result = _summarize(config, records, time.perf_counter() - t0, started)
    if out_dir is not None:
        persist(result, out_dir)
    return result


def is_strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


@dataclass
class TransitionRow:
    beta: float
    dk_median: float
    dk_q10: float
    dk_q90: float


def transition_probe(beta_grid: Sequence[float], n: int, config: ExperimentConfig, workers=None) -> list[TransitionRow]:
    """Median bootstrap ``d_K`` at a fixed ``n`` for each ``beta`` (``p`` stays as configured)."""
    rows = []
    for beta in beta_grid:
        cfg = dataclasses.replace(config, model=config.model.with_spectrum(beta=float(beta)), n_grid=[int(n)])
        rec = _accuracy_at(cfg, int(n), workers)
        rows.append(TransitionRow(float(beta), rec.dk_median, rec.dk_q10, rec.dk_q90))
    return rows


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


@dataclass
class CouplingResult:
    k_grid: list[int]
    mean_gap: np.ndarray
    gaps: np.ndarray  # (M, len(k_grid)), T_n - T_{n,k} per dataset
    slope: float
    slope_stderr: float

    def rows(self):
        return list(zip(self.k_grid, self.mean_gap.tolist()))


def coupling_probe(model: ModelSpec, n: int, k_grid: Sequence[int], M: int, seed: int, workers=None) -> CouplingResult:
    """Mean ``|T_n - T_{n,k}|`` per ``k``, with its log-log slope in ``k``."""
    ks = sorted(int(k) for k in k_grid)
    if not ks or ks[0] < 1 or ks[-1] > model.p:
        raise ConfigError(f"k_grid must lie in [1, {model.p}]", key="k_grid")
    stats = reference_statistics(model, n, M, seed, ks + [model.p], workers)
    gaps = np.abs(stats[:, -1:] - stats[:, :-1])
    mean_gap = gaps.mean(axis=0)
    keep = mean_gap > 0
    slope, stderr = _fit(np.array(ks)[keep], mean_gap[keep])
    return CouplingResult(ks, mean_gap, gaps, slope, stderr)


@dataclass
class DecompositionResult:
    n: int
    k: int
    I_n: float
    II_n: float
    III_hat: float
    III_hat_pinsker: float
    kl: float
    II_hat: float
    I_hat: float
    direct: float

    @property
    def total(self) -> float:
        return self.I_n + self.II_n + self.III_hat + self.II_hat + self.I_hat

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["total"] = self.total
        return d


def decomposition_probe(
    model: ModelSpec,
    n: int,
    k: int,
    M: int,
    B: int,
    seed: int,
    law=MultiplierLaw.MULTINOMIAL_MINUS_ONE,
    gaussian_draws: int | None = None,
    dataset_index: int = 0,
    workers=None,
) -> DecompositionResult:
    """Empirical versions of the five terms bounding the bootstrap error.

    Conditional terms all use the single dataset ``dataset_index``; the two
    bootstrap samples (projected and full) share their weights.
    """
    if not 1 <= k <= model.p:
        raise ConfigError(f"k must lie in [1, {model.p}]", key="k")
    draws = M if gaussian_draws is None else gaussian_draws
    stats = reference_statistics(model, n, M, reference_seed(seed, n), [k, model.p], workers)
    t_k, t_full = stats[:, 0], stats[:, 1]
    with threadpool_limits(limits=1):
        sigma_k = population_covariance(model)[:k, :k]
        c = build_C(sigma_k, fourth_moment_operator(model, k))
        g = sample_gaussian_norms(c, draws, derive_seed(seed, TAG_GAUSSIAN, n, 0))
        data = sample_dataset(model, n, dataset_seed(seed, n, dataset_index))
        c_hat = empirical_C(data, k)
        g_star = sample_gaussian_norms(c_hat, draws, derive_seed(seed, TAG_GAUSSIAN, n, 1))
        kl = kl_gaussian(c, c_hat)
        bseed = bootstrap_seed(seed, n, dataset_index)
        boot_k = bootstrap_values(data, law, B, bseed, k=k)
        boot_full = bootstrap_values(data, law, B, bseed)
    return DecompositionResult(
        n=int(n),
        k=int(k),
        I_n=kolmogorov_distance(t_full, t_k),
        II_n=kolmogorov_distance(t_k, g),
        III_hat=kolmogorov_distance(g, g_star),
        III_hat_pinsker=kl.pinsker,
        kl=kl.kl,
        II_hat=kolmogorov_distance(g_star, boot_k),
        I_hat=kolmogorov_distance(boot_k, boot_full),
        direct=kolmogorov_distance(t_full, boot_full),
    )


@dataclass
class MomentResult:
    q: float
    n_grid: list[int]
    roots: np.ndarray
    slope: float
    slope_stderr: float

    def rows(self):
        return list(zip(self.n_grid, self.roots.tolist()))


def moment_seed(master: int, n: int) -> int:
    return derive_seed(master, n)


def moment_probe(model: ModelSpec, n_grid: Sequence[int], q: float, M: int, seed: int, workers=None) -> MomentResult:
    """``(E ||Sigma_hat - Sigma||_op^q)^{1/q}`` per ``n``; size ``n`` uses ``moment_seed(seed, n)``."""
    if q < 1:
        raise ConfigError("q must be at least 1", key="q")
    if M < MIN_MOMENT_MC:
        raise ConfigError(f"M must be at least {MIN_MOMENT_MC} for a stable moment estimate", key="M")
    ns = sorted(int(n) for n in n_grid)
    roots = np.array(
        [moment_root(reference_values(model, n, M, moment_seed(seed, n), workers=workers) / math.sqrt(n), q) for n in ns]
    )
    slope, stderr = _fit(ns, roots)
    return MomentResult(float(q), ns, roots, slope, stderr)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc.strerror or exc}") from exc


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_table(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    _atomic_write(path, csv_text(header, rows))
    return path


def environment_versions() -> dict:
    import scipy

    return {
        "artifact_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(out_dir, config: dict, master_seed: int, tables: Sequence[str], started_at: str = "", **extra) -> Path:
    out = Path(out_dir)
    manifest = {
        "config": config,
        "master_seed": int(master_seed),
        "started_at": started_at or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "artifact_version": __version__,
        "tables": list(tables),
        "seed_scheme": {
            "derive": SCHEME,
            "reference_draw": "derive_seed(derive_seed(master_seed, 0, n), m)",
            "dataset": "derive_seed(master_seed, 1, n, r)",
            "bootstrap_replicate": "derive_seed(derive_seed(master_seed, 2, n, r), b)",
            "self_test_draw": "derive_seed(derive_seed(master_seed, 3, n, r), m)",
        },
        "versions": environment_versions(),
        **extra,
    }
    path = out / MANIFEST
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def persist(result: ExperimentResult, path) -> None:
    """Write ``accuracy.csv``, ``summary.csv`` and ``manifest.json`` under ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"could not create output directory {out}: {exc.strerror or exc}") from exc
    eid = result.experiment_id
    acc_rows = [
        (eid, rec.n, rec.k_used, i, float(v)) for rec in result.records for i, v in enumerate(rec.dk_values)
    ]
    write_table(out / ACCURACY_TABLE, ACCURACY_COLUMNS, acc_rows)
    new, old = _rates(result.config.model.beta, result.config.epsilon)
    sum_rows = [
        (rec.n, rec.dk_median, rec.dk_q10, rec.dk_q90, result.fitted_slope, result.slope_stderr, new, old)
        for rec in result.records
    ]
    write_table(out / SUMMARY_TABLE, SUMMARY_COLUMNS, sum_rows)
    write_manifest(
        out,
        result.config.to_dict(),
        result.config.seed,
        [ACCURACY_TABLE, SUMMARY_TABLE],
        started_at=result.started_at,
        experiment_id=eid,
        aggregate=result.config.aggregate,
        timings={"wall_time_seconds": result.wall_time},
    )


def load_result(path) -> ExperimentResult:
    """Inverse of :func:`persist`."""
    out = Path(path)
    try:
        manifest = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
        with open(out / ACCURACY_TABLE, encoding="utf-8", newline="") as fh:
            acc = list(csv.DictReader(fh))
        with open(out / SUMMARY_TABLE, encoding="utf-8", newline="") as fh:
            summ = list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"could not read results from {out}: {exc.strerror or exc}") from exc
    config = ExperimentConfig.from_dict(manifest["config"])
    records = []
    for row in summ:
        n = int(row["n"])
        mine = sorted((r for r in acc if int(r["n"]) == n), key=lambda r: int(r["dataset_index"]))
        values = np.array([float(r["d_k"]) for r in mine])
        k_used = int(mine[0]["k"]) if mine else config.k_for(n)
        records.append(NRecord(n, k_used, values, float(row["dk_median"]), float(row["dk_q10"]), float(row["dk_q90"])))
    first = summ[0] if summ else {}
    new, old = _rates(config.model.beta, config.epsilon)
    return ExperimentResult(
        config,
        records,
        float(first.get("slope", "nan")),
        float(first.get("slope_stderr", "nan")),
        -new,
        -old,
        float(manifest.get("timings", {}).get("wall_time_seconds", 0.0)),
        manifest.get("started_at", ""),
    )

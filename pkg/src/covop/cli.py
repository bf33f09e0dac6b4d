"""``covop`` command-line front end.

One JSON config file holds a ``model`` section, an optional top-level
``seed`` and one section per subcommand.  ``--set a.b=value`` overrides are
applied after parsing (values are read as JSON, falling back to strings)
and are echoed in every manifest.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import harness
from .errors import ConfigError, NumericalError
from .models import ModelSpec, sample_dataset
from .rng import TAG_PROBE, derive_seed

log = logging.getLogger("covop")

SUBCOMMANDS = ("simulate", "accuracy", "rate-sweep", "transition", "decompose", "theory-check", "coupling", "moments")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def load_schema() -> dict:
    return json.loads(resources.files("covop").joinpath("config_schema.json").read_text(encoding="utf-8"))


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}", key=str(path)) from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object", key=str(path))
    return cfg


def parse_override(text: str) -> tuple[list[str], object]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value", key=text)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg: dict, overrides) -> dict:
    out = json.loads(json.dumps(cfg))
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {text!r}: {part!r} is not a section", key=".".join(path))
            node = child
        node[path[-1]] = value
    return out


def validate_config(cfg: dict) -> None:
    errors = sorted(Draft202012Validator(load_schema()).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        key = where
        if err.validator == "required":
            key = err.message.split("'")[1]
        raise ConfigError(f"invalid config at {where}: {err.message}", key=key)


def _section(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise ConfigError(f"config has no '{name}' section", key=name)
    return dict(cfg[name])


def _seed(cfg: dict, section: dict) -> int:
    return int(section.pop("seed", cfg.get("seed", 0)))


def experiment_config(cfg: dict, section: dict, model: ModelSpec | None = None) -> harness.ExperimentConfig:
    section = dict(section)
    section.pop("beta_grid", None)
    seed = _seed(cfg, section)
    return harness.ExperimentConfig(model=model or ModelSpec.from_dict(cfg["model"]), seed=seed, **section)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _manifest(out: Path, cfg: dict, seed: int, tables, overrides, started="", **extra):
    harness.write_manifest(out, cfg, seed, tables, started_at=started, overrides=list(overrides), **extra)


def cmd_simulate(cfg, out: Path, overrides, workers, check):
    sec = _section(cfg, "simulate")
    model = ModelSpec.from_dict(cfg["model"])
    seed = _seed(cfg, sec)
    n, M, r = int(sec["n"]), int(sec.get("M", 1000)), int(sec.get("dataset_index", 0))
    if check:
        return
    data = sample_dataset(model, n, harness.dataset_seed(seed, n, r))
    ref = harness.reference_values(model, n, M, harness.reference_seed(seed, n), workers=workers)
    header = [f"x{j + 1}" for j in range(model.p)]
    harness.write_table(out / "data.csv", header, [[float(v) for v in row] for row in data.values])
    harness.write_table(out / "reference.csv", ["draw_index", "t_n"], [(m, float(v)) for m, v in enumerate(ref)])
    _manifest(out, cfg, seed, ["data.csv", "reference.csv"], overrides)
    print(f"n={n} p={model.p} T_n reference: M={M} median={np.median(ref):.4f} mean={np.mean(ref):.4f}")


def _print_records(result: harness.ExperimentResult, prefix=""):
    for line in result.summary_lines():
        print(prefix + line)


def _slope_line(result: harness.ExperimentResult) -> str:
    return (
        f"fitted slope {result.fitted_slope:.4f} (se {result.slope_stderr:.4f}); "
        f"theory bound {result.theoretical_slope:.4f}, earlier bound {result.earlier_slope:.4f}"
    )


def cmd_accuracy(cfg, out: Path, overrides, workers, check):
    config = experiment_config(cfg, _section(cfg, "accuracy"))
    if check:
        return
    result = harness.bootstrap_accuracy(config, workers=workers)
    harness.persist(result, out)
    _manifest_overrides(out, overrides)
    _print_records(result)
    print(_slope_line(result))


def _manifest_overrides(out: Path, overrides):
    path = out / harness.MANIFEST
    manifest = json.loads(path.read_text(encoding="utf-8"))
    manifest["overrides"] = list(overrides)
    harness._atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_rate_sweep(cfg, out: Path, overrides, workers, check):
    sec = _section(cfg, "rate-sweep")
    base = ModelSpec.from_dict(cfg["model"])
    configs = [experiment_config(cfg, sec, base.with_spectrum(beta=float(b))) for b in sec["beta_grid"]]
    if check:
        return
    rows, tables = [], ["rates.csv"]
    for beta, config in zip(sec["beta_grid"], configs):
        result = harness.bootstrap_accuracy(config, workers=workers)
        sub = out / f"beta_{float(beta):g}"
        harness.persist(result, sub)
        tables += [f"{sub.name}/{harness.ACCURACY_TABLE}", f"{sub.name}/{harness.SUMMARY_TABLE}"]
        _print_records(result, prefix=f"beta={float(beta):g} ")
        new, old = harness._rates(config.model.beta, config.epsilon)
        rows.append((float(beta), result.fitted_slope, result.slope_stderr, new, old))
        print(f"beta={float(beta):g} " + _slope_line(result))
    harness.write_table(out / "rates.csv", ["beta", "slope", "slope_stderr", "rate_theory_new", "rate_theory_old"], rows)
    _manifest(out, cfg, configs[0].seed, tables, overrides)


def cmd_transition(cfg, out: Path, overrides, workers, check):
    sec = _section(cfg, "transition")
    betas = [float(b) for b in sec.pop("beta_grid")]
    n = int(sec.pop("n"))
    config = experiment_config(cfg, {**sec, "n_grid": [n]})
    if check:
        return
    rows = harness.transition_probe(betas, n, config, workers=workers)
    harness.write_table(
        out / "transition.csv",
        ["beta", "n", "dk_median", "dk_q10", "dk_q90"],
        [(r.beta, n, r.dk_median, r.dk_q10, r.dk_q90) for r in rows],
    )
    _manifest(out, cfg, config.seed, ["transition.csv"], overrides)
    for r in rows:
        print(f"n={n} beta={r.beta:g} dK median={r.dk_median:.4f} [q10={r.dk_q10:.4f}, q90={r.dk_q90:.4f}]")


def cmd_coupling(cfg, out: Path, overrides, workers, check):
    sec = _section(cfg, "coupling")
    model = ModelSpec.from_dict(cfg["model"])
    seed = _seed(cfg, sec)
    n, ks, M = int(sec["n"]), [int(k) for k in sec["k_grid"]], int(sec.get("M", 500))
    if max(ks) > model.p:
        raise ConfigError(f"k_grid entries must not exceed p={model.p}", key="k_grid")
    if check:
        return
    res = harness.coupling_probe(model, n, ks, M, derive_seed(seed, TAG_PROBE, n), workers=workers)
    harness.write_table(out / "coupling.csv", ["k", "mean_gap"], res.rows())
    _manifest(out, cfg, seed, ["coupling.csv"], overrides, slope=_finite(res.slope), slope_stderr=_finite(res.slope_stderr))
    print(f"n={n} " + " ".join(f"k={k}:{g:.4f}" for k, g in res.rows()) + f" slope={res.slope:.4f}")


def cmd_decompose(cfg, out: Path, overrides, workers, check):
    sec = _section(cfg, "decompose")
    model = ModelSpec.from_dict(cfg["model"])
    seed = _seed(cfg, sec)
    n, k = int(sec["n"]), int(sec["k"])
    if k > model.p:
        raise ConfigError(f"k must not exceed p={model.p}", key="k")
    kwargs = dict(
        M=int(sec.get("M", 2000)),
        B=int(sec.get("B", 1000)),
        seed=seed,
        law=sec.get("law", "multinomial_minus_one"),
        gaussian_draws=sec.get("gaussian_draws"),
        dataset_index=int(sec.get("dataset_index", 0)),
    )
    if check:
        return
    res = harness.decomposition_probe(model, n, k, workers=workers, **kwargs)
    terms = res.as_dict()
    rows = [(name, float(terms[name])) for name in terms if name not in ("n", "k")]
    harness.write_table(out / "decomposition.csv", ["term", "value"], rows)
    _manifest(out, cfg, seed, ["decomposition.csv"], overrides)
    print(f"n={n} k={k} " + " ".join(f"{name}={v:.4f}" for name, v in rows))


def cmd_moments(cfg, out: Path, overrides, workers, check):
    sec = _section(cfg, "moments")
    model = ModelSpec.from_dict(cfg["model"])
    seed = _seed(cfg, sec)
    ns, q, M = [int(n) for n in sec["n_grid"]], float(sec["q"]), int(sec.get("M", 1000))
    if check:
        return
    res = harness.moment_probe(model, ns, q, M, seed, workers=workers)
    harness.write_table(out / "moments.csv", ["n", "moment_root"], res.rows())
    _manifest(out, cfg, seed, ["moments.csv"], overrides, slope=_finite(res.slope), slope_stderr=_finite(res.slope_stderr))
    for n, v in res.rows():
        print(f"n={n} q={q:g} moment root={v:.5f}")
    print(f"slope {res.slope:.4f} (se {res.slope_stderr:.4f})")


def _finite(x):
    return None if not math.isfinite(x) else float(x)


def cmd_theory_check(cfg, out: Path | None, overrides, workers, check):
    from .theory import run_checks

    sec = dict(cfg.get("theory-check", {})) if cfg else {}
    seed = int(sec.get("seed", (cfg or {}).get("seed", 0)))
    draws = int(sec.get("draws", 200_000))
    if check:
        return EXIT_OK
    checks = run_checks(seed=seed, draws=draws)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    if out is not None:
        harness.write_table(out / "theory_check.csv", ["check", "passed", "detail"], [(c.name, int(c.passed), c.detail) for c in checks])
        _manifest(out, cfg or {}, seed, ["theory_check.csv"], overrides)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL


COMMANDS = {
    "simulate": cmd_simulate,
    "accuracy": cmd_accuracy,
    "rate-sweep": cmd_rate_sweep,
    "transition": cmd_transition,
    "decompose": cmd_decompose,
    "theory-check": cmd_theory_check,
    "coupling": cmd_coupling,
    "moments": cmd_moments,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class CliInvocation:
    subcommand: str
    config_path: Path | None
    out_dir: Path | None
    overrides: list[str] = dataclasses.field(default_factory=list)
    threads: int | None = None
    check_config: bool = False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covop", description="Bootstrap experiments for sample covariance operator norms.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config value (dotted key, JSON value)")
    parser.add_argument("--threads", type=int, help="worker threads (default: $COVOP_THREADS or 1)")
    parser.add_argument("--check-config", action="store_true", help="validate the config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(inv: CliInvocation) -> int:
    """Execute one invocation and return its exit code."""
    try:
        if inv.threads is not None and inv.threads < 1:
            raise ConfigError("--threads must be a positive integer", key="--threads")
        workers = inv.threads if inv.threads is not None else harness.default_workers()
        cfg: dict = {}
        if inv.config_path is not None:
            cfg = read_config(inv.config_path)
        elif inv.subcommand != "theory-check":
            raise ConfigError(f"{inv.subcommand} needs --config", key="--config")
        if cfg or inv.overrides:
            cfg = apply_overrides(cfg, inv.overrides)
            validate_config(cfg)
        out = inv.out_dir
        needs_out = inv.subcommand != "theory-check" and not inv.check_config
        if needs_out:
            if out is None:
                raise ConfigError(f"{inv.subcommand} needs --out", key="--out")
            try:
                out.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
        elif out is not None and not inv.check_config:
            out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[inv.subcommand](cfg, out, inv.overrides, workers, inv.check_config)
        if inv.check_config:
            print(f"config OK for {inv.subcommand}")
        return EXIT_OK if code is None else code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    inv = CliInvocation(args.subcommand, args.config, args.out, args.overrides, args.threads, args.check_config)
    return run(inv)


if __name__ == "__main__":
    sys.exit(main())

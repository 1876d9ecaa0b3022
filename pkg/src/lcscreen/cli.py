"""Command-line surface: simulate | fit | predict | region | screen | metrics | best-config.

All outputs are written atomically (temp file + rename).  Exit codes:
0 success, 2 usage error, 3 data validation failure, 4 numeric failure.

An optional TOML config file supplies defaults per subcommand section
(e.g. ``[screen] target = 0.8``); explicit flags take precedence.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import simgen
from .core_types import (IngestError, ModelConfig, ValidationError,
                         ingest_dataset, write_dataset_csv)
from .predictive import GridSpec, PredictionRequest, cell_field, read_cellfield_csv, write_cellfield_csv
from .region import write_region_csv
from .sampler import (DrawStore, McmcConfig, NumericError, dataset_digest,
                      fit, load_drawstore, save_drawstore)
from .screening import (dahl_best_configuration, evaluate_cohort,
                        metrics_to_json, screen_subject, write_report_csv)
from .region import branch_region, hdr_region

__all__ = ["main"]


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_grid(spec: str) -> GridSpec:
    """Parse ``xlo:xhi:xwidth,ylo:yhi:ywidth``."""
    try:
        x_part, y_part = spec.split(",")
        x_lo, x_hi, x_w = (float(v) for v in x_part.split(":"))
        y_lo, y_hi, y_w = (float(v) for v in y_part.split(":"))
    except ValueError:
        raise ValueError(f"bad grid spec {spec!r}; want lo:hi:width,lo:hi:width") from None
    return GridSpec.from_widths(x_lo, x_hi, x_w, y_lo, y_hi, y_w)


def _parse_schedule(spec: str) -> tuple[float, ...]:
    return tuple(float(v) for v in spec.split(","))


def _parse_history(spec: str) -> tuple[tuple[float, float], ...]:
    """Parse ``t:v,t:v,...`` (empty string -> no history)."""
    if not spec:
        return ()
    out = []
    for part in spec.split(","):
        t, v = part.split(":")
        out.append((float(t), float(v)))
    return tuple(out)


def _read_dataset(path: str):
    with open(path, newline="") as fh:
        return ingest_dataset(fh)


DEFAULT_GRID = "-16:16:2,-24:16:2"
DEFAULT_SCHEDULE = "2,4,6,8,10,12,14"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcscreen",
        description="Latent-class joint modeling and credible-region anomaly "
                    "screening for paired longitudinal endpoints.")
    parser.add_argument("--config", help="TOML file with per-subcommand defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic study")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--out", default=None, help="output directory (default .)")
    p.add_argument("--subjects", type=int, default=None, help="study size (default 700)")
    p.add_argument("--sites", type=int, default=None, help="site count (default 50)")
    p.add_argument("--train-fraction", type=float, default=None,
                   help="training split fraction (default 0.7)")

    p = sub.add_parser("fit", help="run the MCMC sampler")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--out", default=None, help="output draws file "
                   "(default fit.draws.ndjson)")
    p.add_argument("--classes", type=int, default=None,
                   help="latent-class truncation level (default 30)")
    p.add_argument("--burnin", type=int, default=None,
                   help="burn-in sweeps (default 50000)")
    p.add_argument("--keep", type=int, default=None,
                   help="retained draws (default 1000)")
    p.add_argument("--thin", type=int, default=None, help="thinning (default 1)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--alpha-step", type=float, default=None,
                   help="Metropolis proposal scale for alpha (default 0.25)")
    p.add_argument("--gamma", type=float, default=None,
                   help="shared shape/rate for all gamma hyperpriors (default 0.01)")

    p = sub.add_parser("predict", help="write a predictive cell field")
    p.add_argument("--draws", required=True)
    p.add_argument("--baseline-x", type=float, required=True)
    p.add_argument("--baseline-y", type=float, required=True)
    p.add_argument("--history-x", default=None, help="t:v,t:v,... (default none)")
    p.add_argument("--history-y", default=None, help="t:v,t:v,... (default none)")
    p.add_argument("--future-time", type=float, required=True)
    p.add_argument("--grid", default=None, help=f"lo:hi:width per axis (default {DEFAULT_GRID})")
    p.add_argument("--out", default=None, help="output CSV (default field.csv)")

    p = sub.add_parser("region", help="build a credible region from a stored field")
    p.add_argument("--field", required=True, help="cell-field CSV from `predict`")
    p.add_argument("--target", type=float, default=None, help="coverage level (default 0.8)")
    p.add_argument("--algorithm", choices=["hdr", "branch"], default=None,
                   help="region algorithm (default branch)")
    p.add_argument("--c-quick", type=float, default=None,
                   help="quick-phase threshold (default 0.9 * target)")
    p.add_argument("--out", default=None, help="output CSV (default region.csv)")

    for name in ("screen", "metrics"):
        p = sub.add_parser(name, help="screen a test cohort"
                           if name == "screen" else
                           "summarize coverage/bias/MSE for both algorithms")
        p.add_argument("--draws", required=True)
        p.add_argument("--data", required=True, help="test dataset CSV")
        p.add_argument("--grid", default=None)
        p.add_argument("--schedule", default=None,
                       help=f"visit schedule (default {DEFAULT_SCHEDULE})")
        p.add_argument("--target", type=float, default=None)
        p.add_argument("--scenario", default=None,
                       help="baseline | first:K (default first:2)")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory (default .)")
        if name == "screen":
            p.add_argument("--algorithm", choices=["hdr", "branch"], default=None)
            p.add_argument("--c-quick", type=float, default=None)

    p = sub.add_parser("best-config", help="least-squares best cluster configuration")
    p.add_argument("--draws", required=True)
    p.add_argument("--data", required=True, help="training dataset CSV (for subject ids)")
    p.add_argument("--out", default=None, help="output CSV (default best_config.csv)")

    return parser


class _Config:
    """Flag values with TOML-section fallback and hard defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.section: dict = {}
        if args.config:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
            self.section = data.get(args.command, {})

    def get(self, name: str, default):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is not None:
            return value
        if name in self.section:
            return self.section[name]
        return default


def _cmd_simulate(cfg: _Config) -> int:
    seed = cfg.get("seed", 0)
    out = cfg.get("out", ".")
    scheme = simgen.scaled_sim_scheme(cfg.get("subjects", 700),
                                      cfg.get("sites", 50))
    fraction = cfg.get("train-fraction", scheme.train_fraction)
    dataset, labels = simgen.simulate_study(scheme, seed)
    train, test, _, _ = simgen.split_train_test(dataset, labels, fraction, seed)
    for name, ds in (("train.csv", train), ("test.csv", test)):
        buf = io.StringIO()
        write_dataset_csv(ds, buf)
        _write_atomic(os.path.join(out, name), buf.getvalue())
    buf = io.StringIO()
    simgen.write_truth_csv(labels, buf)
    _write_atomic(os.path.join(out, "truth.csv"), buf.getvalue())
    print(f"wrote train/test/truth to {out} "
          f"({len(train.subjects)}/{len(test.subjects)} subjects)")
    return 0


def _cmd_fit(cfg: _Config) -> int:
    dataset = _read_dataset(cfg.args.data)
    gamma = cfg.get("gamma", 0.01)
    from .core_types import EndpointHypers
    hypers = EndpointHypers(gamma_0=gamma, gamma_1=gamma, gamma_2=gamma,
                            gamma_sc=gamma, gamma_w=gamma, gamma_e=gamma,
                            gamma_0base=gamma)
    mc = ModelConfig(n_classes=cfg.get("classes", 30), x=hypers, y=hypers)
    run = McmcConfig(burn_in=cfg.get("burnin", 50000),
                     keep=cfg.get("keep", 1000),
                     thin=cfg.get("thin", 1),
                     seed=cfg.get("seed", 0),
                     alpha_step=cfg.get("alpha-step", 0.25))
    t0 = time.perf_counter()
    store = fit(dataset, mc, run)
    elapsed = time.perf_counter() - t0
    out = cfg.get("out", "fit.draws.ndjson")
    save_drawstore(store, out)
    total = run.burn_in + run.keep * run.thin
    print(f"fit: {total} sweeps in {elapsed:.1f}s "
          f"({1e3 * elapsed / total:.2f} ms/sweep), "
          f"alpha acceptance {store.provenance['alpha_acceptance']:.2f}; "
          f"wrote {out}", file=sys.stderr)
    return 0


def _cmd_predict(cfg: _Config) -> int:
    store = load_drawstore(cfg.args.draws)
    grid = _parse_grid(cfg.get("grid", DEFAULT_GRID))
    req = PredictionRequest(
        baseline_x=cfg.args.baseline_x, baseline_y=cfg.args.baseline_y,
        history_x=_parse_history(cfg.get("history-x", "")),
        history_y=_parse_history(cfg.get("history-y", "")),
        future_times=(cfg.args.future_time,))
    field = cell_field(req, grid, store)
    buf = io.StringIO()
    write_cellfield_csv(field, buf)
    out = cfg.get("out", "field.csv")
    _write_atomic(out, buf.getvalue())
    print(f"wrote {out} (outside mass {field.outside_mass:.3g})")
    return 0


def _cmd_region(cfg: _Config) -> int:
    with open(cfg.args.field, newline="") as fh:
        field = read_cellfield_csv(fh)
    target = cfg.get("target", 0.8)
    algorithm = cfg.get("algorithm", "branch")
    if algorithm == "hdr":
        region = hdr_region(field, target)
    else:
        region = branch_region(field, target, cfg.get("c-quick", None))
    buf = io.StringIO()
    write_region_csv(region, field, buf)
    out = cfg.get("out", "region.csv")
    _write_atomic(out, buf.getvalue())
    print(f"wrote {out} ({len(region.cells)} cells, p_sum {region.p_sum:.4f})")
    return 0


def _parse_scenario(spec: str) -> tuple:
    if spec == "baseline":
        return ("baseline",)
    if spec.startswith("first:"):
        return ("first_k", int(spec.split(":", 1)[1]))
    raise ValueError(f"bad scenario {spec!r}; want 'baseline' or 'first:K'")


def _cmd_screen(cfg: _Config) -> int:
    store = load_drawstore(cfg.args.draws)
    dataset = _read_dataset(cfg.args.data)
    grid = _parse_grid(cfg.get("grid", DEFAULT_GRID))
    schedule = _parse_schedule(cfg.get("schedule", DEFAULT_SCHEDULE))
    target = cfg.get("target", 0.8)
    scenario = _parse_scenario(cfg.get("scenario", "first:2"))
    algorithm = cfg.get("algorithm", "branch")
    out = cfg.get("out", ".")
    summary, results = evaluate_cohort(
        dataset, store, grid, target, algorithm, scenario, schedule,
        c_quick=cfg.get("c-quick", None), threads=cfg.get("threads", 1))
    buf = io.StringIO()
    write_report_csv(results, buf)
    _write_atomic(os.path.join(out, "report.csv"), buf.getvalue())
    _write_atomic(os.path.join(out, "metrics.json"), metrics_to_json([summary]))
    flagged = [r for r in results if r.verdict in ("outside", "off_grid")]
    for r in flagged:
        buf = io.StringIO()
        write_region_csv(r.region, r.field, buf)
        _write_atomic(os.path.join(out, f"region_{r.subject_id}.csv"),
                      buf.getvalue())
    print(f"screened {summary.n_subjects} subjects: "
          f"coverage {summary.coverage_proportion:.3f}, "
          f"{len(flagged)} flagged; wrote report.csv, metrics.json")
    return 0


def _cmd_metrics(cfg: _Config) -> int:
    store = load_drawstore(cfg.args.draws)
    dataset = _read_dataset(cfg.args.data)
    grid = _parse_grid(cfg.get("grid", DEFAULT_GRID))
    schedule = _parse_schedule(cfg.get("schedule", DEFAULT_SCHEDULE))
    target = cfg.get("target", 0.8)
    scenario = _parse_scenario(cfg.get("scenario", "first:2"))
    threads = cfg.get("threads", 1)
    out = cfg.get("out", ".")
    summaries = []
    for algorithm in ("branch", "hdr"):
        summary, _ = evaluate_cohort(dataset, store, grid, target, algorithm,
                                     scenario, schedule, threads=threads)
        summaries.append(summary)
    _write_atomic(os.path.join(out, "metrics.json"), metrics_to_json(summaries))
    for s in summaries:
        print(f"{s.algorithm}: coverage {s.coverage_proportion:.4f}, "
              f"bias {s.bias:.4f}, sqrt MSE {s.rmse:.4f}")
    return 0


def _cmd_best_config(cfg: _Config) -> int:
    store = load_drawstore(cfg.args.draws)
    dataset = _read_dataset(cfg.args.data)
    digest = dataset_digest(dataset)
    if store.provenance.get("dataset_digest") not in (None, digest):
        raise ValueError("draws were fitted on a different dataset "
                         "(digest mismatch)")
    z = dahl_best_configuration(store)
    if len(z) != len(dataset.subjects):
        raise ValueError("subject count mismatch between draws and dataset")
    lines = ["subject_id,class"]
    lines += [f"{s.subject_id},{c}" for s, c in zip(dataset.subjects, z)]
    out = cfg.get("out", "best_config.csv")
    _write_atomic(out, "\n".join(lines) + "\n")
    sizes = {}
    for c in z:
        sizes[int(c)] = sizes.get(int(c), 0) + 1
    print(", ".join(f"{c}({n})" for c, n in sorted(sizes.items())))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "region": _cmd_region,
    "screen": _cmd_screen,
    "metrics": _cmd_metrics,
    "best-config": _cmd_best_config,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _Config(args)
        return _COMMANDS[args.command](cfg)
    except (IngestError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

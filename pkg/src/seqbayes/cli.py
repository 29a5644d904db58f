"""Command-line harness: ``simulate``, ``filter`` and ``compare``.

Exit codes: 0 success, 1 a compare cell failed, 2 invalid configuration or
arguments, 3 numerical divergence (the message names the step).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .benchmark import SimulationRecord
from .config import dumps, load_config
from .errors import ConfigError, NumericalError
from .runner import FILTER_IDS, build_filter, experiment_setup, make_record, run, score

OUT_ENV = "SEQBAYES_OUT"
DEFAULT_OUT = "seqbayes-out"
MANIFEST = "config.resolved.json"

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(ConfigError):
    """Invalid command-line arguments."""


def _out_dir(args, cfg):
    out = args.out or cfg.get("output", {}).get("dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out, cfg):
    with open(os.path.join(out, MANIFEST), "w") as fh:
        fh.write(dumps(cfg))


def parse_seeds(text):
    """``'5'`` -> seeds 0..4, ``'3-6'`` -> 3..6, ``'1,4,9'`` -> that list."""
    text = str(text).strip()
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        elif "-" in text.lstrip("-"):
            lo, hi = (int(s) for s in text.split("-", 1))
            seeds = list(range(lo, hi + 1))
        else:
            seeds = list(range(int(text)))
    except ValueError:
        raise UsageError(f"--seeds: cannot parse {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise UsageError(f"--seeds: expected a non-empty list of non-negative seeds, got {text!r}")
    return seeds


def parse_filters(text):
    ids = [s.strip() for s in str(text).split(",") if s.strip()]
    if not ids:
        raise UsageError("--filters: the filter list is empty")
    unknown = [f for f in ids if f not in FILTER_IDS]
    if unknown:
        raise UsageError(f"--filters: unknown filter id {unknown[0]!r}; known: {', '.join(FILTER_IDS)}")
    return ids


def _check_filters(cfg, ids):
    for fid in ids:
        if fid not in FILTER_IDS:
            raise UsageError(f"unknown filter id {fid!r}; known: {', '.join(FILTER_IDS)}")
        if fid not in cfg["filters"]:
            raise ConfigError(f"filters.{fid}: section missing from the configuration")


def _record_paths(out, seed):
    return (
        os.path.join(out, f"record_seed{seed}.csv"),
        os.path.join(out, f"record_seed{seed}.meta.json"),
    )


def _metrics_payload(metrics, traj, timing):
    values = dict(metrics.values)
    if timing:
        values["runtime_per_step"] = traj.runtime / max(traj.times.shape[0] - 1, 1)
    return values, list(metrics.flags)


def _metrics_text(values, flags):
    lines = [f"{k} = {format(float(v), '.17g')}" for k, v in values.items()]
    lines += [f"flag = {f}" for f in flags]
    return "\n".join(lines) + "\n"


def cmd_simulate(args):
    cfg = load_config(args.config, args.override, args.scenario)
    out = _out_dir(args, cfg)
    seed = args.seed if args.seed is not None else cfg["seeds"][0]
    exp = experiment_setup(cfg)
    rec = make_record(exp, seed)
    csv_path, meta_path = _record_paths(out, seed)
    rec.write(csv_path, meta_path)
    _write_manifest(out, cfg)
    print(f"wrote {csv_path} ({rec.steps + 1} rows)")
    return EXIT_OK


def _load_record(path, exp):
    meta = path[: -len(".csv")] + ".meta.json" if path.endswith(".csv") else path + ".meta.json"
    try:
        rec = SimulationRecord.read(path, meta)
    except OSError as exc:
        raise UsageError(f"--record: cannot read {exc.filename}: {exc.strerror}") from None
    if rec.steps != exp.steps or not np.isclose(rec.metadata.get("dt", exp.dt), exp.dt):
        raise ConfigError(
            f"--record: {rec.steps} steps at dt={rec.metadata.get('dt')} do not match "
            f"the configuration ({exp.steps} steps at dt={exp.dt})"
        )
    return rec


def cmd_filter(args):
    cfg = load_config(args.config, args.override, args.scenario)
    fid = args.filter
    _check_filters(cfg, [fid])
    out = _out_dir(args, cfg)
    seed = args.seed if args.seed is not None else cfg["seeds"][0]
    exp = experiment_setup(cfg)
    rec = _load_record(args.record, exp) if args.record else make_record(exp, seed)
    filt, model = build_filter(cfg, fid, seed, exp)
    traj = run(filt, rec, model, fid)
    values, flags = _metrics_payload(score(traj, rec, exp.burn_in), traj, args.timing)
    tpath = os.path.join(out, f"trajectory_{fid}_seed{seed}.csv")
    mpath = os.path.join(out, f"metrics_{fid}_seed{seed}.txt")
    traj.to_csv(tpath)
    with open(mpath, "w") as fh:
        fh.write(_metrics_text(values, flags))
    _write_manifest(out, cfg)
    print(f"wrote {tpath} and {mpath}")
    return EXIT_OK


def run_cell(cfg, fid, seed, record, timing=False):
    """One compare cell; returns ``(values, flags, error)``."""
    try:
        exp = experiment_setup(cfg)
        filt, model = build_filter(cfg, fid, seed, exp)
        traj = run(filt, record, model, fid, keep_covs=True)
        values, flags = _metrics_payload(score(traj, record, exp.burn_in), traj, timing)
        return values, flags, None
    except NumericalError as exc:
        return None, None, str(exc)


def aggregate(cells, filters, seeds):
    """Mean and population std per (filter, metric) over the successful seeds."""
    table = {}
    for fid in filters:
        runs = [cells[(fid, s)] for s in seeds]
        ok = [r for r in runs if r[2] is None]
        failures = {str(s): r[2] for s, r in zip(seeds, runs) if r[2] is not None}
        keys = []
        for r in ok:
            keys += [k for k in r[0] if k not in keys]
        metrics = {}
        for k in keys:
            v = np.array([r[0][k] for r in ok if k in r[0]], dtype=float)
            metrics[k] = {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}
        flags = sorted({f for r in ok for f in r[1]})
        table[fid] = {
            "status": "FAILED" if failures else "ok",
            "failures": failures,
            "metrics": metrics,
            "flags": flags,
        }
    return table


def render_text(table, seeds):
    keys = []
    for row in table.values():
        keys += [k for k in row["metrics"] if k not in keys]
    header = ["filter", "status"] + keys
    rows = []
    for fid, row in table.items():
        cells = [fid, row["status"]]
        for k in keys:
            m = row["metrics"].get(k)
            if m is None:
                cells.append("FAILED" if row["status"] == "FAILED" else "-")
            else:
                cells.append(f"{m['mean']:.4g} ± {m['std']:.2g}")
        rows.append(cells)
    widths = [max(len(r[j]) for r in [header] + rows) for j in range(len(header))]
    lines = [f"seeds: {', '.join(map(str, seeds))}"]
    for r in [header] + rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    for fid, row in table.items():
        for s, msg in row["failures"].items():
            lines.append(f"FAILED {fid} seed {s}: {msg}")
    return "\n".join(lines) + "\n"


def render_csv(path, table):
    keys = []
    for row in table.values():
        keys += [k for k in row["metrics"] if k not in keys]
    with open(path, "w") as fh:
        fh.write(",".join(["filter", "status", "n_failed"]
                          + [f"{k}_{s}" for k in keys for s in ("mean", "std")]) + "\n")
        for fid, row in table.items():
            vals = [fid, row["status"], str(len(row["failures"]))]
            for k in keys:
                m = row["metrics"].get(k)
                vals += ["", ""] if m is None else [format(m["mean"], ".17g"), format(m["std"], ".17g")]
            fh.write(",".join(vals) + "\n")


def cmd_compare(args):
    cfg = load_config(args.config, args.override, args.scenario)
    filters = parse_filters(args.filters) if args.filters is not None else list(cfg["filters"])
    if not filters:
        raise UsageError("compare: the filter list is empty")
    _check_filters(cfg, filters)
    seeds = parse_seeds(args.seeds) if args.seeds is not None else list(cfg["seeds"])
    out = _out_dir(args, cfg)
    exp = experiment_setup(cfg)
    # validate every filter section before any long run starts
    for fid in filters:
        build_filter(cfg, fid, seeds[0], exp)
    records = {s: make_record(exp, s) for s in seeds}
    jobs = [(fid, s) for fid in filters for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futures = {
                key: pool.submit(run_cell, cfg, key[0], key[1], records[key[1]], args.timing)
                for key in jobs
            }
            cells = {key: fut.result() for key, fut in futures.items()}
    else:
        cells = {key: run_cell(cfg, key[0], key[1], records[key[1]], args.timing) for key in jobs}

    table = aggregate(cells, filters, seeds)
    cell_dir = os.path.join(out, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    for (fid, s), (values, flags, err) in cells.items():
        with open(os.path.join(cell_dir, f"metrics_{fid}_seed{s}.txt"), "w") as fh:
            fh.write(f"error = {err}\n" if err is not None else _metrics_text(values, flags))
    with open(os.path.join(out, "compare.json"), "w") as fh:
        json.dump({"seeds": seeds, "filters": table}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    render_csv(os.path.join(out, "compare.csv"), table)
    text = render_text(table, seeds)
    with open(os.path.join(out, "compare.txt"), "w") as fh:
        fh.write(text)
    _write_manifest(out, cfg)
    sys.stdout.write(text)
    failed = any(row["status"] == "FAILED" for row in table.values())
    return EXIT_FAILED if failed else EXIT_OK


def _common(p):
    p.add_argument("--config", help="YAML or JSON experiment configuration")
    p.add_argument(
        "--scenario",
        choices=("state", "state_parameter", "input_state_parameter"),
        help="built-in scenario used as defaults (same as a top-level 'scenario' key)",
    )
    p.add_argument("--override", action="append", default=[], metavar="KEY.PATH=VALUE",
                   help="set a configuration field; 'pf.particles=30' means filters.pf.particles")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seqbayes", description="Sequential Bayesian estimation on the 3-DOF benchmark."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a ground-truth and measurement record")
    _common(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", help="run one filter on one seed")
    _common(p)
    p.add_argument("--filter", required=True, help=f"one of {', '.join(FILTER_IDS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--record", help="existing record CSV (written by 'simulate')")
    p.add_argument("--timing", action="store_true", help="add runtime_per_step to the metrics")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("compare", help="aggregate metrics of several filters over seeds")
    _common(p)
    p.add_argument("--filters", help="comma-separated filter ids (default: all configured)")
    p.add_argument("--seeds", help="count N (seeds 0..N-1), range a-b, or list a,b,c")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--timing", action="store_true",
                   help="add runtime_per_step (makes outputs non-reproducible)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        where = f" at step {exc.step}" if exc.step is not None else ""
        print(f"error: diverged{where}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

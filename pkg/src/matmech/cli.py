"""Command-line front end: ``matmech bound | design | answer | experiment | ingest``.

CSV bodies are deterministic for a given configuration and seed; timestamps
and timings go only into the JSON sidecar logs.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .error import PrivacyParams, error_report, svd_bound
from .experiment import (STRATEGY_SOURCES, ExperimentConfig, build_strategy, curves_csv,
                         example_table_rows, run_experiment, table_csv)
from .io import (DescriptorError, WorkloadDescriptor, fmt, ingest_csv, read_cells, read_matrix,
                 read_partition, write_matrix, write_vector)
from .lsa import LsaConfig, run_lsa
from .mechanism import consistency_check, matrix_mechanism
from .scaling import design_generalized, design_separated, generalize, separate
from .strategy import Strategy, reduce_rows
from .workload import CapacityError, DomainShape, Workload


class CliError(Exception):
    pass


def load_workload(spec: str, dense: bool = False) -> Workload:
    """A descriptor (JSON text or file) or a CSV matrix file."""
    if spec.endswith(".csv"):
        rows = read_matrix(spec)
        return Workload(DomainShape((rows.shape[1],)), rows=rows, name=Path(spec).stem)
    desc = WorkloadDescriptor.parse(spec)
    if desc.kind == "explicit":
        rows = read_matrix(desc.params["path"])
        return Workload(DomainShape(desc.shape), rows=rows, name=desc.label)
    return desc.build(dense=dense)


def load_strategy(spec: str, workload: Workload) -> Strategy:
    if spec in STRATEGY_SOURCES:
        return build_strategy(spec, workload)
    path = spec[5:] if spec.startswith("file:") else spec
    if not Path(path).is_file():
        raise CliError(f"strategy {spec!r} is neither a known name nor a file")
    return Strategy(read_matrix(path), shape=workload.shape, name=Path(path).stem)


def _privacy(args) -> PrivacyParams | None:
    if args.epsilon is None:
        return None
    delta = args.delta if args.delta is not None else 0.0
    return PrivacyParams(args.epsilon, delta, "l2" if delta > 0 else "l1")


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _sidecar(out: str | None, payload: dict, default: str):
    path = Path(out + ".log.json") if out else Path(default)
    payload = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"), **payload}
    path.write_text(json.dumps(payload, indent=2, default=float) + "\n")
    return path


# ---------------------------------------------------------------- commands

def cmd_bound(args) -> int:
    W = load_workload(args.workload)
    privacy = _privacy(args)
    if args.strategy:
        A = load_strategy(args.strategy, W)
        rep = error_report(W, A, privacy, workload_name=W.name, strategy_name=args.strategy)
        body = ",".join(rep.CSV_FIELDS) + "\n" + ",".join(rep.csv_row()) + "\n"
    else:
        body = f"workload,n,svdb\n{W.name},{W.n},{fmt(svd_bound(W, privacy))}\n"
    _emit(body, args.out)
    return 0


def cmd_design(args) -> int:
    config = LsaConfig(max_levels=args.levels)
    if args.separate:
        W = load_workload(args.workload, dense=True)
        res = design_separated(separate(W), config, _privacy(args))
        rows, log = res.rows, {"mode": "separated", **res.log()}
    elif args.generalize:
        W = load_workload(args.workload)
        res = design_generalized(generalize(W, m=args.generalize), config, shape=W.shape)
        rows, log = res.strategy.rows, {"mode": "generalized", **res.log()}
        log["total_error"] = error_report(W, res.strategy).total_error
    else:
        W = load_workload(args.workload)
        res = run_lsa(W, config, reduce=True)
        rows, log = reduce_rows(res.strategy.rows), {"mode": "lsa", **res.log()}
        log["ratio"] = error_report(W, res.strategy).ratio
    log["workload"] = W.name
    out = args.out or "strategy.csv"
    write_matrix(out, rows)
    side = _sidecar(out, log, "design.log.json")
    levels = log.get("levels_accepted", log.get("phase2_levels", log.get("levels")))
    print(f"wrote {out} ({rows.shape[0]} rows); levels: {levels}; log: {side}")
    return 0


def cmd_answer(args) -> int:
    if not args.data or not Path(args.data).is_file():
        raise CliError(f"data file {args.data!r} not found")
    W = load_workload(args.workload, dense=True)
    A = load_strategy(args.strategy or "identity", W)
    x = read_cells(args.data, W.shape)
    if args.epsilon is None:
        raise CliError("--epsilon is required")
    delta = args.delta if args.delta is not None else 0.0
    out = matrix_mechanism(W, A, x, args.epsilon, delta, seed=args.seed, zero_noise=args.zero_noise)
    consistent = consistency_check(out.answers, W)
    target = args.out or "answers.csv"
    write_vector(target, out.answers)
    write_vector(target.replace(".csv", "") + ".xhat.csv", out.x_hat.x)
    meta = out.metadata(args.epsilon, delta, A)
    meta.update({"workload": W.name, "strategy": A.name, "consistent": consistent})
    _sidecar(target, meta, "answers.log.json")
    print(f"wrote {target} ({len(out.answers)} answers); consistency check: "
          f"{'pass' if consistent else 'FAIL'}")
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        config = ExperimentConfig.load(args.config)
    else:
        config = ExperimentConfig(rows=example_table_rows(),
                                  curves=[{"shape": [256], "sizes": [100, 1000, 10000]}])
    t0 = time.perf_counter()
    table, points = run_experiment(config)
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "ratios.csv").write_text(table_csv(table))
    (outdir / "curves.csv").write_text(curves_csv(points))
    failed = [r for r in table if r.report is None]
    _sidecar(str(outdir / "experiment"), {"rows": len(table), "failed": len(failed),
                                          "curve_points": len(points),
                                          "wall_time_s": time.perf_counter() - t0},
             "experiment.log.json")
    sys.stdout.write(table_csv(table))
    if points:
        sys.stdout.write(curves_csv(points))
    return 1 if failed else 0


def cmd_ingest(args) -> int:
    if not args.data or not Path(args.data).is_file():
        raise CliError(f"data file {args.data!r} not found")
    if not args.partition:
        raise CliError("--partition is required")
    cells = ingest_csv(args.data, read_partition(args.partition))
    target = args.out or "cells.csv"
    write_vector(target, cells.x)
    print(f"wrote {target}: shape {list(cells.shape.dims)}, {int(cells.x.sum())} records")
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="matmech", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workload=True):
        if workload:
            sp.add_argument("--workload", required=True,
                            help='descriptor JSON (text or file), e.g. \'{"kind":"allrange","shape":[64]}\', or a CSV matrix')
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("bound", help="singular value bound (and a strategy's error)")
    common(sp)
    sp.add_argument("--strategy", help="stock name or strategy CSV")
    sp.set_defaults(fn=cmd_bound)

    sp = sub.add_parser("design", help="design a strategy with LSA")
    common(sp)
    sp.add_argument("--levels", type=int, help="cap on accepted levels")
    sp.add_argument("--separate", action="store_true", help="design per dimension of a marginal workload")
    sp.add_argument("--generalize", type=int, metavar="M", help="two-phase design over M merged blocks")
    sp.set_defaults(fn=cmd_design)

    sp = sub.add_parser("answer", help="run the matrix mechanism")
    common(sp)
    sp.add_argument("--strategy", help="stock name or strategy CSV (default identity)")
    sp.add_argument("--data", help="cell vector CSV")
    sp.add_argument("--zero-noise", action="store_true")
    sp.set_defaults(fn=cmd_answer)

    sp = sub.add_parser("experiment", help="ratio tables and sampled-workload curves")
    common(sp, workload=False)
    sp.add_argument("config", nargs="?", help="experiment JSON (default: the standard sweep)")
    sp.set_defaults(fn=cmd_experiment)

    sp = sub.add_parser("ingest", help="count a CSV table into cells")
    common(sp, workload=False)
    sp.add_argument("--data", help="CSV with header")
    sp.add_argument("--partition", help="JSON mapping attribute -> buckets")
    sp.set_defaults(fn=cmd_ingest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, DescriptorError, CapacityError, FileNotFoundError, ValueError,
            np.linalg.LinAlgError) as exc:
        print(f"matmech {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

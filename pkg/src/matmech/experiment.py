"""Experiment sweeps: error-ratio tables and sampled-workload bound curves.

Rows are independent and run on a thread pool (``MATMECH_THREADS`` caps it);
results always come back in configuration order, and a failing row is
recorded with its message while the rest of the sweep continues.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .error import ErrorReport, PrivacyParams, error_report, svd_bound
from .io import WorkloadDescriptor, fmt, read_matrix
from .lsa import LsaConfig, run_lsa
from .strategy import (Strategy, hierarchical_strategy_nd, identity_strategy, is_variable_agnostic,
                       variable_agnostic_optimal, wavelet_strategy_nd, workload_strategy)
from .workload import Workload, build_all_range, sample_range_workload

STRATEGY_SOURCES = ("identity", "hierarchical", "wavelet", "lsa", "var-agnostic", "workload", "file")


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("MATMECH_THREADS", "")))
    except ValueError:
        return max(1, min(8, os.cpu_count() or 1))


def _ordered_map(fn, items):
    items = list(items)
    if not items:
        return []
    with ThreadPoolExecutor(max_workers=min(thread_count(), len(items))) as pool:
        return list(pool.map(fn, items))


def build_strategy(source: str, workload: Workload, lsa: LsaConfig | None = None) -> Strategy:
    """``source`` is a stock name or ``file:<path>`` for a strategy CSV."""
    shape = workload.shape
    if source == "identity":
        return Strategy(identity_strategy(shape.n).rows, shape=shape, name="identity")
    if source == "hierarchical":
        return hierarchical_strategy_nd(shape.dims)
    if source == "wavelet":
        return wavelet_strategy_nd(shape.dims)
    if source == "workload":
        return workload_strategy(workload)
    if source == "lsa":
        return run_lsa(workload, lsa).strategy
    if source == "var-agnostic":
        form = is_variable_agnostic(workload.gram)
        if form is None:
            raise ValueError("workload Gram is not variable agnostic")
        return variable_agnostic_optimal(form)
    if source.startswith("file:"):
        return Strategy(read_matrix(source[5:]), shape=shape, name=Path(source[5:]).stem)
    raise ValueError(f"unknown strategy source {source!r}")


# ------------------------------------------------------------ ratio table

@dataclass(frozen=True)
class RatioRow:
    workload: dict
    strategy: str


@dataclass
class RatioResult:
    row: RatioRow
    report: ErrorReport | None
    error: str | None = None

    TABLE_FIELDS = ErrorReport.CSV_FIELDS + ("status",)

    def csv_row(self) -> list[str]:
        if self.report is not None:
            return self.report.csv_row() + ["ok"]
        label = WorkloadDescriptor.from_dict(self.row.workload).label \
            if isinstance(self.row.workload, dict) and "kind" in self.row.workload else "?"
        return [label, self.row.strategy, "", "", "", "", "", f"error: {self.error}"]


def run_ratio_table(rows, privacy: PrivacyParams | None = None,
                    lsa: LsaConfig | None = None) -> list[RatioResult]:
    cache: dict[str, Workload] = {}

    def workload_for(d: dict) -> Workload:
        key = json.dumps(d, sort_keys=True)
        if key not in cache:
            cache[key] = WorkloadDescriptor.from_dict(d).build()
        return cache[key]

    # build the shared workloads once, serially, before fanning out
    for r in rows:
        try:
            workload_for(r.workload)
        except Exception:
            pass

    def one(r: RatioRow) -> RatioResult:
        try:
            W = workload_for(r.workload)
            A = build_strategy(r.strategy, W, lsa)
            return RatioResult(r, error_report(W, A, privacy, strategy_name=r.strategy))
        except Exception as exc:   # recorded per row; the sweep goes on
            return RatioResult(r, None, f"{type(exc).__name__}: {exc}")

    return _ordered_map(one, rows)


def example_table_rows(one_dim: int = 1024, two_dim: tuple[int, int] = (32, 32)) -> list[RatioRow]:
    """Workload-as-strategy, identity, hierarchical and wavelet on all-range workloads."""
    out = []
    for shape in ([one_dim], list(two_dim)):
        for s in ("workload", "identity", "hierarchical", "wavelet"):
            out.append(RatioRow({"kind": "allrange", "shape": shape}, s))
    return out


# ------------------------------------------------------- sampled workloads

@dataclass(frozen=True)
class CurvePoint:
    shape: tuple[int, ...]
    mode: str
    size: int
    seed: int
    svdb: float
    ratio: float

    FIELDS = ("workload", "mode", "size", "seed", "svdb", "ratio")

    def csv_row(self) -> list[str]:
        dims = "x".join(str(d) for d in self.shape)
        return [f"allrange({dims})", self.mode, str(self.size), str(self.seed),
                fmt(self.svdb), fmt(self.ratio)]


def sampled_ratio(shape, size: int, mode: str, seed: int, beta: float = 8.0,
                  full_per_query: float | None = None) -> CurvePoint:
    """Per-query bound of a sample relative to the full all-range workload.

    ``(svdb(sample) / m_sample) / (svdb(full) / m_full)``; samples are drawn
    without repeats so that the largest sizes approach the full workload.
    """
    if full_per_query is None:
        full = build_all_range(shape)
        full_per_query = svd_bound(full) / full.m
    W = sample_range_workload(shape, size, mode, beta, seed, distinct=True)
    bound = svd_bound(W)
    return CurvePoint(tuple(W.shape.dims), mode, size, seed, bound, bound / size / full_per_query)


def run_sampled_curves(shape=(256,), sizes=(100, 1000, 10000), modes=("uniform", "biased"),
                       seed: int = 0, beta: float = 8.0) -> list[CurvePoint]:
    full = build_all_range(shape)
    per_query = svd_bound(full) / full.m
    jobs = [(mode, size) for mode in modes for size in sizes]
    return _ordered_map(lambda j: sampled_ratio(shape, j[1], j[0], seed, beta, per_query), jobs)


# ------------------------------------------------------------------ config

@dataclass
class ExperimentConfig:
    rows: list[RatioRow] = field(default_factory=list)
    curves: list[dict] = field(default_factory=list)
    privacy: PrivacyParams | None = None
    lsa: LsaConfig = field(default_factory=LsaConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        rows = []
        for r in d.get("rows", []):
            strategies = r.get("strategies", [r.get("strategy")])
            for s in strategies:
                if s is None:
                    raise ValueError("each row needs a strategy")
                rows.append(RatioRow(r["workload"], s))
        privacy = None
        if d.get("privacy"):
            p = d["privacy"]
            privacy = PrivacyParams(p["epsilon"], p.get("delta", 0.0), p.get("variant", "l2"))
        lsa = LsaConfig(**d.get("lsa", {}))
        return cls(rows, list(d.get("curves", [])), privacy, lsa)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_experiment(config: ExperimentConfig) -> tuple[list[RatioResult], list[CurvePoint]]:
    table = run_ratio_table(config.rows, config.privacy, config.lsa)
    points: list[CurvePoint] = []
    for c in config.curves:
        points.extend(run_sampled_curves(tuple(c.get("shape", (256,))),
                                         tuple(c.get("sizes", (100, 1000, 10000))),
                                         tuple(c.get("modes", ("uniform", "biased"))),
                                         int(c.get("seed", 0)), float(c.get("beta", 8.0))))
    return table, points


def table_csv(results: list[RatioResult]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RatioResult.TABLE_FIELDS)
    for r in results:
        w.writerow(r.csv_row())
    return buf.getvalue()


def curves_csv(points: list[CurvePoint]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CurvePoint.FIELDS)
    for p in points:
        w.writerow(p.csv_row())
    return buf.getvalue()

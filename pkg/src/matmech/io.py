"""File formats: workload descriptors, matrix and cell-vector CSV, tabular ingestion."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .workload import (CellVector, DomainShape, Workload, build_all_predicate, build_all_range,
                       identity_workload, ingest_cells, marginal_range_workload,
                       sample_range_workload)

KINDS = ("allrange", "allpredicate", "marginals", "sampled-range", "explicit", "identity")


class DescriptorError(ValueError):
    """A workload descriptor is malformed or names an unknown kind."""


def fmt(value: float) -> str:
    """12 significant digits, '.' decimal, independent of locale."""
    return f"{float(value):.12g}"


@dataclass(frozen=True)
class WorkloadDescriptor:
    kind: str
    shape: tuple[int, ...]
    params: dict = field(default_factory=dict, hash=False)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DescriptorError(f"unknown workload kind {self.kind!r}; expected one of {KINDS}")
        if not self.shape or any(int(d) < 1 for d in self.shape):
            raise DescriptorError(f"bad shape {self.shape!r}")
        if self.kind == "allpredicate" and len(self.shape) != 1:
            raise DescriptorError("allpredicate takes a one-dimensional shape [n]")
        if self.kind == "sampled-range":
            if int(self.params.get("count", 0)) < 1:
                raise DescriptorError("sampled-range needs params.count >= 1")
            if self.seed is None:
                raise DescriptorError("sampled-range needs a seed")
        if self.kind == "explicit" and "path" not in self.params:
            raise DescriptorError("explicit workloads need params.path")

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadDescriptor":
        if not isinstance(d, dict) or "kind" not in d or "shape" not in d:
            raise DescriptorError("descriptor needs 'kind' and 'shape'")
        shape = d["shape"]
        shape = (int(shape),) if isinstance(shape, (int, float)) else tuple(int(s) for s in shape)
        return cls(d["kind"], shape, dict(d.get("params") or {}), d.get("seed"))

    @classmethod
    def parse(cls, text: str) -> "WorkloadDescriptor":
        """From a JSON string, or from the path of a JSON file."""
        text = text.strip()
        if not text.startswith("{") and Path(text).is_file():
            text = Path(text).read_text()
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DescriptorError(f"malformed descriptor JSON: {exc}") from None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shape": list(self.shape), "params": self.params, "seed": self.seed}

    @property
    def label(self) -> str:
        dims = "x".join(str(d) for d in self.shape)
        return f"{self.kind}({dims})"

    def build(self, dense: bool | None = None) -> Workload:
        p = self.params
        dense = bool(p.get("dense", False)) if dense is None else dense
        if self.kind == "allrange":
            W = build_all_range(self.shape, dense=dense)
        elif self.kind == "allpredicate":
            W = build_all_predicate(self.shape[0], dense=dense)
        elif self.kind == "marginals":
            W = marginal_range_workload(self.shape)
        elif self.kind == "identity":
            W = identity_workload(DomainShape(self.shape).n)
        elif self.kind == "sampled-range":
            W = sample_range_workload(self.shape, int(p["count"]), p.get("mode", "uniform"),
                                      float(p.get("beta", 8.0)), self.seed,
                                      distinct=bool(p.get("distinct", False)))
        else:
            rows = read_matrix(p["path"])
            W = Workload(DomainShape(self.shape), rows=rows)
        return Workload(W.shape, rows=W.rows, gram=W.gram, m=W.m, name=self.label)


# -------------------------------------------------------------- matrices

def read_matrix(path) -> np.ndarray:
    """One query per line, comma-separated decimals."""
    rows = []
    with open(path, newline="") as fh:
        for line in csv.reader(fh):
            if line and any(c.strip() for c in line):
                rows.append([float(c) for c in line])
    if not rows:
        raise ValueError(f"{path}: no rows")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have different lengths")
    return np.array(rows)


def write_matrix(path, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(matrix):
            w.writerow(fmt(v) for v in row)


def read_vector(path) -> np.ndarray:
    """Single-column CSV; a header line that is not a number is skipped."""
    values = []
    with open(path, newline="") as fh:
        for i, line in enumerate(csv.reader(fh)):
            if not line or not line[0].strip():
                continue
            try:
                values.append(float(line[0]))
            except ValueError:
                if i == 0:
                    continue
                raise
    return np.array(values)


def write_vector(path, values, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        for v in np.ravel(values):
            fh.write(fmt(v) + "\n")


def read_cells(path, shape) -> CellVector:
    return CellVector(DomainShape.of(shape), read_vector(path), "synthetic")


# -------------------------------------------------------------- ingestion

def read_partition(path) -> dict:
    """JSON mapping attribute -> category list or ``{"edges": [...]}`` interval boundaries."""
    d = json.loads(Path(path).read_text())
    if not isinstance(d, dict) or not d:
        raise ValueError("partition must map attribute names to buckets")
    return d


def ingest_csv(table_path, partition: dict) -> CellVector:
    """Count the rows of a headed CSV into the cells of ``partition``.

    Values that parse as numbers are compared numerically, others as strings.
    """
    def convert(v: str):
        try:
            return float(v)
        except ValueError:
            return v

    with open(table_path, newline="") as fh:
        records = [{k: convert(v) for k, v in row.items()} for row in csv.DictReader(fh)]
    return ingest_cells(records, partition)

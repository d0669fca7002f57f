"""Voxel overlap, ground-truth recovery and experiment reports.

Report schemas
--------------
Report CSV: one row per source/target pair with the fixed columns
``source, target, n_tract_a, n_tract_b, n_superset_b`` followed by one
column per metric, named ``<metric>:<method>`` (e.g. ``jaccard:SA-1000``).
Metric columns are sorted by metric name, then by method in the order the
methods were first given.

Report JSON: ``{"columns": [...], "rows": [{column: value}], "traces":
{pair_id: [[iteration, loss, normalized_loss, accepted], ...]}}``.

Loss-trace CSV: header ``iteration,loss,normalized_loss,accepted``, one row
per annealing iteration including iteration 0 (the initial mapping).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Tractography, voxelize
from .graph import as_mapping, normalized_loss

DEFAULT_VOXEL_SIZE = (2.0, 2.0, 2.0)
PAIR_COLUMNS = ("source", "target", "n_tract_a", "n_tract_b", "n_superset_b")
TRACE_HEADER = ("iteration", "loss", "normalized_loss", "accepted")


@dataclass(frozen=True)
class OverlapReport:
    """Voxel overlap of two tractographies.

    ``jaccard`` follows the min-denominator formula (an overlap coefficient);
    ``union_jaccard`` is the classical intersection over union. ``empty`` is
    set when either voxel set is empty, in which case both scores are 0.
    """

    jaccard: float
    union_jaccard: float
    vol_a: int
    vol_b: int
    vol_intersection: int
    voxel_size: tuple[float, float, float]
    empty: bool = False

    def as_dict(self) -> dict:
        return {
            "jaccard": self.jaccard,
            "union_jaccard": self.union_jaccard,
            "vol_a": self.vol_a,
            "vol_b": self.vol_b,
            "vol_intersection": self.vol_intersection,
            "voxel_size": list(self.voxel_size),
            "empty": self.empty,
        }


def mapped_tract(t_b: Tractography, q, superset_indices=None,
                 name: str | None = "mapped_tract") -> Tractography:
    """Target streamlines hit by ``q``, each once, in increasing index order.

    ``q`` indexes into ``superset_indices`` (or directly into ``t_b`` when it
    is None).
    """
    q = as_mapping(q)
    pool = np.arange(len(t_b)) if superset_indices is None else np.asarray(superset_indices, np.int64)
    if q.max() >= len(pool):
        raise IndexError(f"mapping target {int(q.max())} out of range for {len(pool)} candidates")
    chosen = np.unique(pool[q])
    if chosen.min() < 0 or chosen.max() >= len(t_b):
        raise IndexError(f"superset index out of range for {len(t_b)} streamlines")
    return t_b.subset(chosen, name=name)


def overlap_from_voxels(va, vb) -> OverlapReport:
    if va.voxel_size != vb.voxel_size:
        raise GeometryError("voxel sets use different voxel sizes")
    inter = len(va.voxels & vb.voxels)
    na, nb = len(va), len(vb)
    if min(na, nb) == 0:
        return OverlapReport(0.0, 0.0, na, nb, inter, va.voxel_size, empty=True)
    return OverlapReport(
        jaccard=inter / min(na, nb),
        union_jaccard=inter / (na + nb - inter),
        vol_a=na, vol_b=nb, vol_intersection=inter, voxel_size=va.voxel_size,
    )


def jaccard_overlap(t_a: Tractography, t_b_mapped: Tractography,
                    voxel_size=DEFAULT_VOXEL_SIZE) -> OverlapReport:
    """Shared voxels over the smaller of the two voxel volumes."""
    return overlap_from_voxels(voxelize(t_a, voxel_size), voxelize(t_b_mapped, voxel_size))


def recovery_rate(q, ground_truth) -> float:
    """Fraction of sources mapped to their ground-truth target."""
    q = as_mapping(q)
    truth = as_mapping(ground_truth)
    if q.shape != truth.shape:
        raise GeometryError(f"mapping has {q.size} sources, ground truth {truth.size}")
    return float(np.mean(q == truth))


# -- reports -------------------------------------------------------------------

@dataclass
class PairResult:
    """Inputs and per-method metrics of one mapping experiment."""

    source: str
    target: str
    n_tract_a: int
    n_tract_b: int
    n_superset_b: int
    metrics: dict = field(default_factory=dict)  # {method: {metric: value}}
    trace: object = None  # AnnealTrace or None

    @property
    def pair_id(self) -> str:
        return f"{self.source}->{self.target}"


@dataclass
class ExperimentReport:
    columns: list
    rows: list
    traces: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_cell(row[c]) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns, "rows": self.rows, "traces": self.traces},
                          indent=2, sort_keys=False)


def _cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else v


def build_report(pairs) -> ExperimentReport:
    """Assemble a Table-1-shaped report from a list of :class:`PairResult`."""
    pairs = list(pairs)
    methods: list[str] = []
    metric_names: set[str] = set()
    for p in pairs:
        for method, values in p.metrics.items():
            if method not in methods:
                methods.append(method)
            metric_names.update(values)
    metric_cols = [f"{metric}:{method}" for metric in sorted(metric_names) for method in methods]

    rows = []
    for p in pairs:
        for size in (p.n_tract_a, p.n_tract_b, p.n_superset_b):
            if size < 1:
                raise GeometryError(f"pair {p.pair_id}: sizes must be positive")
        row = {"source": p.source, "target": p.target, "n_tract_a": p.n_tract_a,
               "n_tract_b": p.n_tract_b, "n_superset_b": p.n_superset_b}
        for metric in sorted(metric_names):
            for method in methods:
                v = p.metrics.get(method, {}).get(metric)
                row[f"{metric}:{method}"] = None if v is None else float(v)
        rows.append(row)
    traces = {p.pair_id: [list(r) for r in p.trace.records()] for p in pairs if p.trace is not None}
    return ExperimentReport(columns=list(PAIR_COLUMNS) + metric_cols, rows=rows, traces=traces)


def trace_csv(trace) -> str:
    """Loss trace as CSV; ``normalized_loss`` is ``loss / n_source``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for k, loss, _, acc in trace.records():
        w.writerow([k, repr(loss), repr(normalized_loss(loss, trace.n_source)), int(acc)])
    return buf.getvalue()


def read_trace_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{"iteration": int(r["iteration"]), "loss": float(r["loss"]),
             "normalized_loss": float(r["normalized_loss"]), "accepted": r["accepted"] == "1"}
            for r in rows]

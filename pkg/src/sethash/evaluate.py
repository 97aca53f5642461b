"""Retrieval metrics and a random-hyperplane baseline.

Conventions (they change the numbers, so they are spelled out):

* Average precision divides by the total number of relevant database items,
  and queries with no relevant database item are excluded from every mean.
* precision@k always divides by k, so ``precision@k * k`` equals the number
  of relevant items retrieved even when the database is smaller than k.
* Precision within a Hamming radius counts an empty bucket as precision 0 by
  default (``empty_bucket_zero=False`` skips such queries instead).
* The hyperplane baseline hashes each set's mean vector; it exists purely as
  a point of comparison for the learned codes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import SEED_LSH, HashCode, PointSet, SetDataset, rng_for, signs_to_bits
from .errors import DataFormatError, DegenerateDataError, DimensionMismatchError
from .index import CodeIndex, RankedResult, lookup_radius, rank

__all__ = [
    "MetricReport",
    "EvalConfig",
    "average_precision",
    "evaluate",
    "LshBaseline",
    "lsh_baseline_train",
    "emit_curves",
    "parse_curves",
]

DEFAULT_CUTOFFS = tuple(range(100, 1601, 100))


@dataclass(frozen=True)
class MetricReport:
    """Retrieval quality summary; curve data lives in (x, value) pairs."""

    map: float
    precision_at_k: tuple[tuple[int, float], ...] = ()
    recall_at_k: tuple[tuple[int, float], ...] = ()
    precision_at_radius: tuple[tuple[int, float], ...] = ()
    per_query: tuple[tuple[str, float], ...] | None = None
    query_count: int = 0


@dataclass(frozen=True)
class EvalConfig:
    cutoffs: tuple[int, ...] = DEFAULT_CUTOFFS
    radii: tuple[int, ...] = (2,)
    empty_bucket_zero: bool = True
    per_query: bool = False


def average_precision(ranking: Sequence[RankedResult], relevant: set[str]) -> float:
    """Mean of precision@rank over the ranks holding relevant items.

    The denominator is the total number of relevant items, so items the
    ranking never returns count against the score.
    """
    if not relevant:
        raise DegenerateDataError("average precision needs at least one relevant item")
    hits = 0
    total = 0.0
    for pos, res in enumerate(ranking, start=1):
        if res.id in relevant:
            hits += 1
            total += hits / pos
    return total / len(relevant)


def evaluate(
    index: CodeIndex,
    queries: Sequence[tuple[HashCode, int]],
    config: EvalConfig = EvalConfig(),
    query_ids: Sequence[str] | None = None,
) -> MetricReport:
    """Score labeled queries against a labeled index.

    Relevance is label equality.  Queries whose label never occurs in the
    database are excluded from all means.
    """
    if index.labels is None:
        raise DataFormatError("evaluation needs labels on the index")
    if query_ids is not None and len(query_ids) != len(queries):
        raise DataFormatError("query_ids must align with queries")
    label_arr = np.array(index.labels)
    id_arr = np.array(index.ids)

    aps: list[float] = []
    per_query: list[tuple[str, float]] = []
    cutoffs = tuple(config.cutoffs)
    prec_acc = np.zeros(len(cutoffs))
    rec_acc = np.zeros(len(cutoffs))
    radius_acc = {rad: [] for rad in config.radii}
    evaluated = 0

    for qi, (code, label) in enumerate(queries):
        relevant_ids = set(id_arr[label_arr == label].tolist())
        if not relevant_ids:
            continue
        evaluated += 1
        ranking = rank(index, code, k=len(index))
        ap = average_precision(ranking, relevant_ids)
        aps.append(ap)
        if config.per_query:
            per_query.append((query_ids[qi] if query_ids is not None else str(qi), ap))
        rel_flags = np.array([r.id in relevant_ids for r in ranking])
        rel_cum = np.concatenate([[0], np.cumsum(rel_flags)])
        for ci, k in enumerate(cutoffs):
            got = int(rel_cum[min(k, len(ranking))])
            prec_acc[ci] += got / k
            rec_acc[ci] += got / len(relevant_ids)
        for rad in config.radii:
            bucket = lookup_radius(index, code, rad)
            if bucket:
                good = sum(1 for r in bucket if r.id in relevant_ids)
                radius_acc[rad].append(good / len(bucket))
            elif config.empty_bucket_zero:
                radius_acc[rad].append(0.0)

    if evaluated == 0:
        return MetricReport(map=0.0, query_count=0)
    return MetricReport(
        map=float(np.mean(aps)),
        precision_at_k=tuple((k, float(prec_acc[ci] / evaluated)) for ci, k in enumerate(cutoffs)),
        recall_at_k=tuple((k, float(rec_acc[ci] / evaluated)) for ci, k in enumerate(cutoffs)),
        precision_at_radius=tuple(
            (rad, float(np.mean(vals)) if vals else 0.0) for rad, vals in radius_acc.items()
        ),
        per_query=tuple(per_query) if config.per_query else None,
        query_count=evaluated,
    )


@dataclass(frozen=True)
class LshBaseline:
    """Random hyperplanes through the origin, applied to set mean vectors."""

    planes: np.ndarray  # (bits, dim)

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(np.asarray(self.planes, dtype=np.float64))
        if p.ndim != 2:
            raise DataFormatError("planes must be (bits, dim)")
        p.setflags(write=False)
        object.__setattr__(self, "planes", p)

    @property
    def bits(self) -> int:
        return self.planes.shape[0]

    @property
    def dim(self) -> int:
        return self.planes.shape[1]

    def encode(self, target: PointSet) -> HashCode:
        if target.dim != self.dim:
            raise DimensionMismatchError(f"baseline expects dimension {self.dim}, got {target.dim}")
        return HashCode.from_bits(signs_to_bits(self.planes @ target.mean))

    def encode_dataset(self, data: SetDataset) -> list[HashCode]:
        return [self.encode(s) for s in data.sets]


def lsh_baseline_train(data: SetDataset, nbits: int, seed: int) -> LshBaseline:
    """Draw seeded standard-normal hyperplanes for the given dimension."""
    if nbits < 1:
        raise DataFormatError(f"nbits must be >= 1, got {nbits}")
    rng = rng_for(seed, SEED_LSH)
    return LshBaseline(planes=rng.standard_normal((nbits, data.dim)))


# ---------------------------------------------------------------------------
# Curve serialization


def emit_curves(report: MetricReport, path: str | Path) -> None:
    """Write the report as metric,x,y rows; empty sections are omitted.

    Floats are written with ``repr`` so parsing the file back reproduces the
    values exactly.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "x", "y"])
        writer.writerow(["map", 0, repr(report.map)])
        for k, v in report.precision_at_k:
            writer.writerow(["precision_at_k", k, repr(v)])
        for k, v in report.recall_at_k:
            writer.writerow(["recall_at_k", k, repr(v)])
        for rad, v in report.precision_at_radius:
            writer.writerow(["precision_at_radius", rad, repr(v)])
        if report.per_query:
            for qid, ap in report.per_query:
                writer.writerow(["average_precision", qid, repr(ap)])


def parse_curves(path: str | Path) -> MetricReport:
    """Read a file written by :func:`emit_curves`."""
    sections: dict[str, list[tuple]] = {
        "precision_at_k": [],
        "recall_at_k": [],
        "precision_at_radius": [],
        "average_precision": [],
    }
    map_value = 0.0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["metric", "x", "y"]:
            raise DataFormatError(f"{path}: not a curves file")
        for row in reader:
            metric, x, y = row
            if metric == "map":
                map_value = float(y)
            elif metric == "average_precision":
                sections[metric].append((x, float(y)))
            elif metric in sections:
                sections[metric].append((int(x), float(y)))
            else:
                raise DataFormatError(f"{path}: unknown metric {metric!r}")
    per_query = tuple(sections["average_precision"]) or None
    return MetricReport(
        map=map_value,
        precision_at_k=tuple(sections["precision_at_k"]),
        recall_at_k=tuple(sections["recall_at_k"]),
        precision_at_radius=tuple(sections["precision_at_radius"]),
        per_query=per_query,
        query_count=0,
    )

"""Link-level metrics: micro precision/recall/F1, crossing-conflict rate,
and distance-bucketed recall."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .docmodel import Document
from .geometry import segments_cross

__all__ = [
    "MetricsReport",
    "DEFAULT_BUCKETS",
    "link_f1",
    "crossing_rate",
    "recall_by_distance",
    "evaluate",
    "write_report_json",
    "write_report_csv",
]

DEFAULT_BUCKETS: tuple[float, ...] = (0.0, 0.15, 0.3, math.sqrt(2.0))

Links = set[tuple[int, int]]


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    crossing_conflict_rate: float
    recall_by_distance: list[dict]
    tp: int
    fp: int
    fn: int
    n_docs: int
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "crossing_conflict_rate": self.crossing_conflict_rate,
            "recall_by_distance": self.recall_by_distance,
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn},
            "n_docs": self.n_docs,
            "seed": self.seed,
            "config_hash": self.config_hash,
            **({"extra": self.extra} if self.extra else {}),
        }


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def link_f1(preds: Sequence[Links], golds: Sequence[Links]) -> tuple[float, float, float]:
    """Exact-match directed-link F1, micro-averaged across documents."""
    tp = fp = fn = 0
    for pred, gold in zip(preds, golds):
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    return _prf(tp, fp, fn)


def _center(doc: Document, idx: int) -> tuple[float, float]:
    return doc.entities[idx].bbox.center


def crossing_rate(pred: Links, doc: Document) -> float:
    """Fraction of unordered predicted-link pairs whose center-anchored
    segments properly cross; 0 when fewer than 2 links."""
    links = sorted(pred)
    if len(links) < 2:
        return 0.0
    crossings = 0
    total = 0
    for a in range(len(links)):
        for b in range(a + 1, len(links)):
            total += 1
            (k1, v1), (k2, v2) = links[a], links[b]
            if segments_cross(_center(doc, k1), _center(doc, v1),
                              _center(doc, k2), _center(doc, v2)):
                crossings += 1
    return crossings / total


def _bucket_index(dist: float, edges: Sequence[float]) -> Optional[int]:
    """Left-closed, right-open; the last bucket is right-closed."""
    for b in range(len(edges) - 1):
        if edges[b] <= dist < edges[b + 1]:
            return b
    if dist == edges[-1]:
        return len(edges) - 2
    return None


def recall_by_distance(
    pred: Links, gold: Links, doc: Document, buckets: Sequence[float]
) -> tuple[list[int], list[int]]:
    """Per-bucket (gold count, recovered count) over normalized center
    distance."""
    edges = list(buckets)
    if edges != sorted(edges) or len(edges) < 2:
        raise ValueError(f"bucket edges must be ascending, got {buckets}")
    totals = [0] * (len(edges) - 1)
    hits = [0] * (len(edges) - 1)
    for k, v in gold:
        (x1, y1), (x2, y2) = _center(doc, k), _center(doc, v)
        b = _bucket_index(math.hypot(x2 - x1, y2 - y1), edges)
        if b is None:
            continue
        totals[b] += 1
        if (k, v) in pred:
            hits[b] += 1
    return totals, hits


def evaluate(
    docs: Sequence[Document],
    preds: Sequence[Links],
    buckets: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    cfg_hash: Optional[str] = None,
) -> MetricsReport:
    """Aggregate all metrics over a dataset (micro counts across documents).

    Crossing-conflict rate averages per-document rates over documents with
    at least 2 predicted links; an empty distance bucket reports null.
    """
    edges = list(buckets) if buckets is not None else list(DEFAULT_BUCKETS)
    tp = fp = fn = 0
    totals = [0] * (len(edges) - 1)
    hits = [0] * (len(edges) - 1)
    xr_sum = 0.0
    xr_docs = 0
    for doc, pred in zip(docs, preds):
        gold = set(doc.links)
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
        t, h = recall_by_distance(pred, gold, doc, edges)
        totals = [a + b for a, b in zip(totals, t)]
        hits = [a + b for a, b in zip(hits, h)]
        if len(pred) >= 2:
            xr_sum += crossing_rate(pred, doc)
            xr_docs += 1
    p, r, f = _prf(tp, fp, fn)
    by_dist = [
        {
            "lo": edges[b],
            "hi": edges[b + 1],
            "gold": totals[b],
            "recall": (hits[b] / totals[b]) if totals[b] else None,
        }
        for b in range(len(edges) - 1)
    ]
    return MetricsReport(
        precision=p,
        recall=r,
        f1=f,
        crossing_conflict_rate=(xr_sum / xr_docs) if xr_docs else 0.0,
        recall_by_distance=by_dist,
        tp=tp,
        fp=fp,
        fn=fn,
        n_docs=len(docs),
        seed=seed,
        config_hash=cfg_hash,
    )


def write_report_json(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_report_csv(reports: Sequence[MetricsReport], path) -> None:
    """One row per run, for seed sweeps."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "precision", "recall", "f1",
                        "crossing_conflict_rate", "tp", "fp", "fn", "n_docs"])
        for r in reports:
            writer.writerow([r.seed, r.precision, r.recall, r.f1,
                             r.crossing_conflict_rate, r.tp, r.fp, r.fn, r.n_docs])

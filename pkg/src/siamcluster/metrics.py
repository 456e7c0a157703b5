"""Clustering quality: weighted clustering purity (ACC), BCubed P/R/F and
same/different-identity similarity histograms."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .errors import EvaluationError

TRACK = "track"
FRAME = "frame"


@dataclass(frozen=True)
class LabeledPartition:
    item_ids: tuple
    predicted: tuple
    true: tuple
    weights: tuple | None = None

    def __post_init__(self):
        n = len(self.item_ids)
        if n == 0:
            raise EvaluationError("empty partition")
        if len(self.predicted) != n or len(self.true) != n:
            raise EvaluationError("item, cluster and label counts differ")
        if any(t is None for t in self.true):
            raise EvaluationError("every item needs a ground-truth label")
        if self.weights is not None:
            if len(self.weights) != n:
                raise EvaluationError("weight count differs from item count")
            if any(not w > 0 for w in self.weights):
                raise EvaluationError("weights must be positive")

    @classmethod
    def build(cls, predicted: Sequence[Hashable], true: Sequence[Hashable], weights=None, item_ids=None):
        ids = tuple(range(len(predicted))) if item_ids is None else tuple(item_ids)
        w = None if weights is None else tuple(float(x) for x in weights)
        return cls(ids, tuple(predicted), tuple(true), w)

    def weight_array(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.item_ids))
        return np.asarray(self.weights, dtype=np.float64)


@dataclass(frozen=True)
class MetricReport:
    acc: float
    bcubed_p: float
    bcubed_r: float
    bcubed_f: float
    level: str

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> MetricReport:
        return cls(**payload)


def _codes(values) -> tuple[np.ndarray, int]:
    uniq = {}
    codes = np.array([uniq.setdefault(v, len(uniq)) for v in values], dtype=np.int64)
    return codes, len(uniq)


def _contingency(partition: LabeledPartition) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted cluster x class table plus each item's (cluster, class) codes."""
    c, nc = _codes(partition.predicted)
    t, nt = _codes(partition.true)
    table = np.zeros((nc, nt))
    np.add.at(table, (c, t), partition.weight_array())
    return table, c, t


def clustering_accuracy(partition: LabeledPartition) -> float:
    """Sum over clusters of the majority-label weight, divided by the total weight."""
    table, _, _ = _contingency(partition)
    return float(table.max(axis=1).sum() / table.sum())


def _f_measure(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def bcubed(partition: LabeledPartition) -> tuple[float, float, float]:
    table, c, t = _contingency(partition)
    w = partition.weight_array()
    overlap = table[c, t]
    p_item = overlap / table.sum(axis=1)[c]
    r_item = overlap / table.sum(axis=0)[t]
    total = w.sum()
    p = float((w * p_item).sum() / total)
    r = float((w * r_item).sum() / total)
    return p, r, _f_measure(p, r)


def evaluate(partition: LabeledPartition, level: str = TRACK) -> MetricReport:
    p, r, f = bcubed(partition)
    return MetricReport(clustering_accuracy(partition), p, r, f, level)


def _tracks_of(source):
    """Accept a Dataset or any sequence of Track records."""
    return list(source.tracks if hasattr(source, "tracks") else source)


def track_partition(assignment, dataset) -> LabeledPartition:
    """Track-level partition from a cluster assignment keyed by track_id."""
    tracks = _tracks_of(dataset)
    mapping = assignment.mapping
    missing = [t.track_id for t in tracks if t.track_id not in mapping]
    if missing:
        raise EvaluationError(f"tracks without a cluster: {missing[:10]}")
    if any(t.label is None for t in tracks):
        raise EvaluationError("evaluation requires a label on every track")
    ids = [t.track_id for t in tracks]
    return LabeledPartition.build([mapping[i] for i in ids], [t.label for t in tracks], item_ids=ids)


def frame_level_view(partition: LabeledPartition, dataset) -> LabeledPartition:
    """Weight every track by its frame count; each frame inherits its track's cluster and label."""
    counts = {t.track_id: len(t.frame_ids) for t in _tracks_of(dataset)}
    weights = []
    for tid in partition.item_ids:
        n = counts.get(tid, 0)
        if n == 0:
            raise EvaluationError(f"track {tid} has no frames")
        weights.append(n)
    return LabeledPartition.build(partition.predicted, partition.true, weights, partition.item_ids)


def evaluate_assignment(assignment, dataset, level: str = TRACK) -> MetricReport:
    part = track_partition(assignment, dataset)
    if level == FRAME:
        part = frame_level_view(part, dataset)
    elif level != TRACK:
        raise EvaluationError(f"unknown evaluation level {level!r}")
    return evaluate(part, level)


def similarity_histogram(track_reps: np.ndarray, labels: Sequence, num_bins: int = 100):
    """Cosine similarities of all unordered track pairs binned over [-1, 1].

    Returns ``(pos_hist, neg_hist, edges)``; pos counts same-label pairs.
    """
    reps = np.asarray(track_reps, dtype=np.float64)
    if len(labels) != len(reps):
        raise EvaluationError("one label per track required")
    if any(lab is None for lab in labels):
        raise EvaluationError("similarity histogram needs labelled tracks")
    if len(reps) < 2:
        raise EvaluationError("need at least 2 tracks")
    if num_bins < 1:
        raise EvaluationError("num_bins must be >= 1")
    codes, _ = _codes(labels)
    iu, ju = np.triu_indices(len(reps), k=1)
    sims = np.clip(np.einsum("ij,ij->i", reps[iu], reps[ju]), -1.0, 1.0)
    same = codes[iu] == codes[ju]
    edges = np.linspace(-1.0, 1.0, num_bins + 1)
    pos, _ = np.histogram(sims[same], bins=edges)
    neg, _ = np.histogram(sims[~same], bins=edges)
    return pos, neg, edges


def write_histogram_csv(pos: np.ndarray, neg: np.ndarray, edges: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "pos_count", "neg_count"])
        for lo, hi, p, q in zip(edges[:-1], edges[1:], pos, neg):
            w.writerow([repr(float(lo)), repr(float(hi)), int(p), int(q)])


def read_histogram_csv(path: str | Path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = np.array([float(r["bin_left"]) for r in rows] + [float(rows[-1]["bin_right"])])
    pos = np.array([int(r["pos_count"]) for r in rows])
    neg = np.array([int(r["neg_count"]) for r in rows])
    return pos, neg, edges


def write_report_json(report: MetricReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2))


def read_report_json(path: str | Path) -> MetricReport:
    return MetricReport.from_json(json.loads(Path(path).read_text()))

"""Training-pair mining: track supervision, ranked-list self-supervision, pseudo-RF.

Pair labels follow the contrastive-loss convention: ``y = 0`` for pairs that
should end up in the same cluster and ``y = 1`` otherwise.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np

from .clustering import pairwise_sq_distances
from .errors import ConfigurationError, MiningError
from .features import CooccurrenceMap, Dataset, build_cooccurrence, track_representations

logger = logging.getLogger(__name__)

TSIAM = "tsiam"
SSIAM = "ssiam"
PSEUDO_RF = "pseudo_rf"

SPACE_EMBEDDING = "embedding"
SPACE_BASE = "base"

__all__ = [
    "TSIAM", "SSIAM", "PSEUDO_RF", "MiningConfig", "Pair", "PairBatch", "build_cooccurrence",
    "euclidean_distances", "ranked_index_matrix", "ssiam_select_pairs", "mine_pseudo_rf_pairs",
    "mine_ssiam_epoch", "mine_pseudo_rf_epoch", "mine_tsiam_pairs", "singleton_negative_pool",
    "base_track_reps", "write_pairs_csv", "read_pairs_csv",
]


@dataclass(frozen=True)
class MiningConfig:
    B: int = 1000
    K: int = 64
    F: int = 25
    pos_per_frame: int = 2
    neg_per_frame: int = 4
    seed: int = 0
    # subsets drawn per epoch for SSiam / pseudo-RF; None -> ceil(frames / B)
    iterations_per_epoch: int | None = None
    ssiam_space: str = SPACE_EMBEDDING

    def __post_init__(self):
        if self.B < 2:
            raise ConfigurationError("B must be >= 2")
        if not 1 <= self.K <= self.B:
            raise ConfigurationError(f"K must satisfy 1 <= K <= B, got K={self.K}, B={self.B}")
        if self.F < 1:
            raise ConfigurationError("F must be >= 1")
        if self.pos_per_frame < 0 or self.neg_per_frame < 0:
            raise ConfigurationError("pairs per frame must be non-negative")
        if self.iterations_per_epoch is not None and self.iterations_per_epoch < 1:
            raise ConfigurationError("iterations_per_epoch must be >= 1")
        if self.ssiam_space not in (SPACE_EMBEDDING, SPACE_BASE):
            raise ConfigurationError(f"unknown ssiam_space {self.ssiam_space!r}")


class Pair(NamedTuple):
    anchor_frame_id: int
    partner_frame_id: int
    y: int
    distance: float


@dataclass
class PairBatch:
    """Column-wise batch of mined pairs."""

    anchors: np.ndarray
    partners: np.ndarray
    y: np.ndarray
    distance: np.ndarray
    source: str

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[Pair]:
        for a, p, y, d in zip(self.anchors, self.partners, self.y, self.distance):
            yield Pair(int(a), int(p), int(y), float(d))

    @property
    def pairs(self) -> list[Pair]:
        return list(self)

    @property
    def num_positive(self) -> int:
        return int(np.sum(self.y == 0))

    @property
    def num_negative(self) -> int:
        return int(np.sum(self.y == 1))

    @classmethod
    def concat(cls, batches: list[PairBatch], source: str) -> PairBatch:
        if not batches:
            return cls(*(np.zeros(0, dt) for dt in (np.int64, np.int64, np.int64, np.float64)), source)
        return cls(
            np.concatenate([b.anchors for b in batches]),
            np.concatenate([b.partners for b in batches]),
            np.concatenate([b.y for b in batches]),
            np.concatenate([b.distance for b in batches]),
            source,
        )


# ---------------------------------------------------------------------------
# Ranked lists


def euclidean_distances(vectors: np.ndarray) -> np.ndarray:
    """All-pairs Euclidean distances from explicit differences.

    Duplicated points come out at exactly 0, which the tie-break rules rely on.
    """
    return np.sqrt(pairwise_sq_distances(vectors))


def _ranked(dist: np.ndarray) -> np.ndarray:
    keyed = dist.copy()
    # the query itself always comes first, even when duplicates sit at distance 0
    np.fill_diagonal(keyed, -1.0)
    return np.argsort(keyed, axis=1, kind="stable")


def ranked_index_matrix(subset: np.ndarray) -> np.ndarray:
    """Row ``b`` lists subset indices from closest to farthest from item ``b``.

    Column 0 is ``b`` itself; equal distances keep ascending index order.
    """
    X = np.asarray(subset, dtype=np.float64)
    if X.shape[0] < 2:
        raise MiningError("a ranked list needs at least 2 vectors")
    return _ranked(euclidean_distances(X))


def _exact_sq(X: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    diff = X[rows] - X[cols]
    return np.einsum("ij,ij->i", diff, diff)


def _first_per_row(rows: np.ndarray, order: np.ndarray) -> np.ndarray:
    sorted_rows = rows[order]
    keep = np.ones(len(order), dtype=bool)
    keep[1:] = sorted_rows[1:] != sorted_rows[:-1]
    return order[keep]


def _neighbour_sets(X: np.ndarray):
    """Nearest (ranked column 1) and farthest (last column) neighbour of every query.

    Gram-matrix distances only screen candidates: every entry within the
    rounding-error bound of a row's extreme is recomputed from explicit
    differences, and the tie rules are applied to those exact values. The
    result equals a full explicit-difference ranking.
    """
    B, dim = X.shape
    sq = np.einsum("ij,ij->i", X, X)
    approx = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    tol = 8.0 * (dim + 2) * np.finfo(np.float64).eps * (sq[:, None] + sq[None, :]) + np.finfo(np.float64).tiny
    lo, hi = approx - tol, approx + tol
    np.fill_diagonal(lo, np.inf)
    np.fill_diagonal(hi, -np.inf)
    near_mask = lo <= np.where(np.eye(B, dtype=bool), np.inf, hi).min(axis=1, keepdims=True)
    far_mask = hi >= np.where(np.eye(B, dtype=bool), -np.inf, lo).max(axis=1, keepdims=True)

    b = np.arange(B)
    r, c = np.nonzero(near_mask)
    e = _exact_sq(X, r, c)
    pick = _first_per_row(r, np.lexsort((c, e, r)))
    nearest, d_near = c[pick], np.sqrt(e[pick])

    r, c = np.nonzero(far_mask)
    e = _exact_sq(X, r, c)
    # last ranked column: largest distance, and the largest index among ties
    pick = _first_per_row(r, np.lexsort((-c, -e, r)))
    farthest, d_far = c[pick], np.sqrt(e[pick])
    return b, nearest, d_near, farthest, d_far


def _ids(frame_ids, n):
    return np.arange(n, dtype=np.int64) if frame_ids is None else np.asarray(frame_ids, dtype=np.int64)


def ssiam_select_pairs(subset: np.ndarray, config: MiningConfig, frame_ids=None) -> PairBatch:
    """Hard pairs from a subset: the K farthest nearest-neighbour pairs and the
    K closest farthest-neighbour pairs, ties broken by ascending query index."""
    X = np.asarray(subset, dtype=np.float64)
    B = X.shape[0]
    if B < 2:
        raise MiningError("SSiam selection needs at least 2 frames")
    if config.K > B:
        raise ConfigurationError(f"K={config.K} exceeds subset size {B}")
    ids = _ids(frame_ids, B)
    b, near, d_near, far, d_far = _neighbour_sets(X)
    pos = np.lexsort((b, -d_near))[: config.K]
    neg = np.lexsort((b, d_far))[: config.K]
    K = config.K
    return PairBatch(
        anchors=np.concatenate([ids[b[pos]], ids[b[neg]]]),
        partners=np.concatenate([ids[near[pos]], ids[far[neg]]]),
        y=np.concatenate([np.zeros(K, np.int64), np.ones(K, np.int64)]),
        distance=np.concatenate([d_near[pos], d_far[neg]]),
        source=SSIAM,
    )


def mine_pseudo_rf_pairs(subset: np.ndarray, config: MiningConfig | None = None, frame_ids=None) -> PairBatch:
    """Per-query nearest neighbour as positive and farthest as negative, no batch selection."""
    X = np.asarray(subset, dtype=np.float64)
    B = X.shape[0]
    if B < 2:
        raise MiningError("pseudo-RF needs at least 2 frames")
    ids = _ids(frame_ids, B)
    b, near, d_near, far, d_far = _neighbour_sets(X)
    return PairBatch(
        anchors=np.concatenate([ids[b], ids[b]]),
        partners=np.concatenate([ids[near], ids[far]]),
        y=np.concatenate([np.zeros(B, np.int64), np.ones(B, np.int64)]),
        distance=np.concatenate([d_near, d_far]),
        source=PSEUDO_RF,
    )


# ---------------------------------------------------------------------------
# Subset streams


EmbeddingProvider = Callable[[np.ndarray], np.ndarray]


def _subset_plan(dataset: Dataset, config: MiningConfig) -> tuple[int, int]:
    n = dataset.num_frames
    if n < 2:
        raise MiningError("need at least 2 frames to mine pairs")
    B = config.B
    if n < B:
        logger.warning("subset size B=%d exceeds %d available frames; clamping", B, n)
        B = n
    iters = config.iterations_per_epoch or max(1, math.ceil(n / B))
    return B, iters


def _subset_stream(dataset, provider, config, rng, select):
    B, iters = _subset_plan(dataset, config)
    K = min(config.K, B)
    if K != config.K:
        logger.warning("K=%d exceeds clamped B=%d; using K=%d", config.K, B, K)
    sub_cfg = MiningConfig(B=max(B, 2), K=K, F=config.F, seed=config.seed)
    for _ in range(iters):
        rows = np.sort(rng.choice(dataset.num_frames, size=B, replace=False))
        x = dataset.vectors[rows]
        if provider is not None and config.ssiam_space == SPACE_EMBEDDING:
            x = provider(x)
        yield select(x, sub_cfg, dataset.frame_ids[rows])


def mine_ssiam_epoch(dataset: Dataset, embedding_provider: EmbeddingProvider | None,
                     config: MiningConfig, rng: np.random.Generator) -> Iterator[PairBatch]:
    """One epoch of SSiam batches, each mined from a fresh uniform subset of B frames.

    ``embedding_provider`` maps raw frame vectors to the space ranked lists
    are computed in; it is called lazily so a model updated between batches
    is seen by the next one. ``None`` (or ``ssiam_space="base"``) ranks on
    the base features.
    """
    return _subset_stream(dataset, embedding_provider, config, rng, ssiam_select_pairs)


def mine_pseudo_rf_epoch(dataset: Dataset, embedding_provider: EmbeddingProvider | None,
                         config: MiningConfig, rng: np.random.Generator) -> Iterator[PairBatch]:
    return _subset_stream(dataset, embedding_provider, config, rng, mine_pseudo_rf_pairs)


# ---------------------------------------------------------------------------
# Track supervision


def base_track_reps(dataset: Dataset) -> np.ndarray:
    return track_representations(dataset)


def singleton_negative_pool(dataset: Dataset, cooc: CooccurrenceMap, base_reps: np.ndarray, F: int) -> dict[int, np.ndarray]:
    """For each singleton track: ids of the F tracks farthest from it (base features).

    Distance ties keep ascending track position.
    """
    n = dataset.num_tracks
    ids = np.array([t.track_id for t in dataset.tracks], dtype=np.int64)
    pools: dict[int, np.ndarray] = {}
    singles = [i for i, t in enumerate(dataset.tracks) if cooc.is_singleton(t.track_id)]
    if not singles:
        return pools
    if n < 2:
        raise MiningError("a single track admits no negative pairs")
    dist = euclidean_distances(base_reps)
    f = min(F, n - 1)
    for i in singles:
        d = dist[i].copy()
        d[i] = -np.inf
        order = np.lexsort((np.arange(n), -d))
        pools[int(ids[i])] = ids[order[:f]]
    return pools


def _sample(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(pool, size=k, replace=len(pool) < k)


def mine_tsiam_pairs(dataset: Dataset, cooc: CooccurrenceMap, base_track_reps: np.ndarray,
                     config: MiningConfig, rng: np.random.Generator,
                     negative_pool: dict[int, np.ndarray] | None = None) -> PairBatch:
    """Track-supervised pairs for every frame.

    Positives come from other frames of the same track (none for one-frame
    tracks). Negatives come from one randomly chosen co-occurring track, or,
    for singleton tracks, from the frames of the F farthest tracks.
    """
    if dataset.num_tracks < 2:
        raise MiningError("a single track admits no negative pairs")
    if negative_pool is None:
        negative_pool = singleton_negative_pool(dataset, cooc, base_track_reps, config.F)
    X = dataset.vectors
    track_rows = {t.track_id: dataset.track_rows(t) for t in dataset.tracks}
    pool_rows = {tid: np.concatenate([track_rows[int(o)] for o in others]) for tid, others in negative_pool.items()}

    anchors, partners, labels = [], [], []
    for t in dataset.tracks:
        rows = track_rows[t.track_id]
        partners_of = sorted(cooc[t.track_id])
        for pos_idx, r in enumerate(rows):
            if len(rows) > 1 and config.pos_per_frame:
                others = np.delete(rows, pos_idx)
                chosen = _sample(others, config.pos_per_frame, rng)
                anchors.extend([r] * len(chosen))
                partners.extend(chosen)
                labels.extend([0] * len(chosen))
            if not config.neg_per_frame:
                continue
            if partners_of:
                other = partners_of[int(rng.integers(len(partners_of)))]
                neg_pool = track_rows[other]
            else:
                neg_pool = pool_rows[t.track_id]
            chosen = _sample(neg_pool, config.neg_per_frame, rng)
            anchors.extend([r] * len(chosen))
            partners.extend(chosen)
            labels.extend([1] * len(chosen))

    a = np.asarray(anchors, dtype=np.int64)
    p = np.asarray(partners, dtype=np.int64)
    dist = np.linalg.norm(X[a] - X[p], axis=1) if len(a) else np.zeros(0)
    return PairBatch(dataset.frame_ids[a], dataset.frame_ids[p], np.asarray(labels, np.int64), dist, TSIAM)


# ---------------------------------------------------------------------------
# CSV export


def write_pairs_csv(batch: PairBatch, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["anchor_frame_id", "partner_frame_id", "y", "distance"])
        for pair in batch:
            w.writerow([pair.anchor_frame_id, pair.partner_frame_id, pair.y, repr(pair.distance)])


def read_pairs_csv(path: str | Path, source: str = "") -> PairBatch:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return PairBatch(
        np.array([int(r["anchor_frame_id"]) for r in rows], np.int64),
        np.array([int(r["partner_frame_id"]) for r in rows], np.int64),
        np.array([int(r["y"]) for r in rows], np.int64),
        np.array([float(r["distance"]) for r in rows], np.float64),
        source,
    )

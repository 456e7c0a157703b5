"""Ward-linkage agglomerative clustering and dendrogram cuts.

Cluster ids follow the usual linkage convention: inputs are ``0..n-1`` and
the cluster created by merge ``s`` gets id ``n + s``. Heights are Ward
linkage values on squared Euclidean distances, i.e. for clusters A and B
``2 |A| |B| / (|A| + |B|) * ||mean(A) - mean(B)||^2``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, FormatError

_CHUNK_ELEMS = 1 << 23
# Linkage values this close (relative) count as tied, so the lexicographic
# rule also holds for ties that rounding in the recurrence would split.
TIE_RTOL = 1e-9


class Merge(NamedTuple):
    cluster_a: int
    cluster_b: int
    height: float
    new_size: int


@dataclass(frozen=True)
class Dendrogram:
    n: int
    merges: tuple[Merge, ...]

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def to_json(self) -> dict:
        return {"n": self.n, "merges": [m._asdict() for m in self.merges]}

    @classmethod
    def from_json(cls, payload: dict) -> Dendrogram:
        try:
            merges = tuple(
                Merge(int(m["cluster_a"]), int(m["cluster_b"]), float(m["height"]), int(m["new_size"]))
                for m in payload["merges"]
            )
            return cls(int(payload["n"]), merges)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed dendrogram: {exc}") from None


@dataclass(frozen=True)
class ClusterAssignment:
    item_ids: tuple[int, ...]
    labels: np.ndarray
    k: int

    @property
    def mapping(self) -> dict[int, int]:
        return {i: int(c) for i, c in zip(self.item_ids, self.labels)}

    def groups(self) -> list[frozenset[int]]:
        return [frozenset(i for i, c in zip(self.item_ids, self.labels) if c == g) for g in range(self.k)]


def pairwise_sq_distances(vectors: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from explicit differences (no Gram shortcut)."""
    try:
        X = np.asarray(vectors, dtype=np.float64)
    except ValueError:
        raise DimensionMismatchError("vectors have unequal lengths") from None
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatchError("vectors have unequal lengths")
    n, dim = X.shape
    if n < 2:
        raise ConfigurationError("need at least 2 vectors")
    out = np.empty((n, n))
    step = max(1, _CHUNK_ELEMS // max(1, n * dim))
    for s in range(0, n, step):
        diff = X[s:s + step, None, :] - X[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    out = np.minimum(out, out.T)  # exact symmetry
    np.fill_diagonal(out, 0.0)
    return out


def hac_ward(vectors) -> Dendrogram:
    """Greedy Ward agglomeration via the Lance-Williams update.

    Each step merges the pair with the smallest linkage value; values equal
    within ``TIE_RTOL`` resolve to the lexicographically smallest
    (cluster_a, cluster_b) pair.
    """
    D = pairwise_sq_distances(vectors)
    n = D.shape[0]
    floor = TIE_RTOL * 1e-3 * float(D.max())
    np.fill_diagonal(D, np.inf)
    ids = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    rowarg = np.argmin(D, axis=1)
    rowmin = D[np.arange(n), rowarg]
    merges = []

    for step in range(n - 1):
        best = rowmin[active].min()
        limit = best + TIE_RTOL * max(best, floor)
        cand_rows = np.flatnonzero(active & (rowmin <= limit))
        choice = None
        for i in cand_rows:
            for j in np.flatnonzero(D[i] <= limit):
                pair = (min(ids[i], ids[j]), max(ids[i], ids[j]), i, j)
                if choice is None or pair[:2] < choice[:2]:
                    choice = pair
        a_id, b_id, i, j = choice
        i, j = min(i, j), max(i, j)
        ni, nj = size[i], size[j]
        dij = D[i, j]
        merges.append(Merge(int(a_id), int(b_id), float(dij), int(ni + nj)))

        nk = size.astype(np.float64)
        with np.errstate(invalid="ignore"):
            new = ((ni + nk) * D[i] + (nj + nk) * D[j] - nk * dij) / (ni + nj + nk)
        active[j] = False
        new[~active] = np.inf
        new[i] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[j, :] = np.inf
        D[:, j] = np.inf
        ids[i] = n + step
        size[i] = ni + nj
        rowmin[j] = np.inf

        stale = active & ((rowarg == i) | (rowarg == j))
        stale[i] = True
        keep = active & ~stale
        closer = keep & (new < rowmin)
        rowmin[closer] = new[closer]
        rowarg[closer] = i
        for r in np.flatnonzero(stale):
            rowarg[r] = np.argmin(D[r])
            rowmin[r] = D[r, rowarg[r]]

    return Dendrogram(n, tuple(merges))


def cut_dendrogram(dendrogram: Dendrogram, k: int, item_ids: Sequence[int] | None = None) -> ClusterAssignment:
    """Undo the last ``k - 1`` merges. Clusters are numbered by their smallest member."""
    n = dendrogram.n
    if not 1 <= k <= n:
        raise ConfigurationError(f"k must lie in [1, {n}], got {k}")
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for s, m in enumerate(dendrogram.merges[: n - k]):
        parent[find(m.cluster_a)] = n + s
        parent[find(m.cluster_b)] = n + s
    roots = [find(i) for i in range(n)]
    relabel: dict[int, int] = {}
    labels = np.array([relabel.setdefault(r, len(relabel)) for r in roots], dtype=np.int64)
    ids = tuple(range(n)) if item_ids is None else tuple(int(i) for i in item_ids)
    if len(ids) != n:
        raise DimensionMismatchError(f"{len(ids)} item ids for a dendrogram over {n} items")
    return ClusterAssignment(ids, labels, k)


def cluster_tracks(track_reps: np.ndarray, k: int, track_ids: Sequence[int]) -> tuple[Dendrogram, ClusterAssignment]:
    if k > len(track_ids):
        raise ConfigurationError(f"k={k} exceeds the number of tracks ({len(track_ids)})")
    dend = hac_ward(track_reps)
    return dend, cut_dendrogram(dend, k, track_ids)


def write_dendrogram_json(dendrogram: Dendrogram, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dendrogram.to_json(), indent=1))


def read_dendrogram_json(path: str | Path) -> Dendrogram:
    return Dendrogram.from_json(json.loads(Path(path).read_text()))


def write_assignment_csv(assignment: ClusterAssignment, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["track_id", "cluster"])
        for tid, c in zip(assignment.item_ids, assignment.labels):
            w.writerow([tid, int(c)])


def read_assignment_csv(path: str | Path) -> ClusterAssignment:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"track_id", "cluster"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns track_id,cluster")
        try:
            rows = [(int(r["track_id"]), int(r["cluster"])) for r in reader]
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no assignments")
    ids, labels = zip(*rows)
    return ClusterAssignment(tuple(ids), np.array(labels, dtype=np.int64), len(set(labels)))

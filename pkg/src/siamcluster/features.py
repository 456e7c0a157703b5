"""Frame/track data model, feature file I/O, track aggregation and synthetic data.

Binary feature file layout (little-endian)::

    b"TCF1" | u32 frame_count | u32 dim
    frame_count x ( u64 frame_id | u64 track_id | i64 timestamp | dim x f32 )

Track metadata is a JSON array of ``{"track_id", "frame_ids", "label"}``.
"""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateVectorError,
    DimensionMismatchError,
    EmptyTrackError,
    FormatError,
    GenerationError,
    NonFiniteValueError,
    ReferentialIntegrityError,
    UnknownTrackError,
)

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"TCF1"
NORM_EPS = 1e-12

_HEADER = struct.Struct("<4sII")
_ROW_DTYPE_CACHE: dict[int, np.dtype] = {}


def _row_dtype(dim: int) -> np.dtype:
    if dim not in _ROW_DTYPE_CACHE:
        _ROW_DTYPE_CACHE[dim] = np.dtype(
            [("frame_id", "<u8"), ("track_id", "<u8"), ("timestamp", "<i8"), ("vector", "<f4", (dim,))]
        )
    return _ROW_DTYPE_CACHE[dim]


@dataclass(frozen=True)
class FrameFeature:
    frame_id: int
    track_id: int
    timestamp: int
    vector: np.ndarray


@dataclass(frozen=True)
class Track:
    track_id: int
    frame_ids: tuple[int, ...]
    label: str | None
    # derived from frame timestamps when the track is attached to a Dataset
    time_span: tuple[int, int] | None = None

    @property
    def num_frames(self) -> int:
        return len(self.frame_ids)


class Dataset:
    """Validated, read-only collection of frames grouped into tracks.

    Frame data is held column-wise (``frame_ids``, ``frame_track_ids``,
    ``timestamps``, ``vectors``) in ascending frame-id order; ``frames``
    materialises :class:`FrameFeature` records on demand.
    """

    def __init__(
        self,
        frame_ids: np.ndarray,
        frame_track_ids: np.ndarray,
        timestamps: np.ndarray,
        vectors: np.ndarray,
        tracks: Sequence[Track],
        cast_size: int | None = None,
    ):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] == 0:
            raise DimensionMismatchError(f"vectors must be a 2-D array with D > 0, got shape {vectors.shape}")
        n = vectors.shape[0]
        frame_ids = np.asarray(frame_ids, dtype=np.int64)
        frame_track_ids = np.asarray(frame_track_ids, dtype=np.int64)
        timestamps = np.asarray(timestamps, dtype=np.int64)
        if not (frame_ids.shape == frame_track_ids.shape == timestamps.shape == (n,)):
            raise DimensionMismatchError("frame id, track id, timestamp and vector counts differ")
        if not np.all(np.isfinite(vectors)):
            bad = int(frame_ids[np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0]])
            raise NonFiniteValueError(f"frame {bad} has a non-finite feature value")
        if np.any(frame_ids < 0) or np.any(frame_track_ids < 0):
            raise FormatError("frame and track ids must be non-negative")
        if cast_size is not None and cast_size <= 0:
            raise FormatError("cast_size must be positive")

        order = np.argsort(frame_ids, kind="stable")
        frame_ids, frame_track_ids = frame_ids[order], frame_track_ids[order]
        timestamps, vectors = timestamps[order], vectors[order]
        if n > 1 and np.any(np.diff(frame_ids) == 0):
            dup = int(frame_ids[np.flatnonzero(np.diff(frame_ids) == 0)[0]])
            raise FormatError(f"duplicate frame_id {dup}")

        self.frame_ids = frame_ids
        self.frame_track_ids = frame_track_ids
        self.timestamps = timestamps
        self.vectors = vectors
        for arr in (self.frame_ids, self.frame_track_ids, self.timestamps, self.vectors):
            arr.setflags(write=False)
        self.cast_size = cast_size
        self._row_of = {int(f): i for i, f in enumerate(frame_ids)}
        self.tracks = tuple(self._validate_tracks(tracks))
        self._track_index = {t.track_id: i for i, t in enumerate(self.tracks)}

    def _validate_tracks(self, tracks: Iterable[Track]) -> list[Track]:
        seen: set[int] = set()
        listed = np.zeros(len(self.frame_ids), dtype=bool)
        out = []
        for t in tracks:
            if t.track_id in seen:
                raise FormatError(f"duplicate track_id {t.track_id}")
            seen.add(t.track_id)
            if not t.frame_ids:
                raise EmptyTrackError(f"track {t.track_id} has no frames")
            rows = []
            for fid in t.frame_ids:
                row = self._row_of.get(int(fid))
                if row is None:
                    raise ReferentialIntegrityError(f"track {t.track_id} lists unknown frame_id {fid}")
                if self.frame_track_ids[row] != t.track_id:
                    raise ReferentialIntegrityError(
                        f"frame {fid} is listed by track {t.track_id} but carries track_id {self.frame_track_ids[row]}"
                    )
                if listed[row]:
                    raise ReferentialIntegrityError(f"frame {fid} is listed more than once")
                listed[row] = True
                rows.append(row)
            ts = self.timestamps[rows]
            if np.any(np.diff(ts) < 0):
                raise FormatError(f"timestamps of track {t.track_id} are not nondecreasing")
            span = (int(ts[0]), int(ts[-1]))
            if t.time_span != span:
                t = Track(t.track_id, tuple(int(f) for f in t.frame_ids), t.label, span)
            out.append(t)
        unknown = sorted(set(int(x) for x in np.unique(self.frame_track_ids)) - seen)
        if unknown:
            raise UnknownTrackError(f"frames reference undefined track_id(s) {unknown[:10]}")
        if not listed.all():
            orphan = int(self.frame_ids[np.flatnonzero(~listed)[0]])
            raise ReferentialIntegrityError(f"frame {orphan} is not listed by its track")
        return out

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_frames(self) -> int:
        return self.vectors.shape[0]

    @property
    def num_tracks(self) -> int:
        return len(self.tracks)

    @property
    def frames(self) -> list[FrameFeature]:
        return [
            FrameFeature(int(f), int(t), int(s), v)
            for f, t, s, v in zip(self.frame_ids, self.frame_track_ids, self.timestamps, self.vectors)
        ]

    def track(self, track_id: int) -> Track:
        return self.tracks[self._track_index[track_id]]

    def rows_of(self, frame_ids: Iterable[int]) -> np.ndarray:
        """Row indices into ``vectors`` for the given frame ids."""
        return np.array([self._row_of[int(f)] for f in frame_ids], dtype=np.int64)

    def track_rows(self, track: Track) -> np.ndarray:
        return self.rows_of(track.frame_ids)

    @property
    def labels(self) -> list[str | None]:
        return [t.label for t in self.tracks]

    @property
    def has_labels(self) -> bool:
        return all(t.label is not None for t in self.tracks)

    def distinct_labels(self) -> list[str]:
        return sorted({t.label for t in self.tracks if t.label is not None})


# ---------------------------------------------------------------------------
# File I/O


def write_features(dataset: Dataset, path: str | Path) -> None:
    rows = np.zeros(dataset.num_frames, dtype=_row_dtype(dataset.dim))
    rows["frame_id"] = dataset.frame_ids
    rows["track_id"] = dataset.frame_track_ids
    rows["timestamp"] = dataset.timestamps
    rows["vector"] = dataset.vectors.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, dataset.num_frames, dataset.dim))
        fh.write(rows.tobytes())


def write_tracks(dataset: Dataset, path: str | Path) -> None:
    payload = [{"track_id": t.track_id, "frame_ids": list(t.frame_ids), "label": t.label} for t in dataset.tracks]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def write_dataset(dataset: Dataset, features_path: str | Path, tracks_path: str | Path) -> None:
    write_features(dataset, features_path)
    write_tracks(dataset, tracks_path)


def read_binary_features(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, count, dim = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if dim == 0:
        raise DimensionMismatchError(f"{path}: header declares dimension 0")
    dtype = _row_dtype(dim)
    body = len(data) - _HEADER.size
    if body != count * dtype.itemsize:
        raise DimensionMismatchError(
            f"{path}: {body} payload bytes do not match {count} frames of dimension {dim}"
        )
    rows = np.frombuffer(data, dtype=dtype, count=count, offset=_HEADER.size)
    return (
        rows["frame_id"].astype(np.int64),
        rows["track_id"].astype(np.int64),
        rows["timestamp"].astype(np.int64),
        rows["vector"].astype(np.float64),
    )


def read_csv_features(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["frame_id", "track_id", "timestamp"]:
            raise FormatError(f"{path}: expected header frame_id,track_id,timestamp,v0,...")
        dim = len(header) - 3
        if dim <= 0:
            raise DimensionMismatchError(f"{path}: header has no vector columns")
        fids, tids, stamps, vecs = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 3 != dim:
                raise DimensionMismatchError(f"{path}:{lineno}: expected {dim} values, got {len(row) - 3}")
            try:
                fids.append(int(row[0]))
                tids.append(int(row[1]))
                stamps.append(int(row[2]))
                vecs.append([float(v) for v in row[3:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    vectors = np.array(vecs, dtype=np.float64).reshape(len(vecs), dim)
    return np.array(fids, np.int64), np.array(tids, np.int64), np.array(stamps, np.int64), vectors


def read_tracks(path: str | Path) -> list[Track]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not isinstance(payload, list):
        raise FormatError(f"{path}: expected a JSON array of tracks")
    tracks = []
    for entry in payload:
        try:
            tid = int(entry["track_id"])
            fids = tuple(int(f) for f in entry["frame_ids"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed track entry {entry!r} ({exc})") from None
        label = entry.get("label")
        tracks.append(Track(tid, fids, None if label is None else str(label)))
    return tracks


def load_dataset(features_path: str | Path, tracks_path: str | Path, cast_size: int | None = None) -> Dataset:
    """Load and validate a feature file (binary TCF1 or CSV) plus track metadata."""
    features_path = Path(features_path)
    with open(features_path, "rb") as fh:
        head = fh.read(4)
    if head == FEATURE_MAGIC:
        cols = read_binary_features(features_path)
    elif features_path.suffix.lower() == ".csv":
        cols = read_csv_features(features_path)
    else:
        raise FormatError(f"{features_path}: neither a TCF1 binary nor a .csv feature file")
    return Dataset(*cols, tracks=read_tracks(tracks_path), cast_size=cast_size)


# ---------------------------------------------------------------------------
# Track representations


def l2_normalize(v: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm <= eps:
        raise DegenerateVectorError(f"cannot normalise vector with norm {norm:.3g}")
    return v / norm


def track_mean_base(track: Track, dataset: Dataset) -> np.ndarray:
    x = dataset.vectors[dataset.track_rows(track)]
    return l2_normalize(x.mean(axis=0))


def track_mean_embedded(track: Track, dataset: Dataset, embedder) -> np.ndarray:
    """Embed every frame with ``embedder`` (EmbedderParams), then mean-pool and normalise."""
    from .model import embed

    x = dataset.vectors[dataset.track_rows(track)]
    return l2_normalize(embed(embedder, x).mean(axis=0))


def track_representations(dataset: Dataset, embedder=None) -> np.ndarray:
    """Unit-norm representation of every track, in ``dataset.tracks`` order."""
    if embedder is None:
        return np.stack([track_mean_base(t, dataset) for t in dataset.tracks])
    return np.stack([track_mean_embedded(t, dataset, embedder) for t in dataset.tracks])


# ---------------------------------------------------------------------------
# Co-occurrence


@dataclass(frozen=True)
class CooccurrenceMap:
    neighbours: Mapping[int, frozenset[int]]

    def __getitem__(self, track_id: int) -> frozenset[int]:
        return self.neighbours[track_id]

    def __len__(self) -> int:
        return len(self.neighbours)

    def is_singleton(self, track_id: int) -> bool:
        return not self.neighbours[track_id]

    @property
    def singletons(self) -> list[int]:
        return sorted(t for t, s in self.neighbours.items() if not s)

    @property
    def cooccurring(self) -> list[int]:
        return sorted(t for t, s in self.neighbours.items() if s)


def build_cooccurrence(dataset: Dataset) -> CooccurrenceMap:
    """Tracks co-occur when their [first, last] timestamp intervals share a frame index."""
    ids = [t.track_id for t in dataset.tracks]
    if not ids:
        return CooccurrenceMap({})
    spans = np.array([t.time_span for t in dataset.tracks], dtype=np.int64)
    start, end = spans[:, 0], spans[:, 1]
    overlap = (start[:, None] <= end[None, :]) & (start[None, :] <= end[:, None])
    np.fill_diagonal(overlap, False)
    return CooccurrenceMap(
        {tid: frozenset(ids[j] for j in np.flatnonzero(overlap[i])) for i, tid in enumerate(ids)}
    )


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SynthConfig:
    num_identities: int = 5
    tracks_per_identity: int = 20
    frames_per_track: tuple[int, int] = (3, 10)
    dim: int = 64
    cluster_separation: float = 1.0
    noise_sigma: float = 0.1
    # per-track offset shared by all frames of a track
    track_sigma: float = 0.0
    # shared low-rank nuisance subspace (pose/illumination-like): each track
    # gets a coefficient ~ N(0, nuisance_sigma^2) and frames drift around it
    # with a per-frame ~ N(0, nuisance_drift^2) perturbation
    nuisance_dim: int = 0
    nuisance_sigma: float = 0.0
    nuisance_drift: float = 0.0
    cooccurrence_fraction: float = 0.4
    seed: int = 0
    max_attempts: int = 10_000


def _sample_centers(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < cfg.num_identities:
        attempts += 1
        if attempts > cfg.max_attempts:
            raise GenerationError(
                f"could not place {cfg.num_identities} unit centers {cfg.cluster_separation} apart in {cfg.dim}-D"
            )
        c = rng.standard_normal(cfg.dim)
        c /= np.linalg.norm(c)
        if all(np.linalg.norm(c - o) >= cfg.cluster_separation for o in centers):
            centers.append(c)
    return np.stack(centers)


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Gaussian identity clusters on the unit sphere, laid out on a timeline.

    Tracks occupy disjoint time slots except for a ``cooccurrence_fraction``
    of tracks, which are paired with a track of another identity and share
    its slot. Vectors are rounded to float32 so binary files round-trip.
    """
    lo, hi = cfg.frames_per_track
    if cfg.num_identities < 2:
        raise GenerationError("num_identities must be >= 2")
    if cfg.dim < 2:
        raise GenerationError("dim must be >= 2")
    if min(cfg.noise_sigma, cfg.track_sigma, cfg.nuisance_sigma, cfg.nuisance_drift) < 0:
        raise GenerationError("noise scales must be >= 0")
    if not 0 <= cfg.nuisance_dim <= cfg.dim:
        raise GenerationError("nuisance_dim must lie in [0, dim]")
    if not (1 <= lo <= hi) or cfg.tracks_per_identity < 1:
        raise GenerationError("need tracks_per_identity >= 1 and 1 <= min frames <= max frames")
    if not 0.0 <= cfg.cooccurrence_fraction <= 1.0:
        raise GenerationError("cooccurrence_fraction must lie in [0, 1]")

    rng = np.random.default_rng(cfg.seed)
    centers = _sample_centers(cfg, rng)
    if cfg.nuisance_dim:
        basis, _ = np.linalg.qr(rng.standard_normal((cfg.dim, cfg.nuisance_dim)))
    else:
        basis = np.zeros((cfg.dim, 0))
    n_tracks = cfg.num_identities * cfg.tracks_per_identity
    identity = np.repeat(np.arange(cfg.num_identities), cfg.tracks_per_identity)
    lengths = rng.integers(lo, hi + 1, size=n_tracks)

    # Pair tracks of different identities into shared slots.
    order = list(rng.permutation(n_tracks))
    n_pairs = int(round(cfg.cooccurrence_fraction * n_tracks / 2))
    slots: list[list[int]] = []
    pool = order.copy()
    while n_pairs > 0 and len(pool) >= 2:
        a = pool.pop(0)
        partner = next((j for j, b in enumerate(pool) if identity[b] != identity[a]), None)
        if partner is None:
            pool.insert(0, a)
            break
        slots.append([a, pool.pop(partner)])
        n_pairs -= 1
    slots.extend([t] for t in pool)
    slots = [slots[i] for i in rng.permutation(len(slots))]

    track_ids = np.empty(n_tracks, dtype=np.int64)
    starts = np.empty(n_tracks, dtype=np.int64)
    cursor = 0
    next_id = 0
    for slot in slots:
        for t in slot:
            track_ids[t] = next_id
            starts[t] = cursor
            next_id += 1
        cursor += int(max(lengths[t] for t in slot)) + int(rng.integers(1, 6))

    by_id = np.argsort(track_ids)
    frame_ids, frame_tracks, stamps, vecs, tracks = [], [], [], [], []
    fid = 0
    for t in by_id:
        m = int(lengths[t])
        offset = cfg.track_sigma * rng.standard_normal(cfg.dim)
        x = centers[identity[t]] + offset + cfg.noise_sigma * rng.standard_normal((m, cfg.dim))
        if cfg.nuisance_dim:
            coef = cfg.nuisance_sigma * rng.standard_normal(cfg.nuisance_dim)
            coef = coef + cfg.nuisance_drift * rng.standard_normal((m, cfg.nuisance_dim))
            x = x + coef @ basis.T
        fids = list(range(fid, fid + m))
        fid += m
        frame_ids.extend(fids)
        frame_tracks.extend([int(track_ids[t])] * m)
        stamps.extend(range(int(starts[t]), int(starts[t]) + m))
        vecs.append(x)
        tracks.append(
            Track(int(track_ids[t]), tuple(fids), f"id{identity[t]:02d}", (int(starts[t]), int(starts[t]) + m - 1))
        )
    vectors = np.concatenate(vecs).astype(np.float32).astype(np.float64)
    return Dataset(
        np.array(frame_ids), np.array(frame_tracks), np.array(stamps), vectors, tracks, cast_size=cfg.num_identities
    )

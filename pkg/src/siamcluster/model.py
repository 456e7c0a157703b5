"""Linear Siamese embedder trained with a contrastive loss.

A frame descriptor ``x`` (length D) is embedded as ``e = W1.T @ x + b1``
(length d1); the loss only sees the projection ``z = W2.T @ e`` (length d2).
Gradients are derived by hand and the parameters updated with plain SGD.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, FormatError, TrainingError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TCM1"
_CKPT_HEADER = struct.Struct("<4sIII")

DISTANCE_EUCLIDEAN = "euclidean"
DISTANCE_SQUARED = "squared"


@dataclass
class EmbedderParams:
    W1: np.ndarray  # (D, d1)
    b1: np.ndarray  # (d1,)
    W2: np.ndarray  # (d1, d2)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2 or self.b1.shape != (self.W1.shape[1],):
            raise DimensionMismatchError("expected W1 (D, d1), b1 (d1,), W2 (d1, d2)")
        if self.W2.shape[0] != self.W1.shape[1]:
            raise DimensionMismatchError(f"W2 has {self.W2.shape[0]} rows, W1 has {self.W1.shape[1]} columns")
        if not self.d2 < self.d1:
            raise ConfigurationError(f"projection width d2={self.d2} must be smaller than d1={self.d1}")
        if not all(np.isfinite(a).all() for a in (self.W1, self.b1, self.W2)):
            raise TrainingError("non-finite embedder parameter")

    @property
    def D(self) -> int:
        return self.W1.shape[0]

    @property
    def d1(self) -> int:
        return self.W1.shape[1]

    @property
    def d2(self) -> int:
        return self.W2.shape[1]

    def copy(self) -> EmbedderParams:
        return EmbedderParams(self.W1.copy(), self.b1.copy(), self.W2.copy())

    def equals(self, other: EmbedderParams) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.W1, self.b1, self.W2


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 1.0
    learning_rate: float = 1e-3
    max_epochs: int = 50
    plateau_tolerance: float = 1e-4
    plateau_patience: int = 3
    seed: int = 0
    hidden_dim: int = 256
    out_dim: int = 2
    batch_size: int = 128
    distance: str = DISTANCE_EUCLIDEAN
    # multiplies the +-1/sqrt(fan_in) bound of the frame embedding layer
    init_scale: float = 1.0

    def __post_init__(self):
        if not self.init_scale > 0:
            raise ConfigurationError("init_scale must be > 0")
        if not self.margin > 0:
            raise ConfigurationError("margin must be > 0")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.max_epochs < 1 or self.plateau_patience < 1 or self.batch_size < 1:
            raise ConfigurationError("max_epochs, plateau_patience and batch_size must be >= 1")
        if self.distance not in (DISTANCE_EUCLIDEAN, DISTANCE_SQUARED):
            raise ConfigurationError(f"unknown distance mode {self.distance!r}")
        if not 0 < self.out_dim < self.hidden_dim:
            raise ConfigurationError("need 0 < out_dim < hidden_dim")


@dataclass(frozen=True)
class LossReport:
    epoch: int
    mean_loss: float
    num_pairs: int


def init_params(D: int, d1: int = 256, d2: int = 2, rng: np.random.Generator | int | None = None,
                init_scale: float = 1.0) -> EmbedderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.

    ``init_scale`` shrinks or widens the range for W1 and b1 only; W2 keeps
    the plain bound so the two layers never start at the zero saddle.
    """
    rng = np.random.default_rng(rng)
    a1 = init_scale / np.sqrt(D)
    a2 = 1.0 / np.sqrt(d1)
    W1 = rng.uniform(-a1, a1, size=(D, d1))
    b1 = rng.uniform(-a1, a1, size=d1)
    W2 = rng.uniform(-a2, a2, size=(d1, d2))
    return EmbedderParams(W1, b1, W2)


def embed(params: EmbedderParams, x: np.ndarray) -> np.ndarray:
    """``W1.T x + b1`` for a single vector (D,) or a batch (n, D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.D:
        raise DimensionMismatchError(f"input has dimension {x.shape[-1]}, embedder expects {params.D}")
    return x @ params.W1 + params.b1


def _check_labels(y: np.ndarray) -> None:
    if not np.all((y == 0) | (y == 1)):
        raise ConfigurationError("pair labels must be 0 (same) or 1 (different)")


def _forward(params, x1, x2, y, margin, distance):
    """Shared forward pass for batches; returns every intermediate needed for backprop."""
    delta = np.atleast_2d(np.asarray(x1, np.float64) - np.asarray(x2, np.float64))
    if delta.shape[-1] != params.D:
        raise DimensionMismatchError(f"input has dimension {delta.shape[-1]}, embedder expects {params.D}")
    y = np.atleast_1d(np.asarray(y))
    _check_labels(y)
    # The bias cancels in the difference of the two embeddings.
    u = delta @ params.W1
    dz = u @ params.W2
    norm = np.sqrt(np.einsum("ij,ij->i", dz, dz))
    d_w = norm if distance == DISTANCE_EUCLIDEAN else norm * norm
    hinge = np.maximum(0.0, margin - d_w)
    loss = 0.5 * ((1 - y) * d_w**2 + y * hinge**2)
    return delta, u, dz, norm, d_w, hinge, y, loss


def batch_loss(params, x1, x2, y, margin: float = 1.0, distance: str = DISTANCE_EUCLIDEAN):
    """Per-pair losses and distances for a batch."""
    *_, d_w, _, _, loss = _forward(params, x1, x2, y, margin, distance)
    return loss, d_w


def pair_loss(params, x1, x2, y, margin: float = 1.0, distance: str = DISTANCE_EUCLIDEAN) -> tuple[float, float]:
    loss, d_w = batch_loss(params, x1, x2, y, margin, distance)
    return float(loss[0]), float(d_w[0])


def batch_gradients(params, x1, x2, y, margin: float = 1.0, distance: str = DISTANCE_EUCLIDEAN) -> Gradients:
    """Mean gradient of the contrastive loss over a batch of pairs.

    Non-smooth points take the zero subgradient: ``d_W == 0`` for the
    Euclidean distance and the hinge kink ``d_W == m`` for dissimilar pairs.
    """
    delta, u, dz, norm, d_w, hinge, y, _ = _forward(params, x1, x2, y, margin, distance)
    # dL/dd_W
    dl_dd = np.where(y == 0, d_w, -hinge)
    if distance == DISTANCE_EUCLIDEAN:
        # dd_W/d(dz) = dz / ||dz||
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norm > 0, dl_dd / norm, 0.0)
    else:
        scale = 2.0 * dl_dd
    g = scale[:, None] * dz
    n = delta.shape[0]
    gW2 = u.T @ g / n
    gW1 = delta.T @ (g @ params.W2.T) / n
    return Gradients(gW1, np.zeros_like(params.b1), gW2)


def pair_loss_gradients(params, x1, x2, y, margin: float = 1.0, distance: str = DISTANCE_EUCLIDEAN) -> Gradients:
    return batch_gradients(params, np.atleast_2d(x1), np.atleast_2d(x2), [y], margin, distance)


def sgd_step(params: EmbedderParams, grads: Gradients, learning_rate: float) -> EmbedderParams:
    return EmbedderParams(
        params.W1 - learning_rate * grads.W1,
        params.b1 - learning_rate * grads.b1,
        params.W2 - learning_rate * grads.W2,
    )


# ---------------------------------------------------------------------------
# Training


def _plateaued(history: list[LossReport], tol: float, patience: int) -> bool:
    if len(history) <= patience:
        return False
    recent = history[-(patience + 1):]
    for prev, cur in zip(recent, recent[1:]):
        base = max(abs(prev.mean_loss), np.finfo(float).tiny)
        if abs(cur.mean_loss - prev.mean_loss) / base >= tol:
            return False
    return True


def train(dataset, method: str, train_config: TrainConfig | None = None, mining_config=None):
    """Train an embedder on pairs mined from ``dataset``.

    ``method`` is one of ``"tsiam"``, ``"ssiam"`` or ``"pseudo_rf"``. Returns
    the final parameters and one :class:`LossReport` per epoch.
    """
    from . import mining

    cfg = train_config or TrainConfig()
    mcfg = mining_config or mining.MiningConfig(seed=cfg.seed)
    init_seq, mine_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(dataset.dim, cfg.hidden_dim, cfg.out_dim, np.random.default_rng(init_seq), cfg.init_scale)
    mine_rng = np.random.default_rng(mine_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    X = dataset.vectors

    state = {"params": params}

    def provider(vectors: np.ndarray) -> np.ndarray:
        return embed(state["params"], vectors)

    batches = _epoch_batches(method, dataset, mcfg, cfg, provider, mine_rng, shuffle_rng)
    history: list[LossReport] = []
    for epoch in range(cfg.max_epochs):
        total, count = 0.0, 0
        for rows_a, rows_b, y in batches():
            p = state["params"]
            xa, xb = X[rows_a], X[rows_b]
            loss, _ = batch_loss(p, xa, xb, y, cfg.margin, cfg.distance)
            grads = batch_gradients(p, xa, xb, y, cfg.margin, cfg.distance)
            state["params"] = sgd_step(p, grads, cfg.learning_rate)
            total += float(loss.sum())
            count += len(y)
        if count == 0:
            raise TrainingError(f"{method} mining produced no pairs")
        mean = total / count
        if not np.isfinite(mean):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        history.append(LossReport(epoch, mean, count))
        logger.debug("epoch %d: mean loss %.6g over %d pairs", epoch, mean, count)
        if _plateaued(history, cfg.plateau_tolerance, cfg.plateau_patience):
            logger.info("loss plateaued after %d epochs", epoch + 1)
            break
    return state["params"], history


def _epoch_batches(method, dataset, mcfg, cfg, provider, mine_rng, shuffle_rng):
    """Return a callable producing one epoch of (rows_a, rows_b, y) minibatches."""
    from . import mining

    if method == mining.SSIAM:
        def ssiam_epoch() -> Iterator:
            for batch in mining.mine_ssiam_epoch(dataset, provider, mcfg, mine_rng):
                yield dataset.rows_of(batch.anchors), dataset.rows_of(batch.partners), batch.y
        return ssiam_epoch

    if method == mining.TSIAM:
        cooc = mining.build_cooccurrence(dataset)
        reps = mining.base_track_reps(dataset)
        pool = mining.singleton_negative_pool(dataset, cooc, reps, mcfg.F)

        def tsiam_epoch() -> Iterator:
            batch = mining.mine_tsiam_pairs(dataset, cooc, reps, mcfg, mine_rng, negative_pool=pool)
            yield from _minibatches(dataset, batch, cfg.batch_size, shuffle_rng)
        return tsiam_epoch

    if method == mining.PSEUDO_RF:
        def prf_epoch() -> Iterator:
            for batch in mining.mine_pseudo_rf_epoch(dataset, provider, mcfg, mine_rng):
                yield from _minibatches(dataset, batch, cfg.batch_size, shuffle_rng)
        return prf_epoch

    raise ConfigurationError(f"unknown training method {method!r}")


def _minibatches(dataset, batch, size, rng):
    if len(batch) == 0:
        return
    a, b = dataset.rows_of(batch.anchors), dataset.rows_of(batch.partners)
    order = rng.permutation(len(batch))
    for s in range(0, len(order), size):
        idx = order[s:s + size]
        yield a[idx], b[idx], batch.y[idx]


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(params: EmbedderParams, path: str | Path, train_config: TrainConfig | None = None,
                    history: list[LossReport] | None = None, extra: dict | None = None) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, params.D, params.d1, params.d2))
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    sidecar = {
        "train_config": asdict(train_config) if train_config is not None else None,
        "loss_history": [asdict(h) for h in history or []],
    }
    if extra:
        sidecar.update(extra)
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2))


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_checkpoint(path: str | Path) -> EmbedderParams:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, D, d1, d2 = _CKPT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _CKPT_HEADER.size + 8 * (D * d1 + d1 + d1 * d2)
    if len(data) != expected:
        raise FormatError(f"{path}: size {len(data)} does not match dims ({D}, {d1}, {d2})")
    flat = np.frombuffer(data, dtype="<f8", offset=_CKPT_HEADER.size)
    W1 = flat[: D * d1].reshape(D, d1)
    b1 = flat[D * d1: D * d1 + d1]
    W2 = flat[D * d1 + d1:].reshape(d1, d2)
    return EmbedderParams(W1.copy(), b1.copy(), W2.copy())


def load_sidecar(path: str | Path) -> dict:
    return json.loads(sidecar_path(path).read_text())


def train_config_from_dict(d: dict | None, **overrides) -> TrainConfig:
    d = dict(d or {})
    d.update({k: v for k, v in overrides.items() if v is not None})
    known = TrainConfig.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigurationError(f"unknown train config keys {sorted(unknown)}")
    return TrainConfig(**d)

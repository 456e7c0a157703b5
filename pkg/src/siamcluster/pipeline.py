"""End-to-end run: base features -> (mine, train) -> embed + mean-pool -> Ward HAC -> metrics."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import clustering, metrics, mining, model
from .errors import ConfigurationError, EvaluationError
from .features import Dataset, load_dataset, track_representations

logger = logging.getLogger(__name__)

BASE = "base"
METHODS = (BASE, mining.TSIAM, mining.SSIAM, mining.PSEUDO_RF)


@dataclass(frozen=True)
class PipelineConfig:
    features: str
    tracks: str
    seed: int
    method: str = mining.SSIAM
    k: int | None = None
    eval_level: str = metrics.TRACK
    output_dir: str = "run_output"
    histogram_bins: int = 100
    mining: mining.MiningConfig = field(default_factory=mining.MiningConfig)
    train: model.TrainConfig = field(default_factory=model.TrainConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.eval_level not in (metrics.TRACK, metrics.FRAME):
            raise ConfigurationError(f"eval_level must be 'track' or 'frame', got {self.eval_level!r}")
        if self.k is not None and self.k < 2:
            raise ConfigurationError("k must be >= 2")
        if self.histogram_bins < 1:
            raise ConfigurationError("histogram_bins must be >= 1")

    def resolved(self) -> PipelineConfig:
        """Propagate the top-level seed into the mining and training configs."""
        return replace(self, mining=replace(self.mining, seed=self.seed), train=replace(self.train, seed=self.seed))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> PipelineConfig:
        payload = dict(payload)
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        try:
            m = payload.pop("mining", None) or {}
            t = payload.pop("train", None) or {}
            return cls(mining=mining.MiningConfig(**m), train=model.TrainConfig(**t), **payload)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


@dataclass
class RunReport:
    config: dict
    num_tracks: int
    num_frames: int
    k: int
    loss_history: list[dict]
    metrics: dict[str, dict[str, dict]]
    timings: dict[str, float]
    outputs: dict[str, str]

    def to_json(self) -> dict:
        return asdict(self)

    def without_timings(self) -> dict:
        d = self.to_json()
        d.pop("timings")
        return d

    def metric(self, which: str, level: str | None = None) -> metrics.MetricReport:
        level = level or self.config["eval_level"]
        return metrics.MetricReport.from_json(self.metrics[which][level])


def _score(dataset: Dataset, reps, k: int, out: Path, tag: str, bins: int, outputs: dict) -> dict:
    track_ids = [t.track_id for t in dataset.tracks]
    dend, assignment = clustering.cluster_tracks(reps, k, track_ids)
    clustering.write_assignment_csv(assignment, out / f"assignment_{tag}.csv")
    clustering.write_dendrogram_json(dend, out / f"dendrogram_{tag}.json")
    outputs[f"assignment_{tag}"] = f"assignment_{tag}.csv"
    outputs[f"dendrogram_{tag}"] = f"dendrogram_{tag}.json"
    pos, neg, edges = metrics.similarity_histogram(reps, dataset.labels, bins)
    metrics.write_histogram_csv(pos, neg, edges, out / f"histogram_{tag}.csv")
    outputs[f"histogram_{tag}"] = f"histogram_{tag}.csv"
    return {
        level: metrics.evaluate_assignment(assignment, dataset, level).to_json()
        for level in (metrics.TRACK, metrics.FRAME)
    }


def run_pipeline(config: PipelineConfig, dataset: Dataset | None = None) -> RunReport:
    """Run the whole pipeline and write its artefacts into ``config.output_dir``."""
    cfg = config.resolved()
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(cfg.features, cfg.tracks)
    timings["load"] = time.perf_counter() - t0

    if not dataset.has_labels:
        raise EvaluationError("every track needs a label for evaluation")
    k = cfg.k if cfg.k is not None else len(dataset.distinct_labels())
    if k < 2:
        raise ConfigurationError(f"k must be >= 2 (got {k}); pass k explicitly")
    if k > dataset.num_tracks:
        raise ConfigurationError(f"k={k} exceeds the number of tracks ({dataset.num_tracks})")

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, str] = {}
    results: dict[str, dict] = {}

    t0 = time.perf_counter()
    results["base"] = _score(dataset, track_representations(dataset), k, out, "base", cfg.histogram_bins, outputs)
    timings["base"] = time.perf_counter() - t0

    history: list[model.LossReport] = []
    if cfg.method != BASE:
        t0 = time.perf_counter()
        params, history = model.train(dataset, cfg.method, cfg.train, cfg.mining)
        timings["train"] = time.perf_counter() - t0
        model.save_checkpoint(params, out / "model.tcm", cfg.train, history, {"method": cfg.method})
        outputs["checkpoint"] = "model.tcm"
        t0 = time.perf_counter()
        reps = track_representations(dataset, params)
        results["refined"] = _score(dataset, reps, k, out, "refined", cfg.histogram_bins, outputs)
        timings["refined"] = time.perf_counter() - t0

    report = RunReport(
        config=cfg.to_json(),
        num_tracks=dataset.num_tracks,
        num_frames=dataset.num_frames,
        k=k,
        loss_history=[asdict(h) for h in history],
        metrics=results,
        timings=timings,
        outputs=outputs,
    )
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2))
    for tag, res in results.items():
        m = res[cfg.eval_level]
        logger.info("%s %s-level ACC %.4f  BCubed P %.4f R %.4f F %.4f",
                    tag, cfg.eval_level, m["acc"], m["bcubed_p"], m["bcubed_r"], m["bcubed_f"])
    return report


def read_report(path: str | Path) -> RunReport:
    return RunReport(**json.loads(Path(path).read_text()))

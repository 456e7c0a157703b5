"""Command-line entry point: ``siamcluster <subcommand> ...``.

Failures exit non-zero and print one JSON line to stderr of the form
``{"error": <category>, "message": <text>}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import clustering, metrics, mining, model, pipeline
from .errors import ConfigurationError, DataError, SiamClusterError
from .features import SynthConfig, load_dataset, read_tracks, synth_generate, track_representations, write_dataset

logger = logging.getLogger("siamcluster")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_FAILURE = 4


class UsageError(SiamClusterError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _cluster_count(text: str) -> int:
    value = _positive_int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("k must be >= 2")
    return value


# ---------------------------------------------------------------------------
# Shared option groups

_TRAIN_FLAGS = {
    "margin": float, "learning_rate": float, "max_epochs": int, "plateau_tolerance": float,
    "plateau_patience": int, "hidden_dim": int, "out_dim": int, "batch_size": int,
    "distance": str, "init_scale": float,
}
_MINING_FLAGS = {
    "B": ("--subset-size", int), "K": ("--pairs-per-label", int), "F": ("--farthest-tracks", int),
    "pos_per_frame": ("--pos-per-frame", int), "neg_per_frame": ("--neg-per-frame", int),
    "iterations_per_epoch": ("--iterations-per-epoch", int), "ssiam_space": ("--ssiam-space", str),
}


def _add_data_args(p, features=True):
    if features:
        p.add_argument("--features", required=True, help="TCF1 binary or CSV feature file")
    p.add_argument("--tracks", required=True, help="track metadata JSON")


def _add_train_args(p):
    g = p.add_argument_group("training")
    for name, typ in _TRAIN_FLAGS.items():
        kw = {"choices": [model.DISTANCE_EUCLIDEAN, model.DISTANCE_SQUARED]} if name == "distance" else {}
        g.add_argument("--" + name.replace("_", "-"), dest=f"train_{name}", type=typ, default=None, **kw)


def _add_mining_args(p):
    g = p.add_argument_group("mining")
    for name, (flag, typ) in _MINING_FLAGS.items():
        kw = {"choices": [mining.SPACE_EMBEDDING, mining.SPACE_BASE]} if name == "ssiam_space" else {}
        g.add_argument(flag, dest=f"mining_{name}", type=typ, default=None, **kw)


def _collect(args, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in vars(args).items() if k.startswith(prefix) and v is not None}


def _configs(args, base_train: dict | None = None, base_mining: dict | None = None):
    t = dict(base_train or {})
    t.update(_collect(args, "train_"))
    m = dict(base_mining or {})
    m.update(_collect(args, "mining_"))
    seed = args.seed
    t["seed"] = seed
    m["seed"] = seed
    try:
        return model.TrainConfig(**t), mining.MiningConfig(**m)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def _method(text: str) -> str:
    return text.replace("-", "_").lower()


def _embedder(args):
    return model.load_checkpoint(args.checkpoint) if getattr(args, "checkpoint", None) else None


def _write_json(payload, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_identities=args.num_identities, tracks_per_identity=args.tracks_per_identity,
        frames_per_track=(args.min_frames, args.max_frames), dim=args.dim,
        cluster_separation=args.cluster_separation, noise_sigma=args.noise_sigma,
        track_sigma=args.track_sigma, nuisance_dim=args.nuisance_dim, nuisance_sigma=args.nuisance_sigma,
        nuisance_drift=args.nuisance_drift, cooccurrence_fraction=args.cooccurrence_fraction, seed=args.seed,
    )
    ds = synth_generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out / "features.tcf", out / "tracks.json")
    logger.info("wrote %d frames / %d tracks to %s", ds.num_frames, ds.num_tracks, out)
    return 0


def cmd_mine_pairs(args) -> int:
    ds = load_dataset(args.features, args.tracks)
    tcfg, mcfg = _configs(args)
    rng = np.random.default_rng(args.seed)
    method = _method(args.method)
    if method == mining.TSIAM:
        from .features import build_cooccurrence

        batch = mining.mine_tsiam_pairs(ds, build_cooccurrence(ds), mining.base_track_reps(ds), mcfg, rng)
    else:
        emb = _embedder(args)
        provider = (lambda x: model.embed(emb, x)) if emb is not None else None
        stream = mining.mine_ssiam_epoch if method == mining.SSIAM else mining.mine_pseudo_rf_epoch
        batch = mining.PairBatch.concat(list(stream(ds, provider, mcfg, rng)), method)
    mining.write_pairs_csv(batch, args.out)
    logger.info("wrote %d pairs (%d positive, %d negative)", len(batch), batch.num_positive, batch.num_negative)
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.features, args.tracks)
    tcfg, mcfg = _configs(args)
    params, history = model.train(ds, _method(args.method), tcfg, mcfg)
    model.save_checkpoint(params, args.out, tcfg, history, {"method": _method(args.method)})
    logger.info("trained %d epochs, final loss %.6g", len(history), history[-1].mean_loss)
    return 0


def _default_k(ds, k):
    if k is not None:
        return k
    labels = ds.distinct_labels()
    if len(labels) < 2:
        raise UsageError("k cannot be inferred from labels; pass --k")
    return len(labels)


def cmd_cluster(args) -> int:
    ds = load_dataset(args.features, args.tracks)
    reps = track_representations(ds, _embedder(args))
    k = _default_k(ds, args.k)
    dend, assignment = clustering.cluster_tracks(reps, k, [t.track_id for t in ds.tracks])
    clustering.write_assignment_csv(assignment, args.out)
    if args.dendrogram:
        clustering.write_dendrogram_json(dend, args.dendrogram)
    return 0


def cmd_evaluate(args) -> int:
    tracks = read_tracks(args.tracks)
    assignment = clustering.read_assignment_csv(args.assignments)
    report = metrics.evaluate_assignment(assignment, tracks, args.level)
    _write_json(report.to_json(), args.out)
    return 0


def cmd_histogram(args) -> int:
    ds = load_dataset(args.features, args.tracks)
    reps = track_representations(ds, _embedder(args))
    pos, neg, edges = metrics.similarity_histogram(reps, ds.labels, args.bins)
    metrics.write_histogram_csv(pos, neg, edges, args.out)
    return 0


def cmd_run(args) -> int:
    payload = {}
    if args.config:
        try:
            payload = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    for key in ("features", "tracks", "method", "k", "eval_level", "output_dir", "seed", "histogram_bins"):
        value = getattr(args, key)
        if value is not None:
            payload[key] = _method(value) if key == "method" else value
    if payload.get("seed") is None:
        raise UsageError("--seed is required (on the command line or in the config file)")
    for key in ("features", "tracks"):
        if not payload.get(key):
            raise UsageError(f"--{key} is required (on the command line or in the config file)")
    payload["train"] = {**payload.get("train", {}), **_collect(args, "train_")}
    payload["mining"] = {**payload.get("mining", {}), **_collect(args, "mining_")}
    cfg = pipeline.PipelineConfig.from_json(payload)
    report = pipeline.run_pipeline(cfg)
    summary = {tag: res[cfg.eval_level] for tag, res in report.metrics.items()}
    print(json.dumps({"output_dir": cfg.output_dir, "metrics": summary}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    parser = _Parser(prog="siamcluster", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--num-identities", type=int, default=5)
    p.add_argument("--tracks-per-identity", type=int, default=20)
    p.add_argument("--min-frames", type=int, default=3)
    p.add_argument("--max-frames", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--cluster-separation", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--track-sigma", type=float, default=0.0)
    p.add_argument("--nuisance-dim", type=int, default=0)
    p.add_argument("--nuisance-sigma", type=float, default=0.0)
    p.add_argument("--nuisance-drift", type=float, default=0.0)
    p.add_argument("--cooccurrence-fraction", type=float, default=0.4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine-pairs", help="export one epoch of mined pairs as CSV")
    _add_data_args(p)
    p.add_argument("--method", required=True, type=_method, choices=[mining.TSIAM, mining.SSIAM, mining.PSEUDO_RF])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--checkpoint", help="rank SSiam/pseudo-RF subsets in this embedder's space")
    p.add_argument("--out", required=True)
    _add_mining_args(p)
    p.set_defaults(func=cmd_mine_pairs)

    p = sub.add_parser("train", help="train an embedder and write a TCM1 checkpoint")
    _add_data_args(p)
    p.add_argument("--method", required=True, type=_method, choices=[mining.TSIAM, mining.SSIAM, mining.PSEUDO_RF])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_train_args(p)
    _add_mining_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="Ward HAC on track representations")
    _add_data_args(p)
    p.add_argument("--checkpoint", help="embed frames with this model before pooling")
    p.add_argument("--k", type=_cluster_count)
    p.add_argument("--out", required=True, help="assignment CSV (track_id,cluster)")
    p.add_argument("--dendrogram", help="optional dendrogram JSON")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("evaluate", help="ACC and BCubed for an assignment CSV")
    _add_data_args(p, features=False)
    p.add_argument("--assignments", required=True)
    p.add_argument("--level", choices=[metrics.TRACK, metrics.FRAME], default=metrics.TRACK)
    p.add_argument("--out", help="write the MetricReport JSON here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("histogram", help="same/different-identity cosine similarity histograms")
    _add_data_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--bins", type=_positive_int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--config", help="PipelineConfig JSON; flags override its entries")
    p.add_argument("--features")
    p.add_argument("--tracks")
    p.add_argument("--method", type=_method, choices=list(pipeline.METHODS))
    p.add_argument("--k", type=_cluster_count)
    p.add_argument("--eval-level", choices=[metrics.TRACK, metrics.FRAME])
    p.add_argument("--output-dir")
    p.add_argument("--histogram-bins", type=_positive_int)
    p.add_argument("--seed", type=int)
    _add_train_args(p)
    _add_mining_args(p)
    p.set_defaults(func=cmd_run)
    return parser


def _exit_code(exc: SiamClusterError) -> int:
    if isinstance(exc, (UsageError, ConfigurationError)):
        return EXIT_USAGE
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_FAILURE


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return args.func(args)
    except SiamClusterError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return _exit_code(exc)
    except FileNotFoundError as exc:
        print(json.dumps({"error": "file_not_found", "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Face-track clustering with Siamese-refined embeddings and Ward HAC."""
from .clustering import ClusterAssignment, Dendrogram, Merge, cluster_tracks, cut_dendrogram, hac_ward
from .errors import (
    ConfigurationError,
    DataError,
    EvaluationError,
    MiningError,
    SiamClusterError,
    TrainingError,
)
from .features import (
    CooccurrenceMap,
    Dataset,
    SynthConfig,
    Track,
    build_cooccurrence,
    load_dataset,
    synth_generate,
    track_representations,
    write_dataset,
)
from .metrics import LabeledPartition, MetricReport, bcubed, clustering_accuracy, evaluate, evaluate_assignment
from .mining import MiningConfig, PairBatch, mine_pseudo_rf_pairs, mine_tsiam_pairs, ssiam_select_pairs
from .model import EmbedderParams, TrainConfig, embed, load_checkpoint, save_checkpoint, train
from .pipeline import PipelineConfig, RunReport, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment",
    "ConfigurationError",
    "CooccurrenceMap",
    "DataError",
    "Dataset",
    "Dendrogram",
    "EmbedderParams",
    "EvaluationError",
    "LabeledPartition",
    "Merge",
    "MetricReport",
    "MiningConfig",
    "MiningError",
    "PairBatch",
    "PipelineConfig",
    "RunReport",
    "SiamClusterError",
    "SynthConfig",
    "Track",
    "TrainConfig",
    "TrainingError",
    "bcubed",
    "build_cooccurrence",
    "cluster_tracks",
    "clustering_accuracy",
    "cut_dendrogram",
    "embed",
    "evaluate",
    "evaluate_assignment",
    "hac_ward",
    "load_checkpoint",
    "load_dataset",
    "mine_pseudo_rf_pairs",
    "mine_tsiam_pairs",
    "run_pipeline",
    "save_checkpoint",
    "ssiam_select_pairs",
    "synth_generate",
    "track_representations",
    "train",
    "write_dataset",
]

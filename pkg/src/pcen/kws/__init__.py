"""Toy keyword-spotting benchmark: synthetic data, classifier, training, ROC."""

from .benchmark import BenchmarkConfig, BenchmarkResult, mismatch_benchmark, multi_loudness_benchmark
from .data import KEYWORD, NON_KEYWORD, LabeledClip, augment_loudness, at_level, read_manifest, synth_dataset, write_dataset
from .model import CONTEXT_LEFT, CONTEXT_RIGHT, ToyModel, context_windows
from .roc import RocCurve
from .train import Frontend, TrainResult, clip_scores, evaluate_roc, train_joint

__all__ = [
    "BenchmarkConfig", "BenchmarkResult", "mismatch_benchmark", "multi_loudness_benchmark",
    "KEYWORD", "NON_KEYWORD", "LabeledClip", "augment_loudness", "at_level", "read_manifest",
    "synth_dataset", "write_dataset", "CONTEXT_LEFT", "CONTEXT_RIGHT", "ToyModel", "context_windows",
    "RocCurve", "Frontend", "TrainResult", "clip_scores", "evaluate_roc", "train_joint",
]

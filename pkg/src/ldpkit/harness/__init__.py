"""Experiment harness: data ingestion, synthetic populations, runners."""
from .data import Dataset, binarize_label, kfold_indices, load_dataset, onehot_transform, parse_dataset
from .experiment import ExperimentConfig, MetricsRecord, load_config, parse_config, run_experiment, write_metrics
from .synth import SynthSpec, synth_generate

__all__ = [
    "Dataset", "binarize_label", "kfold_indices", "load_dataset", "onehot_transform", "parse_dataset",
    "ExperimentConfig", "MetricsRecord", "load_config", "parse_config", "run_experiment", "write_metrics",
    "SynthSpec", "synth_generate",
]

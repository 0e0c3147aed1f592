"""Noise-aware gradient coreset selection for click-through-rate models."""
from .dataset import Dataset, FieldSchema, build_vocab, inject_noise, load_csv, partition_batches, synth_generate
from .model import AdamState, CTRClassifier, CTRNet, DropoutConfig, adam_step, logloss, train_epochs
from .pipeline import (CoresetArtifact, Metrics, NoiseAwareCoresetSelector, PipelineConfig, evaluate,
                       random_baseline, run_denoise, run_pipeline, run_select, train_final)
from .submod import (FacilityLocationSelector, GreedyConfig, SelectionResult, SimilarityKernel,
                     batched_stochastic_greedy, brute_force_opt, build_kernel, compute_weights,
                     facility_location_value, naive_greedy, stochastic_greedy)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CTRClassifier", "CTRNet", "CoresetArtifact", "Dataset", "DropoutConfig",
    "FacilityLocationSelector", "FieldSchema", "GreedyConfig", "Metrics", "NoiseAwareCoresetSelector",
    "PipelineConfig", "SelectionResult", "SimilarityKernel", "adam_step", "batched_stochastic_greedy",
    "brute_force_opt", "build_kernel", "build_vocab", "compute_weights", "evaluate", "facility_location_value",
    "inject_noise", "load_csv", "logloss", "naive_greedy", "partition_batches", "random_baseline", "run_denoise",
    "run_pipeline", "run_select", "stochastic_greedy", "synth_generate", "train_epochs", "train_final",
]

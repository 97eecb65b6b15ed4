"""Masked time-series autoencoder pretraining for physical-frailty classification from actigraphy."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoders import EncoderConfig, EncoderParams, extract_features
from .experiments import ablation_harness, cross_domain_run, evaluate_checkpoint, pretrain_checkpoint, train_head
from .ingest import Dataset, SynthConfig, load_dataset, save_dataset, synth_generate
from .metrics import MetricsReport, auprc, auroc, evaluate
from .pretrain import PretrainConfig, pretrain_run
from .sra import SRAConfig, SRAParams, sra_attention

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "Dataset", "EncoderConfig", "EncoderParams", "MetricsReport", "PretrainConfig", "SRAConfig",
    "SRAParams", "SynthConfig", "ablation_harness", "auprc", "auroc", "cross_domain_run", "evaluate",
    "evaluate_checkpoint", "extract_features", "load_checkpoint", "load_dataset", "pretrain_checkpoint",
    "pretrain_run", "save_checkpoint", "save_dataset", "sra_attention", "synth_generate", "train_head",
]

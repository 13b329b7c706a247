"""Two-stage incomplete multi-view clustering with a masked cross-view transformer autoencoder."""

from .data import MultiViewDataset, generate_mask, generate_paired_mask, load_dataset, synth_dataset
from .model import ModelConfig
from .training import TrainConfig, run_pipeline

__all__ = ["MultiViewDataset", "ModelConfig", "TrainConfig", "generate_mask", "generate_paired_mask",
           "load_dataset", "run_pipeline", "synth_dataset"]

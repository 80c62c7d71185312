"""Minimal numpy neural-network engine and the sinogram-to-image encoder-decoder."""
from .ced import CedModel, CedSpec, build_ced, ced_preset, ced_shapes
from .training import TrainConfig, infer, load_checkpoint, save_checkpoint, train

__all__ = [
    "CedModel", "CedSpec", "TrainConfig", "build_ced", "ced_preset", "ced_shapes",
    "infer", "load_checkpoint", "save_checkpoint", "train",
]

"""Conditional and masked conditional neural networks (CLNN / MCLNN) for
classifying multi-channel temporal signals such as spectrograms."""

from .kernels import BACKEND
from .masking import Mask, MaskSpec, apply_mask, build_mask, mask_stats
from .model import ModelConfig, Network, build_model, segment_size, shape_plan
from .numerics import Rng, TransferKind

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Mask",
    "MaskSpec",
    "ModelConfig",
    "Network",
    "Rng",
    "TransferKind",
    "apply_mask",
    "build_mask",
    "build_model",
    "mask_stats",
    "segment_size",
    "shape_plan",
]

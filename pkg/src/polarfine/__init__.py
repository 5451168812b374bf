"""Coarse-to-fine polar boundary instance segmentation at desk scale."""

from .codec import (BitMask, Polygon, PolarShape, decode, encode, mask_iou,
                    mass_center, radii_from_pole, rasterize)
from .config import ConfigInvalid, RunConfig, load_config, parse_config
from .losses import LossWeights, NonPositiveRadius, total_loss
from .network import Model, ModelConfig
from .synth import SceneConfig, SyntheticScene, generate_scene
from .train import Divergence, TrainOptions

__all__ = [
    "BitMask", "Polygon", "PolarShape", "decode", "encode", "mask_iou",
    "mass_center", "radii_from_pole", "rasterize",
    "ConfigInvalid", "RunConfig", "load_config", "parse_config",
    "LossWeights", "NonPositiveRadius", "total_loss",
    "Model", "ModelConfig",
    "SceneConfig", "SyntheticScene", "generate_scene",
    "Divergence", "TrainOptions",
]

__version__ = "0.1.0"

"""Glass surface detection from flash/no-flash image pairs."""
from .config import ModelConfig, load_config, toy_profile
from .core import DatasetSplit, GlassMask, ImagePair, Sample, load_image_pair
from .errors import FlashGlassError
from .metrics import compute_metrics
from .model import GlassNet, build_model
from .synth import SynthParams, generate_scene, write_synth_dataset
from .train import evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "FlashGlassError",
    "GlassMask",
    "GlassNet",
    "ImagePair",
    "ModelConfig",
    "Sample",
    "SynthParams",
    "build_model",
    "compute_metrics",
    "evaluate",
    "generate_scene",
    "load_config",
    "load_image_pair",
    "predict",
    "toy_profile",
    "train",
    "write_synth_dataset",
]

"""Global-structure-guided link extraction for form-like documents."""

__version__ = "0.1.0"

from .docmodel import Document, Entity, load_dataset, load_funsd, save_dataset
from .estimator import GoseLinkExtractor
from .evaluation import MetricsReport, evaluate, link_f1
from .geometry import BBox, pair_geometry, segments_cross
from .model import GoseParams, ModelConfig, forward, load_checkpoint, loss, predict, save_checkpoint
from .synthgen import GenConfig, generate
from .training import TrainConfig, train

__all__ = [
    "__version__",
    "BBox",
    "Document",
    "Entity",
    "GenConfig",
    "GoseLinkExtractor",
    "GoseParams",
    "MetricsReport",
    "ModelConfig",
    "TrainConfig",
    "evaluate",
    "forward",
    "generate",
    "link_f1",
    "load_checkpoint",
    "load_dataset",
    "load_funsd",
    "loss",
    "pair_geometry",
    "predict",
    "save_checkpoint",
    "save_dataset",
    "segments_cross",
    "train",
]

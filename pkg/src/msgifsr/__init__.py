"""Session-based recommendation over multi-granularity intent graphs."""
from .config import ModelConfig, ReadoutConfig, TrainConfig
from .corpus import DatasetSplit, Session, Vocabulary, augment, generate_synthetic, load_dataset, preprocess
from .graph import SessionGraph, build_mihsg
from .metrics import MetricReport
from .recommender import MSGIFSR
from .trainer import evaluate, load_checkpoint, save_checkpoint, train

__all__ = [
    "MSGIFSR", "DatasetSplit", "MetricReport", "ModelConfig", "ReadoutConfig", "Session", "SessionGraph",
    "TrainConfig", "Vocabulary", "augment", "build_mihsg", "evaluate", "generate_synthetic", "load_checkpoint",
    "load_dataset", "preprocess", "save_checkpoint", "train",
]
__version__ = "0.1.0"

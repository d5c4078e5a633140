"""Align skeleton-pose sequences with a frozen text embedding space."""

__version__ = "0.1.0"

from .dataset import AttributeVector, DatasetSplit, LabeledSample, PoseSequence  # noqa: E402
from .encoder import EncoderConfig, encode_batch, init_encoder  # noqa: E402
from .estimators import AttributeClassifier, MotionTextAligner  # noqa: E402
from .textbridge import EmbeddingProvider  # noqa: E402
from .trainer import TrainConfig, TrainingSet, train  # noqa: E402

__all__ = [
    "AttributeClassifier",
    "AttributeVector",
    "DatasetSplit",
    "EmbeddingProvider",
    "EncoderConfig",
    "LabeledSample",
    "MotionTextAligner",
    "PoseSequence",
    "TrainConfig",
    "TrainingSet",
    "encode_batch",
    "init_encoder",
    "train",
]

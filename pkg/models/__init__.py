"""Package-level exports for the domain models.

Import models from this package as `from models import Prediction, VideoRecord`.
"""

from .prediction import Prediction
from .video import AugmentSpec, ClipFeatureSequence, DatasetManifest, LabeledPair, ManifestRow, VideoRecord
from .expert import ExpertRegistry
from .feedback import ClipFeedback
from .report import EvalReport, PredictionRow, TrainingHistory

__all__ = [
    "Prediction",
    "AugmentSpec",
    "ClipFeatureSequence",
    "DatasetManifest",
    "LabeledPair",
    "ManifestRow",
    "VideoRecord",
    "ExpertRegistry",
    "ClipFeedback",
    "EvalReport",
    "PredictionRow",
    "TrainingHistory",
]

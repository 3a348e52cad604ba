"""Cough detection from audio: band-specific spectral features, noise-robust
feature selection, long-term AvgSD / BoAW representations and polynomial SVMs."""

__version__ = "0.1.0"

from .config import PipelineConfig
from .features import FeatureTable, ShortTermFeatures
from .pipeline import CoughDetector, cross_validate
from .representation import AvgSD, SupervisedBoAW
from .selection import NoiseRobustSelector, ReliefF
from .svm import PolySVC, VotingEnsemble

__all__ = [
    "AvgSD",
    "CoughDetector",
    "FeatureTable",
    "NoiseRobustSelector",
    "PipelineConfig",
    "PolySVC",
    "ReliefF",
    "ShortTermFeatures",
    "SupervisedBoAW",
    "VotingEnsemble",
    "__version__",
    "cross_validate",
]

"""Reference-free per-tissue Dice prediction for automatic head segmentations."""

__version__ = "0.1.0"

from .grid import (
    AffineTransform,
    DeformationField,
    GridShape,
    LabelMap,
    ScalarVolume,
    SCORED_TISSUES,
    TissueClass,
)
from .morphometry import DiceScores
from .feature_pipeline import FEATURE_NAMES, FeatureVector

__all__ = [
    "AffineTransform",
    "DeformationField",
    "DiceScores",
    "FEATURE_NAMES",
    "FeatureVector",
    "GridShape",
    "LabelMap",
    "ScalarVolume",
    "SCORED_TISSUES",
    "TissueClass",
    "__version__",
]

"""Per-tissue geometric and intensity features plus the Dice coefficient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .grid import (
    LabelMap,
    ScalarVolume,
    SCORED_TISSUES,
    TissueClass,
    head_mask,
    mask_of,
    require_same_grid,
)

#: Zero-variance regions report this capped signal-to-noise ratio.
SNR_CAP = 1e6

#: Full 3x3x3 neighbourhood: 26-connectivity for component counting.
_CONNECTIVITY_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class DiceScores:
    """Dice per scored tissue (CSF, Skin, GM, WM, Skull), each in [0, 1]."""

    scores: Mapping[TissueClass, float]

    def __post_init__(self):
        object.__setattr__(self, "scores", dict(self.scores))
        missing = [t.name for t in SCORED_TISSUES if t not in self.scores]
        if missing:
            raise ValidationError(f"DiceScores missing tissues {missing}")
        for t, v in self.scores.items():
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"Dice for {TissueClass(t).name} is {v}, outside [0, 1]")

    def as_array(self) -> np.ndarray:
        """Values in the frozen tissue order."""
        return np.array([self.scores[t] for t in SCORED_TISSUES], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "DiceScores":
        values = np.asarray(values, dtype=np.float64).reshape(len(SCORED_TISSUES))
        return cls(dict(zip(SCORED_TISSUES, (float(v) for v in values))))


def dice(a: LabelMap, b: LabelMap, t: TissueClass) -> float:
    """Dice overlap 2|A^B| / (|A|+|B|) of tissue ``t`` between two maps.

    Two empty sets agree perfectly and score 1.0.
    """
    require_same_grid(a, b, "label maps")
    t = TissueClass(t)
    if t == TissueClass.BACKGROUND:
        raise ValidationError("Dice is not defined for the Background label")
    ma = mask_of(a, t)
    mb = mask_of(b, t)
    na = int(np.count_nonzero(ma))
    nb = int(np.count_nonzero(mb))
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(ma & mb))
    return 2.0 * inter / (na + nb)


def tissue_volume(labels: LabelMap, t: TissueClass) -> float:
    """Physical volume in mm^3 of tissue ``t``; 0 when absent."""
    count = int(np.count_nonzero(mask_of(labels, t)))
    return count * labels.shape.voxel_volume_mm3


def connected_components(labels: LabelMap, t: TissueClass) -> int:
    """Number of 26-connected components of tissue ``t``."""
    mask = mask_of(labels, t).reshape(labels.shape.dims, order="F")
    if not mask.any():
        return 0
    _, count = ndimage.label(mask, structure=_CONNECTIVITY_26)
    return int(count)


def snr(image: ScalarVolume, labels: LabelMap, t: TissueClass) -> float:
    """Mean over population SD of image intensity within tissue ``t``.

    Constant nonempty regions return the cap 1e6; empty regions return 0.
    """
    require_same_grid(image, labels, "image and label map")
    region = image.data[mask_of(labels, t)]
    if region.size == 0:
        return 0.0
    mu = float(np.mean(region))
    sigma = float(np.std(region))
    if sigma == 0.0:
        return SNR_CAP
    return mu / sigma


def shortest_axis_length(labels: LabelMap) -> float:
    """Smallest bounding-box extent (mm) of the head mask.

    The head mask is the union of all labels except Background and Tumor;
    extent per axis is (max - min + 1) * spacing.
    """
    mask = head_mask(labels).reshape(labels.shape.dims, order="F")
    if not mask.any():
        raise ValidationError("head mask is empty, shortest axis length undefined")
    extents = []
    for axis, spacing in enumerate(labels.shape.spacing):
        other = tuple(ax for ax in range(3) if ax != axis)
        hit = np.nonzero(mask.any(axis=other))[0]
        extents.append((int(hit[-1]) - int(hit[0]) + 1) * spacing)
    return min(extents)

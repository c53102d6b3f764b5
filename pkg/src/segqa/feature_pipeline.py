"""Assemble the fixed 20-feature vector and the per-tissue Dice targets.

The schema order is frozen for CSV and model compatibility:

    0  inv_consistency_mm
    1  def_bias_mm
    2  def_dir_var_mm
    3  def_axis_var_mm
    4  shortest_axis_mm
    5+ per tissue in (CSF, Skin, GM, WM, Skull): snr, volume mm^3,
       connected-component count

The validated segmentation contributes targets only, never features, so
the extraction path works identically when no ground truth exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import morphometry, nifti_io, registration_features
from .errors import ValidationError
from .grid import (
    AffineTransform,
    DeformationField,
    LabelMap,
    ScalarVolume,
    SCORED_TISSUES,
    require_same_grid,
)
from .morphometry import DiceScores
from .nifti_io import SubjectRecord

_TISSUE_SLUGS = tuple(t.name.lower() for t in SCORED_TISSUES)

FEATURE_NAMES: tuple[str, ...] = (
    "inv_consistency_mm",
    "def_bias_mm",
    "def_dir_var_mm",
    "def_axis_var_mm",
    "shortest_axis_mm",
) + tuple(
    f"{stat}_{slug}" for slug in _TISSUE_SLUGS for stat in ("snr", "vol_mm3", "ncc")
)

DICE_COLUMNS: tuple[str, ...] = tuple(f"dice_{slug}" for slug in _TISSUE_SLUGS)

N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureVector:
    """The 20 quality features of one subject, in frozen schema order."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.size != N_FEATURES:
            raise ValidationError(f"feature vector must hold {N_FEATURES} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature vector contains non-finite values")
        per_tissue = values[5:].reshape(len(SCORED_TISSUES), 3)
        if np.any(per_tissue[:, 1] < 0) or np.any(per_tissue[:, 2] < 0):
            raise ValidationError("volumes and component counts must be >= 0")

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])


@dataclass(frozen=True)
class SubjectInputs:
    """One subject's loaded volumes and transforms."""

    mri: ScalarVolume
    computed_seg: LabelMap
    validated_seg: LabelMap | None
    affine_fwd: AffineTransform
    affine_inv: AffineTransform
    deformation: DeformationField


def load_subject(record: SubjectRecord) -> SubjectInputs:
    """Load every input named by a manifest record."""
    return SubjectInputs(
        mri=nifti_io.read_scalar_volume(record.mri_path),
        computed_seg=nifti_io.read_label_map(record.computed_seg_path),
        validated_seg=(
            nifti_io.read_label_map(record.validated_seg_path)
            if record.validated_seg_path is not None
            else None
        ),
        affine_fwd=nifti_io.read_affine(record.affine_fwd_path),
        affine_inv=nifti_io.read_affine(record.affine_inv_path),
        deformation=nifti_io.read_deformation_field(record.deformation_path),
    )


def extract_features(inputs: SubjectInputs) -> FeatureVector:
    """Compute the 20-feature vector from the computed segmentation.

    Tumor voxels are excluded from the head mask and from every per-tissue
    measurement. The deformation field may live on its own grid.
    """
    require_same_grid(inputs.mri, inputs.computed_seg, "MRI and computed segmentation")

    seg = inputs.computed_seg
    stats = registration_features.deformation_stats(inputs.deformation)
    values = np.empty(N_FEATURES, dtype=np.float64)
    values[0] = registration_features.inverse_consistency(
        inputs.affine_fwd, inputs.affine_inv, seg
    )
    values[1] = stats.bias_mm
    values[2] = stats.directional_variability_mm
    values[3] = stats.per_axis_variability_mm
    values[4] = morphometry.shortest_axis_length(seg)
    for idx, tissue in enumerate(SCORED_TISSUES):
        base = 5 + 3 * idx
        values[base] = morphometry.snr(inputs.mri, seg, tissue)
        values[base + 1] = morphometry.tissue_volume(seg, tissue)
        values[base + 2] = morphometry.connected_components(seg, tissue)
    return FeatureVector(values)


def measure_targets(computed: LabelMap, validated: LabelMap) -> DiceScores:
    """Per-tissue Dice of the computed map against the validated one."""
    require_same_grid(computed, validated, "computed and validated segmentations")
    return DiceScores(
        {t: morphometry.dice(computed, validated, t) for t in SCORED_TISSUES}
    )


def process_subject(record: SubjectRecord) -> tuple[FeatureVector, DiceScores | None]:
    """Load one subject, extract features, and measure targets if possible."""
    inputs = load_subject(record)
    features = extract_features(inputs)
    targets = None
    if inputs.validated_seg is not None:
        targets = measure_targets(inputs.computed_seg, inputs.validated_seg)
    return features, targets

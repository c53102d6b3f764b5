"""Global (affine) and local (deformable) registration quality measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import AffineTransform, DeformationField, LabelMap, head_mask

#: Upper bound on points sampled for the inverse-consistency mean.
MAX_CONSISTENCY_POINTS = 100_000


@dataclass(frozen=True)
class DeformationStats:
    """Summary of a deformation field.

    bias_mm: magnitude of the mean displacement vector.
    directional_variability_mm: population SD of the three per-axis means.
    per_axis_variability_mm: mean of the three per-axis population SDs.
    """

    bias_mm: float
    directional_variability_mm: float
    per_axis_variability_mm: float
    #: Raw per-axis means, kept for diagnostics output.
    mean_vector_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        vals = (self.bias_mm, self.directional_variability_mm, self.per_axis_variability_mm)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValidationError(f"deformation statistics must be finite and >= 0, got {vals}")


def inverse_consistency(fwd: AffineTransform, inv: AffineTransform, labels: LabelMap) -> float:
    """Mean round-trip displacement ||inv(fwd(p)) - p|| over head-mask points.

    Sample points are the physical centers (index * spacing) of head-mask
    voxels, deterministically strided down to at most 100,000 points.
    """
    flat = np.nonzero(head_mask(labels))[0]
    if flat.size == 0:
        raise ValidationError("head mask is empty, inverse consistency undefined")
    stride = -(-flat.size // MAX_CONSISTENCY_POINTS)  # ceil division
    flat = flat[::stride]

    shape = labels.shape
    i = flat % shape.nx
    j = (flat // shape.nx) % shape.ny
    k = flat // (shape.nx * shape.ny)
    points = np.stack(
        [i * shape.sx, j * shape.sy, k * shape.sz], axis=1
    ).astype(np.float64)

    residual = inv.apply(fwd.apply(points)) - points
    return float(np.mean(np.sqrt(np.sum(residual * residual, axis=1))))


def deformation_stats(field: DeformationField) -> DeformationStats:
    """Bias, directional variability, and mean per-axis variability of a field."""
    vec = field.vectors
    if vec.shape[0] == 0:
        raise ValidationError("deformation field has no voxels")
    axis_means = vec.mean(axis=0)
    axis_sds = vec.std(axis=0)
    return DeformationStats(
        bias_mm=float(np.sqrt(np.sum(axis_means * axis_means))),
        directional_variability_mm=float(np.std(axis_means)),
        per_axis_variability_mm=float(np.mean(axis_sds)),
        mean_vector_mm=tuple(float(v) for v in axis_means),
    )

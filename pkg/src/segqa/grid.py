"""Core volumetric data model: grids, volumes, label maps, transforms.

Voxel order is x-fastest throughout (flat index ``i + nx*(j + ny*k)``),
matching the on-disk NIfTI layout so volumes load without reshuffling.
Geometry is voxel index times spacing; orientation matrices are not applied.
All types are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import GridMismatchError, ValidationError


class TissueClass(IntEnum):
    """Per-voxel tissue codes.

    Skin stands for skin and muscle merged. Tumor is carried through I/O
    but excluded from every feature and Dice computation.
    """

    BACKGROUND = 0
    CSF = 1
    SKIN = 2
    GM = 3
    WM = 4
    SKULL = 5
    TUMOR = 6


#: The five tissues that are scored and predicted, in frozen reporting order.
SCORED_TISSUES = (
    TissueClass.CSF,
    TissueClass.SKIN,
    TissueClass.GM,
    TissueClass.WM,
    TissueClass.SKULL,
)

_MAX_LABEL = max(TissueClass)


@dataclass(frozen=True)
class GridShape:
    """Voxel counts per axis and voxel spacing in mm."""

    nx: int
    ny: int
    nz: int
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValidationError(f"voxel counts must be >= 1, got {(self.nx, self.ny, self.nz)}")
        if min(self.sx, self.sy, self.sz) <= 0 or not np.all(np.isfinite([self.sx, self.sy, self.sz])):
            raise ValidationError(f"spacings must be positive, got {(self.sx, self.sy, self.sz)}")

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.sx, self.sy, self.sz)

    @property
    def voxel_volume_mm3(self) -> float:
        return self.sx * self.sy * self.sz


def voxel_index(shape: GridShape, i: int, j: int, k: int) -> int:
    """Flat index of voxel (i, j, k) in x-fastest order."""
    if not (0 <= i < shape.nx and 0 <= j < shape.ny and 0 <= k < shape.nz):
        raise ValidationError(f"voxel ({i}, {j}, {k}) out of range for grid {shape.dims}")
    return i + shape.nx * (j + shape.ny * k)


def voxel_coords(shape: GridShape, flat: int) -> tuple[int, int, int]:
    """Inverse of :func:`voxel_index`."""
    if not 0 <= flat < shape.n_voxels:
        raise ValidationError(f"flat index {flat} out of range for grid {shape.dims}")
    i = flat % shape.nx
    j = (flat // shape.nx) % shape.ny
    k = flat // (shape.nx * shape.ny)
    return (i, j, k)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarVolume:
    """3D intensity grid, flat float64 data in x-fastest order."""

    shape: GridShape
    data: np.ndarray

    def __post_init__(self):
        data = _freeze(np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "data", data)
        if data.size != self.shape.n_voxels:
            raise ValidationError(f"data length {data.size} != voxel count {self.shape.n_voxels}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("scalar volume contains non-finite values")

    def as_array(self) -> np.ndarray:
        """(nx, ny, nz) view, no copy."""
        return self.data.reshape(self.shape.dims, order="F")


@dataclass(frozen=True)
class LabelMap:
    """Per-voxel tissue classification sharing a grid with a ScalarVolume."""

    shape: GridShape
    labels: np.ndarray

    def __post_init__(self):
        labels = _freeze(np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1))
        object.__setattr__(self, "labels", labels)
        if labels.size != self.shape.n_voxels:
            raise ValidationError(f"label length {labels.size} != voxel count {self.shape.n_voxels}")
        if labels.size and labels.max() > _MAX_LABEL:
            raise ValidationError(f"label code {int(labels.max())} is not a valid TissueClass")

    def as_array(self) -> np.ndarray:
        return self.labels.reshape(self.shape.dims, order="F")


def mask_of(labels: LabelMap, t: TissueClass) -> np.ndarray:
    """Flat boolean mask of voxels labelled ``t``; may be empty."""
    t = TissueClass(t)
    return labels.labels == np.uint8(t)


def head_mask(labels: LabelMap) -> np.ndarray:
    """Flat boolean mask of the head: every label except Background and Tumor."""
    lab = labels.labels
    return (lab != np.uint8(TissueClass.BACKGROUND)) & (lab != np.uint8(TissueClass.TUMOR))


def require_same_grid(a, b, what: str = "volumes") -> None:
    if a.shape != b.shape:
        raise GridMismatchError(f"{what} are on different grids: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class AffineTransform:
    """4x4 homogeneous transform, physical mm to physical mm."""

    m: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = _freeze(np.ascontiguousarray(self.m, dtype=np.float64))
        object.__setattr__(self, "m", m)
        if m.shape != (4, 4):
            raise ValidationError(f"affine matrix must be 4x4, got {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError(f"affine bottom row must be (0,0,0,1), got {m[3]}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("affine matrix contains non-finite values")
        if abs(np.linalg.det(m[:3, :3])) <= 1e-12:
            raise ValidationError("affine upper-left 3x3 block is not invertible")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4))

    @classmethod
    def translation(cls, dx: float, dy: float, dz: float) -> "AffineTransform":
        m = np.eye(4)
        m[:3, 3] = (dx, dy, dz)
        return cls(m)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (n, 3) array of mm points through the transform."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.m[:3, :3].T + self.m[:3, 3]

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Transform applying ``other`` first, then ``self``."""
        m = self.m @ other.m
        m[3] = (0.0, 0.0, 0.0, 1.0)
        return AffineTransform(m)

    def inverse(self) -> "AffineTransform":
        m = np.linalg.inv(self.m)
        m[3] = (0.0, 0.0, 0.0, 1.0)
        return AffineTransform(m)


@dataclass(frozen=True)
class DeformationField:
    """Per-voxel displacement 3-vectors in mm, one row per voxel."""

    shape: GridShape
    vectors: np.ndarray

    def __post_init__(self):
        vec = _freeze(np.ascontiguousarray(self.vectors, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "vectors", vec)
        if vec.shape[0] != self.shape.n_voxels:
            raise ValidationError(f"vector count {vec.shape[0]} != voxel count {self.shape.n_voxels}")
        if not np.all(np.isfinite(vec)):
            raise ValidationError("deformation field contains non-finite components")

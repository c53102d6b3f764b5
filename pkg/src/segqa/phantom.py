"""Deterministic synthetic head cohorts with controllable segmentation error.

A phantom head is five nested ellipsoid shells (skin > skull > CSF > GM >
WM) on a regular grid, plus per-tissue Gaussian intensity noise. One
severity scalar in [0, 1] drives every corruption channel at once:

  - image noise SD scales by (1 + severity);
  - the computed segmentation is the truth after per-tissue one-sided
    morphological shifts of radius floor(3*severity) voxels in a random
    axis direction, plus boundary label flips with probability
    0.3*severity;
  - the affine inverse is offset by a translation of exactly 2*severity
    mm, so the inverse-consistency feature equals 2*severity;
  - the deformation field gains a bias of about 1.2..2.4 mm/unit severity
    and smooth sinusoidal variability of about 0.5..1.1 mm/unit severity.

All randomness flows through the counter-based splitmix64 streams in
:mod:`segqa.rng`, so identical parameters reproduce cohorts bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .grid import (
    AffineTransform,
    DeformationField,
    GridShape,
    LabelMap,
    ScalarVolume,
    SCORED_TISSUES,
    TissueClass,
)
from .nifti_io import CohortManifest, SubjectRecord, write_affine, write_manifest, write_nifti
from .rng import CounterRng, substream

# substream tags, one per consumer of a subject's seed
_TAG_NOISE = 1
_TAG_PERTURB = 2
_TAG_REGISTRATION = 3

#: Shell semi-axes as fractions of the half-extent per axis, outermost first.
_SHELL_FRACTIONS = (
    (TissueClass.SKIN, (0.90, 0.84, 0.78)),
    (TissueClass.SKULL, (0.80, 0.74, 0.68)),
    (TissueClass.CSF, (0.70, 0.64, 0.58)),
    (TissueClass.GM, (0.60, 0.54, 0.48)),
    (TissueClass.WM, (0.42, 0.36, 0.30)),
)

DEFAULT_MEAN_INTENSITY: dict[TissueClass, float] = {
    TissueClass.BACKGROUND: 10.0,
    TissueClass.CSF: 30.0,
    TissueClass.SKIN: 80.0,
    TissueClass.GM: 60.0,
    TissueClass.WM: 90.0,
    TissueClass.SKULL: 40.0,
}

DEFAULT_NOISE_SD: dict[TissueClass, float] = {
    TissueClass.BACKGROUND: 2.0,
    TissueClass.CSF: 3.0,
    TissueClass.SKIN: 4.0,
    TissueClass.GM: 4.0,
    TissueClass.WM: 4.0,
    TissueClass.SKULL: 5.0,
}


def default_shells(shape: GridShape) -> tuple[tuple[TissueClass, tuple[float, float, float]], ...]:
    """Default nested semi-axes (mm) scaled to the grid's physical extent."""
    half = (
        shape.nx * shape.sx / 2.0,
        shape.ny * shape.sy / 2.0,
        shape.nz * shape.sz / 2.0,
    )
    return tuple(
        (tissue, (f[0] * half[0], f[1] * half[1], f[2] * half[2]))
        for tissue, f in _SHELL_FRACTIONS
    )


@dataclass(frozen=True)
class PhantomParams:
    """Geometry, intensity model, corruption severity, and seed."""

    shape: GridShape = GridShape(64, 64, 64, 2.0, 2.0, 2.0)
    shells: tuple[tuple[TissueClass, tuple[float, float, float]], ...] | None = None
    mean_intensity: Mapping[TissueClass, float] = field(
        default_factory=lambda: dict(DEFAULT_MEAN_INTENSITY)
    )
    noise_sd: Mapping[TissueClass, float] = field(default_factory=lambda: dict(DEFAULT_NOISE_SD))
    severity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.shells is None:
            object.__setattr__(self, "shells", default_shells(self.shape))
        if not 0.0 <= self.severity <= 1.0:
            raise ValidationError(f"severity must lie in [0, 1], got {self.severity}")
        prev = None
        for tissue, axes in self.shells:
            if min(axes) <= 0:
                raise ValidationError(f"shell {tissue.name} has non-positive semi-axes {axes}")
            if prev is not None and not all(a < p for a, p in zip(axes, prev)):
                raise ValidationError(
                    f"shells are not strictly nested: {axes} does not fit inside {prev}"
                )
            prev = axes


def _centered_coords(shape: GridShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Physical mm offsets from the volume center, per axis, x-fastest flat."""
    cx = (np.arange(shape.nx) - (shape.nx - 1) / 2.0) * shape.sx
    cy = (np.arange(shape.ny) - (shape.ny - 1) / 2.0) * shape.sy
    cz = (np.arange(shape.nz) - (shape.nz - 1) / 2.0) * shape.sz
    gx, gy, gz = np.meshgrid(cx, cy, cz, indexing="ij")
    return (gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F"))


def generate_phantom(params: PhantomParams) -> tuple[ScalarVolume, LabelMap]:
    """Build the noisy image and the ground-truth label map."""
    shape = params.shape
    gx, gy, gz = _centered_coords(shape)
    labels = np.zeros(shape.n_voxels, dtype=np.uint8)
    for tissue, (ax, ay, az) in params.shells:
        inside = (gx / ax) ** 2 + (gy / ay) ** 2 + (gz / az) ** 2 <= 1.0
        labels[inside] = np.uint8(tissue)

    mean_by_code = np.zeros(len(TissueClass), dtype=np.float64)
    sd_by_code = np.zeros(len(TissueClass), dtype=np.float64)
    for t in TissueClass:
        mean_by_code[t] = params.mean_intensity.get(t, 0.0)
        sd_by_code[t] = params.noise_sd.get(t, 0.0)

    rng = CounterRng(substream(params.seed, _TAG_NOISE))
    noise = rng.normal(shape.n_voxels)
    data = mean_by_code[labels] + sd_by_code[labels] * (1.0 + params.severity) * noise
    return ScalarVolume(shape, data), LabelMap(shape, labels)


_AXIS_DIRECTIONS = (
    (0, 1), (0, -1),
    (1, 1), (1, -1),
    (2, 1), (2, -1),
)


def _shift_along(arr: np.ndarray, axis: int, step: int, fill) -> np.ndarray:
    """Shift content by ``step`` voxels along ``axis``, filling with ``fill``."""
    out = np.full_like(arr, fill)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    if step > 0:
        dst[axis] = slice(step, None)
        src[axis] = slice(None, -step)
    elif step < 0:
        dst[axis] = slice(None, step)
        src[axis] = slice(-step, None)
    else:
        return arr.copy()
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _boundary_mask(labels3d: np.ndarray) -> np.ndarray:
    """Voxels with at least one 6-neighbour carrying a different label."""
    boundary = np.zeros(labels3d.shape, dtype=bool)
    for axis, sign in _AXIS_DIRECTIONS:
        neighbour = _shift_along(labels3d, axis, sign, fill=0)
        interior = _shift_along(np.ones(labels3d.shape, dtype=bool), axis, sign, fill=False)
        boundary |= interior & (neighbour != labels3d)
    return boundary


def perturb_segmentation(truth: LabelMap, severity: float, seed: int) -> LabelMap:
    """Corrupt a label map by boundary shifts and flips scaled by severity.

    Each scored tissue, in a seeded random order, is dilated or eroded
    one-sidedly by floor(3*severity) voxels along a random axis direction;
    eroded voxels take the label of the nearest voxel outside the tissue.
    Afterwards boundary voxels flip to a random 6-neighbour's label with
    probability 0.3*severity. Severity 0 returns the input unchanged.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValidationError(f"severity must lie in [0, 1], got {severity}")
    if severity == 0.0:
        return truth

    rng = CounterRng(seed)
    labels3d = np.array(truth.as_array())  # writable working copy
    spacing = truth.shape.spacing
    radius = int(3.0 * severity)

    for tissue in rng.shuffled(list(SCORED_TISSUES)):
        dilate = bool(rng.uniform(1)[0] < 0.5)
        axis, sign = _AXIS_DIRECTIONS[int(rng.integers(1, len(_AXIS_DIRECTIONS))[0])]
        if radius == 0:
            continue
        mask = labels3d == np.uint8(tissue)
        if not mask.any():
            continue
        if dilate:
            grown = mask.copy()
            for step in range(1, radius + 1):
                grown |= _shift_along(mask, axis, sign * step, fill=False)
            labels3d[grown & ~mask] = np.uint8(tissue)
        else:
            kept = mask.copy()
            for step in range(1, radius + 1):
                kept &= _shift_along(mask, axis, -sign * step, fill=False)
            removed = mask & ~kept
            if removed.any():
                nearest = ndimage.distance_transform_edt(
                    mask, sampling=spacing, return_distances=False, return_indices=True
                )
                labels3d[removed] = labels3d[tuple(ind[removed] for ind in nearest)]

    flip_p = 0.3 * severity
    snapshot = labels3d.copy()
    coords = np.argwhere(_boundary_mask(snapshot))
    if coords.shape[0]:
        u = rng.uniform(coords.shape[0])
        dirs = rng.integers(coords.shape[0], len(_AXIS_DIRECTIONS))
        picked = u < flip_p
        coords = coords[picked]
        dirs = dirs[picked]
        offsets = np.array([(s if a == 0 else 0, s if a == 1 else 0, s if a == 2 else 0)
                            for a, s in _AXIS_DIRECTIONS])
        neighbours = coords + offsets[dirs]
        in_bounds = np.all((neighbours >= 0) & (neighbours < labels3d.shape), axis=1)
        coords = coords[in_bounds]
        neighbours = neighbours[in_bounds]
        labels3d[tuple(coords.T)] = snapshot[tuple(neighbours.T)]

    return LabelMap(truth.shape, labels3d.ravel(order="F"))


def _rotation_matrix(angles: np.ndarray) -> np.ndarray:
    ax, ay, az = angles
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def synth_registration(
    severity: float, seed: int, shape: GridShape
) -> tuple[AffineTransform, AffineTransform, DeformationField]:
    """Synthesize an affine pair and deformation field for one subject.

    The forward transform is a small random rigid+scale map. Its inverse
    is exact except for a translation offset of magnitude 2*severity mm,
    and the deformation field combines a severity-scaled bias with smooth
    sinusoidal variability.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValidationError(f"severity must lie in [0, 1], got {severity}")
    rng = CounterRng(seed)

    angles = (rng.uniform(3) - 0.5) * 2.0 * np.deg2rad(3.0)
    scale = 1.0 + (rng.uniform(1)[0] - 0.5) * 0.04
    translation = (rng.uniform(3) - 0.5) * 10.0
    m = np.eye(4)
    m[:3, :3] = scale * _rotation_matrix(angles)
    m[:3, 3] = translation
    fwd = AffineTransform(m)

    direction = rng.normal(3)
    direction /= np.sqrt(np.sum(direction * direction))
    offset = 2.0 * severity * direction
    inv = AffineTransform.translation(*offset).compose(fwd.inverse())

    ux = (np.arange(shape.nx) / shape.nx).astype(np.float64)
    uy = (np.arange(shape.ny) / shape.ny).astype(np.float64)
    uz = (np.arange(shape.nz) / shape.nz).astype(np.float64)
    gx, gy, gz = np.meshgrid(ux, uy, uz, indexing="ij")
    gx = gx.ravel(order="F")
    gy = gy.ravel(order="F")
    gz = gz.ravel(order="F")

    bias_dir = rng.normal(3)
    bias_dir /= np.sqrt(np.sum(bias_dir * bias_dir))
    bias = severity * (1.2 + 1.2 * rng.uniform(1)[0]) * bias_dir
    amplitudes = severity * (0.5 + 0.6 * rng.uniform(3))

    vectors = np.empty((shape.n_voxels, 3), dtype=np.float64)
    for axis in range(3):
        wave = np.zeros(shape.n_voxels, dtype=np.float64)
        for _ in range(2):
            k = 1.0 + rng.integers(3, 3).astype(np.float64)
            phase = rng.uniform(1)[0]
            coeff = (0.5 + 0.5 * rng.uniform(1)[0]) * (1.0 if rng.uniform(1)[0] < 0.5 else -1.0)
            wave += coeff * np.sin(2.0 * np.pi * (k[0] * gx + k[1] * gy + k[2] * gz + phase))
        sd = float(np.std(wave))
        if sd > 1e-12:
            wave = (wave - float(np.mean(wave))) / sd
        vectors[:, axis] = bias[axis] + amplitudes[axis] * wave

    return fwd, inv, DeformationField(shape, vectors)


def generate_cohort(n: int, seed: int, out_dir, size: int = 64) -> CohortManifest:
    """Write an n-subject cohort with severities evenly spaced in [0, 1].

    Each subject directory holds the MRI, truth (validated) and perturbed
    (computed) segmentations, the affine pair, and the deformation field;
    a manifest.json with per-subject severity and seed ties them together.
    """
    if n < 2:
        raise ValidationError(f"a cohort needs at least 2 subjects, got {n}")
    out_dir = Path(out_dir)
    shape = GridShape(size, size, size, 2.0, 2.0, 2.0)

    records = []
    for i in range(n):
        severity = i / (n - 1)
        subject_seed = substream(seed, i)
        sid = f"sub-{i:03d}"
        subject_dir = out_dir / sid
        subject_dir.mkdir(parents=True, exist_ok=True)

        params = PhantomParams(
            shape=shape, severity=severity, seed=substream(subject_seed, _TAG_NOISE)
        )
        mri, truth = generate_phantom(params)
        computed = perturb_segmentation(truth, severity, substream(subject_seed, _TAG_PERTURB))
        fwd, inv, deformation = synth_registration(
            severity, substream(subject_seed, _TAG_REGISTRATION), shape
        )

        write_nifti(mri, subject_dir / "mri.nii.gz")
        write_nifti(truth, subject_dir / "validated_seg.nii.gz")
        write_nifti(computed, subject_dir / "computed_seg.nii.gz")
        write_affine(fwd, subject_dir / "affine_fwd.txt")
        write_affine(inv, subject_dir / "affine_inv.txt")
        write_nifti(deformation, subject_dir / "deformation.nii.gz")

        records.append(
            SubjectRecord(
                id=sid,
                mri_path=subject_dir / "mri.nii.gz",
                computed_seg_path=subject_dir / "computed_seg.nii.gz",
                validated_seg_path=subject_dir / "validated_seg.nii.gz",
                affine_fwd_path=subject_dir / "affine_fwd.txt",
                affine_inv_path=subject_dir / "affine_inv.txt",
                deformation_path=subject_dir / "deformation.nii.gz",
                meta={"severity": severity, "seed": subject_seed},
            )
        )

    manifest = CohortManifest(
        subjects=tuple(records), meta={"cohort_seed": seed, "n": n, "size": size}
    )
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest

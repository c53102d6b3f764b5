from __future__ import annotations

import numpy as np
import pytest

from segqa.feature_pipeline import SubjectInputs
from segqa.grid import GridShape, LabelMap, ScalarVolume, TissueClass
from segqa.phantom import (
    PhantomParams,
    _TAG_NOISE,
    _TAG_PERTURB,
    _TAG_REGISTRATION,
    generate_phantom,
    perturb_segmentation,
    synth_registration,
)
from segqa.rng import substream


def grid(nx, ny, nz, sx=1.0, sy=1.0, sz=1.0) -> GridShape:
    return GridShape(nx, ny, nz, sx, sy, sz)


def label_map_from_array(arr3d, spacing=(1.0, 1.0, 1.0)) -> LabelMap:
    """LabelMap from an array indexed [i, j, k]."""
    arr3d = np.asarray(arr3d, dtype=np.uint8)
    shape = GridShape(*arr3d.shape, *spacing)
    return LabelMap(shape, arr3d.ravel(order="F"))


def scalar_from_array(arr3d, spacing=(1.0, 1.0, 1.0)) -> ScalarVolume:
    arr3d = np.asarray(arr3d, dtype=np.float64)
    shape = GridShape(*arr3d.shape, *spacing)
    return ScalarVolume(shape, arr3d.ravel(order="F"))


def uniform_label_map(dims, code: TissueClass, spacing=(1.0, 1.0, 1.0)) -> LabelMap:
    return label_map_from_array(np.full(dims, int(code), dtype=np.uint8), spacing)


def make_phantom_subject(seed: int = 42, severity: float = 0.5, size: int = 32) -> SubjectInputs:
    """One synthetic subject wired exactly like a generate_cohort entry."""
    shape = GridShape(size, size, size, 2.0, 2.0, 2.0)
    params = PhantomParams(shape=shape, severity=severity, seed=substream(seed, _TAG_NOISE))
    mri, truth = generate_phantom(params)
    computed = perturb_segmentation(truth, severity, substream(seed, _TAG_PERTURB))
    fwd, inv, field = synth_registration(severity, substream(seed, _TAG_REGISTRATION), shape)
    return SubjectInputs(
        mri=mri,
        computed_seg=computed,
        validated_seg=truth,
        affine_fwd=fwd,
        affine_inv=inv,
        deformation=field,
    )


@pytest.fixture(scope="session")
def standard_cohort(tmp_path_factory):
    """The acceptance cohort: ``segqa phantom --n 40 --seed 7`` at 64^3."""
    from segqa.cli import main

    out = tmp_path_factory.mktemp("standard") / "cohort"
    code = main(["phantom", "--n", "40", "--seed", "7", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def standard_report(standard_cohort, tmp_path_factory):
    """Evaluation report for the standard cohort, timed for the gate."""
    import json
    import time

    from segqa.cli import main

    out = tmp_path_factory.mktemp("report")
    report_path = out / "report.json"
    t0 = time.perf_counter()
    code = main(
        [
            "evaluate",
            "--manifest",
            str(standard_cohort / "manifest.json"),
            "--out",
            str(report_path),
            "--jobs",
            "1",
        ]
    )
    elapsed = time.perf_counter() - t0
    assert code == 0
    return json.loads(report_path.read_text()), elapsed

import math

import numpy as np
import pytest

from conftest import uniform_label_map
from oracles import field_stats_twopass
from segqa.errors import ValidationError
from segqa.grid import AffineTransform, DeformationField, GridShape, TissueClass
from segqa.registration_features import (
    DeformationStats,
    MAX_CONSISTENCY_POINTS,
    deformation_stats,
    inverse_consistency,
)

HEAD = uniform_label_map((6, 5, 4), TissueClass.SKIN, spacing=(1.0, 1.5, 2.0))


def _random_affine(rng) -> AffineTransform:
    m = np.eye(4)
    m[:3, :3] = np.eye(3) + 0.05 * rng.standard_normal((3, 3))
    m[:3, 3] = rng.standard_normal(3) * 4.0
    return AffineTransform(m)


class TestInverseConsistency:
    def test_identity_pair(self):
        ident = AffineTransform.identity()
        assert inverse_consistency(ident, ident, HEAD) == 0.0

    def test_exact_translation_inverse(self):
        fwd = AffineTransform.translation(5.0, 0.0, 0.0)
        inv = AffineTransform.translation(-5.0, 0.0, 0.0)
        assert inverse_consistency(fwd, inv, HEAD) == 0.0

    def test_unmatched_translation(self):
        fwd = AffineTransform.translation(5.0, 0.0, 0.0)
        assert inverse_consistency(fwd, AffineTransform.identity(), HEAD) == pytest.approx(5.0)

    def test_empty_head_mask_rejected(self):
        empty = uniform_label_map((3, 3, 3), TissueClass.BACKGROUND)
        with pytest.raises(ValidationError):
            inverse_consistency(AffineTransform.identity(), AffineTransform.identity(), empty)

    def test_general_pair_nonnegative_and_zero_iff_inverse(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            fwd = _random_affine(rng)
            assert inverse_consistency(fwd, fwd.inverse(), HEAD) <= 1e-9
            perturbed = AffineTransform.translation(0.5, 0, 0).compose(fwd.inverse())
            assert inverse_consistency(fwd, perturbed, HEAD) > 1e-3

    def test_monotone_in_translation_perturbation(self):
        rng = np.random.default_rng(22)
        fwd = _random_affine(rng)
        exact = fwd.inverse()
        values = []
        for mag in np.linspace(0.0, 6.0, 13):
            inv = AffineTransform.translation(mag, 0.0, 0.0).compose(exact)
            values.append(inverse_consistency(fwd, inv, HEAD))
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_stride_kicks_in_above_point_budget(self):
        big = uniform_label_map((64, 64, 64), TissueClass.SKIN, spacing=(2.0, 2.0, 2.0))
        assert big.shape.n_voxels > MAX_CONSISTENCY_POINTS
        fwd = AffineTransform.translation(0.0, 3.0, 0.0)
        # constant residual: subsampling must not change the mean
        assert inverse_consistency(fwd, AffineTransform.identity(), big) == pytest.approx(3.0)


def _const_field(vec, dims=(3, 3, 3)) -> DeformationField:
    shape = GridShape(*dims, 1.0, 1.0, 1.0)
    return DeformationField(shape, np.tile(np.asarray(vec, dtype=float), (shape.n_voxels, 1)))


class TestDeformationStats:
    def test_constant_field_closed_form(self):
        stats = deformation_stats(_const_field((1.0, 2.0, 3.0)))
        assert stats.bias_mm == pytest.approx(math.sqrt(14.0), rel=1e-12)
        assert stats.directional_variability_mm == pytest.approx(math.sqrt(2.0 / 3.0), rel=1e-12)
        assert stats.per_axis_variability_mm == 0.0
        assert stats.mean_vector_mm == (1.0, 2.0, 3.0)

    def test_balanced_opposites(self):
        shape = GridShape(2, 1, 1, 1, 1, 1)
        field = DeformationField(shape, np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
        stats = deformation_stats(field)
        assert stats.bias_mm == 0.0
        assert stats.per_axis_variability_mm == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_zero_field(self):
        stats = deformation_stats(_const_field((0.0, 0.0, 0.0)))
        assert (stats.bias_mm, stats.directional_variability_mm, stats.per_axis_variability_mm) == (
            0.0,
            0.0,
            0.0,
        )

    def test_negation_preserves_magnitudes(self):
        rng = np.random.default_rng(23)
        shape = GridShape(4, 3, 2, 1, 1, 1)
        vec = rng.standard_normal((shape.n_voxels, 3))
        a = deformation_stats(DeformationField(shape, vec))
        b = deformation_stats(DeformationField(shape, -vec))
        assert a.bias_mm == pytest.approx(b.bias_mm, rel=1e-12)
        assert a.directional_variability_mm == pytest.approx(b.directional_variability_mm, rel=1e-12)
        assert a.per_axis_variability_mm == pytest.approx(b.per_axis_variability_mm, rel=1e-12)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(24)
        shape = GridShape(5, 4, 3, 1, 1, 1)
        for _ in range(20):
            vec = rng.standard_normal((shape.n_voxels, 3)) * rng.uniform(0.1, 5.0)
            stats = deformation_stats(DeformationField(shape, vec))
            bias, directional, per_axis = field_stats_twopass(vec.tolist())
            assert stats.bias_mm == pytest.approx(bias, rel=1e-9, abs=1e-12)
            assert stats.directional_variability_mm == pytest.approx(directional, rel=1e-9, abs=1e-12)
            assert stats.per_axis_variability_mm == pytest.approx(per_axis, rel=1e-9, abs=1e-12)

    def test_invariants_enforced(self):
        with pytest.raises(ValidationError):
            DeformationStats(bias_mm=-1.0, directional_variability_mm=0.0, per_axis_variability_mm=0.0)

import numpy as np
import pytest

from ddad.errors import ConfigError, ShapeError
from ddad.scoring import (
    AnomalyMap,
    EnsembleOutputs,
    image_score,
    pooled_sigma,
    refine_with_uncertainty,
    score_inter,
    score_intra,
    score_rec,
)


def outputs(members, variances=None):
    members = np.asarray(members, np.float64)
    return EnsembleOutputs(
        member_recons=members,
        mean_map=members.mean(axis=0),
        member_vars=None if variances is None else np.asarray(variances, np.float64),
    )


class TestScoreRec:
    def test_identity_zero(self):
        x = np.random.default_rng(0).uniform(0, 1, (2, 4, 4))
        assert not score_rec(x, x.copy()).scores.any()

    def test_direct_square(self):
        m = score_rec(np.array([[1.0]]), np.array([[0.5]]))
        assert m.scores.tolist() == [[0.25]]
        assert m.kind == "rec"

    def test_sign_symmetric(self):
        a, b = np.array([[0.2]]), np.array([[0.9]])
        assert score_rec(a, b).scores.tolist() == score_rec(b, a).scores.tolist()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            score_rec(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))


class TestScoreIntra:
    def test_single_member_zero(self):
        assert not score_intra(outputs([np.full((1, 4, 4), 0.3)])).scores.any()

    def test_two_member_values(self):
        m = score_intra(outputs([np.full((1, 2, 2), 0.0), np.full((1, 2, 2), 2.0)]))
        np.testing.assert_allclose(m.scores, 1.0)

    def test_three_member_values(self):
        m = score_intra(outputs([np.full((1, 1, 1), 1.0),
                                 np.full((1, 1, 1), 1.0),
                                 np.full((1, 1, 1), 4.0)]))
        np.testing.assert_allclose(m.scores, np.sqrt(2.0), rtol=1e-12)

    def test_k2_closed_form(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0, 1, (3, 8, 8)), rng.uniform(0, 1, (3, 8, 8))
        general = score_intra(outputs([a, b])).scores
        np.testing.assert_allclose(general, np.abs(a - b) / 2.0, rtol=1e-12, atol=1e-15)


class TestScoreInter:
    def test_identical_modules_zero(self):
        o = outputs([np.random.default_rng(0).uniform(0, 1, (2, 4, 4))])
        assert not score_inter(o, o).scores.any()

    def test_absolute_difference(self):
        a = outputs([np.full((1, 1, 1), 0.8)])
        b = outputs([np.full((1, 1, 1), 0.3)])
        np.testing.assert_allclose(score_inter(a, b).scores, 0.5)

    def test_symmetric_in_modules(self):
        rng = np.random.default_rng(2)
        a = outputs([rng.uniform(0, 1, (2, 4, 4)) for _ in range(3)])
        b = outputs([rng.uniform(0, 1, (2, 4, 4)) for _ in range(3)])
        np.testing.assert_array_equal(score_inter(a, b).scores, score_inter(b, a).scores)

    def test_intra_independent_of_module_a(self):
        rng = np.random.default_rng(3)
        b = outputs([rng.uniform(0, 1, (2, 4, 4)) for _ in range(3)])
        before = score_intra(b).scores.copy()
        _ = score_inter(outputs([rng.uniform(0, 1, (2, 4, 4))]), b)
        np.testing.assert_array_equal(score_intra(b).scores, before)


class TestRefine:
    def test_unit_sigma_unchanged(self):
        m = AnomalyMap(np.random.default_rng(0).uniform(0, 1, (2, 4, 4)), "inter")
        refined = refine_with_uncertainty(m, np.ones((2, 4, 4)))
        np.testing.assert_array_equal(refined.scores, m.scores)
        assert refined.kind == "inter_refined"

    def test_sigma_two_halves(self):
        m = AnomalyMap(np.full((1, 2, 2), 0.8), "intra")
        refined = refine_with_uncertainty(m, np.full((1, 2, 2), 2.0))
        np.testing.assert_allclose(refined.scores, 0.4)

    def test_variance_space_pooling(self):
        o = outputs([np.zeros((1, 1, 1))] * 2,
                    variances=[np.full((1, 1, 1), 1.0), np.full((1, 1, 1), 9.0)])
        np.testing.assert_allclose(pooled_sigma(o, "variance"), np.sqrt(5.0))

    def test_sigma_space_pooling(self):
        o = outputs([np.zeros((1, 1, 1))] * 2,
                    variances=[np.full((1, 1, 1), 1.0), np.full((1, 1, 1), 9.0)])
        np.testing.assert_allclose(pooled_sigma(o, "sigma"), 2.0)

    def test_sigma_floor_applied(self):
        m = AnomalyMap(np.full((1, 1, 1), 1.0), "inter")
        refined = refine_with_uncertainty(m, np.full((1, 1, 1), 1e-9))
        np.testing.assert_allclose(refined.scores, 1e3)

    def test_rejects_non_refinable_kind(self):
        with pytest.raises(ConfigError):
            refine_with_uncertainty(AnomalyMap(np.ones((1, 1, 1)), "rec"), np.ones((1, 1, 1)))

    def test_rejects_non_aeu_module(self):
        with pytest.raises(ConfigError):
            pooled_sigma(outputs([np.zeros((1, 1, 1))]))


class TestImageScore:
    def test_constant_map(self):
        assert image_score(AnomalyMap(np.full((4, 4), 0.7), "rec")) == pytest.approx(0.7)

    def test_two_pixel_toy(self):
        assert image_score(AnomalyMap(np.array([[0.0, 1.0]]), "rec")) == 0.5

    def test_zero_map(self):
        assert image_score(AnomalyMap(np.zeros((4, 4)), "inter")) == 0.0

    def test_batch_is_per_image(self):
        batch = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
        per_image = image_score(AnomalyMap(batch, "inter"))
        singles = [image_score(AnomalyMap(img, "inter")) for img in batch]
        np.testing.assert_array_equal(per_image, singles)

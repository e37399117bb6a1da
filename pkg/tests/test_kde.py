"""Kernel-regression baseline tests: weighting math against a
brute-force oracle, bandwidth heuristics and selection, and the
degenerate and error cases."""

import numpy as np
import pytest

from echosynth.kde import (
    DEFAULT_BANDWIDTH_FACTORS,
    KdeModel,
    fit_kde,
    median_pairwise_distance,
    predict_kde,
    select_bandwidth,
)


def brute_force_predict(model: KdeModel, queries2d: np.ndarray) -> np.ndarray:
    """Direct double-loop Nadaraya-Watson, no max-shift trick."""
    out = np.zeros((queries2d.shape[0], model.targets.shape[1]))
    for qi, q in enumerate(queries2d):
        num = np.zeros(model.targets.shape[1])
        den = 0.0
        for f, t in zip(model.features, model.targets):
            d2 = float(np.sum((q - f) ** 2))
            w = np.exp(-d2 / (2.0 * model.bandwidth**2))
            num += w * t
            den += w
        out[qi] = num / den
    return out


def ramp_problem(n: int, seed: int = 0):
    """1-D feature ramp with a linear target: ideal for local averaging."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 10.0, n)[:, None] + rng.normal(scale=1e-3, size=(n, 1))
    y = np.column_stack([x[:, 0], -2.0 * x[:, 0]])
    return x, y


class TestMedianPairwiseDistance:
    def test_hand_value_three_points(self):
        f = np.asarray([[0.0], [1.0], [3.0]])  # distances 1, 2, 3
        assert median_pairwise_distance(f) == 2.0

    def test_fewer_than_two_samples_give_zero(self):
        assert median_pairwise_distance(np.zeros((1, 4))) == 0.0
        assert median_pairwise_distance(np.zeros((0, 4))) == 0.0

    def test_sampled_median_is_deterministic_and_close_to_exact(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(80, 6))  # 3160 pairs > 2000 triggers sampling
        a = median_pairwise_distance(f, seed=5)
        b = median_pairwise_distance(f, seed=5)
        assert a == b
        exact = median_pairwise_distance(f, max_pairs=10**7)
        assert a == pytest.approx(exact, rel=0.1)

    def test_all_pairs_used_when_few(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=(10, 3))
        ii, jj = np.triu_indices(10, k=1)
        exact = float(np.median(np.linalg.norm(f[ii] - f[jj], axis=1)))
        assert median_pairwise_distance(f) == exact


class TestFit:
    def test_default_bandwidth_is_median_distance(self):
        rng = np.random.default_rng(3)
        patches = rng.normal(size=(12, 4, 5))
        targets = rng.normal(size=(12, 2))
        model = fit_kde(patches, targets)
        flat = patches.reshape(12, -1)
        assert model.bandwidth == median_pairwise_distance(flat)

    def test_identical_patches_fall_back_to_unit_bandwidth(self):
        patches = np.ones((5, 3, 3))
        model = fit_kde(patches, np.arange(10.0).reshape(5, 2))
        assert model.bandwidth == 1.0

    def test_explicit_bandwidth_kept(self):
        model = fit_kde(np.zeros((2, 3)), np.zeros((2, 1)), bandwidth=0.25)
        assert model.bandwidth == 0.25

    def test_single_sample_database_accepted(self):
        model = fit_kde(np.ones((1, 4)), np.asarray([[7.0, 8.0]]))
        pred = predict_kde(model, np.zeros(4))
        np.testing.assert_array_equal(pred, [7.0, 8.0])

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="bandwidth"):
            fit_kde(np.zeros((2, 3)), np.zeros((2, 1)), bandwidth=0.0)
        with pytest.raises(ValueError, match="row counts"):
            KdeModel(features=np.zeros((3, 2)), targets=np.zeros((2, 1)), bandwidth=1.0)
        with pytest.raises(ValueError, match="2-D"):
            KdeModel(features=np.zeros(3), targets=np.zeros((3, 1)), bandwidth=1.0)
        with pytest.raises(ValueError, match="at least one"):
            KdeModel(features=np.zeros((0, 2)), targets=np.zeros((0, 1)), bandwidth=1.0)


class TestPredict:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        features = rng.normal(size=(50, 20))
        targets = rng.normal(size=(50, 3))
        model = fit_kde(features, targets)
        queries = rng.normal(size=(7, 20))
        pred = predict_kde(model, queries)
        expected = brute_force_predict(model, queries)
        np.testing.assert_allclose(pred, expected, rtol=1e-12, atol=1e-12)

    def test_tiny_bandwidth_interpolates_training_points(self):
        rng = np.random.default_rng(5)
        features = rng.normal(size=(20, 6))
        targets = rng.normal(size=(20, 2))
        model = fit_kde(features, targets, bandwidth=1e-3)
        pred = predict_kde(model, features)
        np.testing.assert_allclose(pred, targets, rtol=0, atol=1e-9)

    def test_huge_bandwidth_returns_global_mean(self):
        rng = np.random.default_rng(6)
        features = rng.normal(size=(15, 4))
        targets = rng.normal(size=(15, 2))
        model = fit_kde(features, targets, bandwidth=1e6)
        pred = predict_kde(model, np.zeros(4))
        np.testing.assert_allclose(pred, targets.mean(axis=0), rtol=0, atol=1e-6)

    def test_equidistant_query_averages(self):
        model = fit_kde(
            np.asarray([[0.0, 0.0], [2.0, 0.0]]),
            np.asarray([[1.0], [5.0]]),
            bandwidth=0.7,
        )
        pred = predict_kde(model, np.asarray([1.0, 0.0]))
        np.testing.assert_allclose(pred, [3.0], rtol=0, atol=1e-12)

    def test_predictions_stay_in_target_hull(self):
        rng = np.random.default_rng(7)
        features = rng.normal(size=(30, 5))
        targets = rng.normal(size=(30, 3))
        model = fit_kde(features, targets, bandwidth=0.5)
        pred = predict_kde(model, rng.normal(size=(40, 5)) * 3.0)
        assert np.all(pred >= targets.min(axis=0) - 1e-12)
        assert np.all(pred <= targets.max(axis=0) + 1e-12)

    def test_far_query_does_not_underflow(self):
        # The exponent shift keeps the nearest weight at one even when
        # every raw weight would underflow to zero.
        model = fit_kde(np.asarray([[0.0], [1.0]]), np.asarray([[2.0], [4.0]]),
                        bandwidth=1e-3)
        pred = predict_kde(model, np.asarray([1e6]))
        assert np.isfinite(pred).all()
        np.testing.assert_allclose(pred, [4.0], rtol=0, atol=1e-9)

    def test_single_and_stacked_query_shapes(self):
        rng = np.random.default_rng(8)
        patches = rng.normal(size=(9, 3, 4))
        targets = rng.normal(size=(9, 2))
        model = fit_kde(patches, targets)
        one = predict_kde(model, patches[0])
        many = predict_kde(model, patches[:3])
        assert one.shape == (2,)
        assert many.shape == (3, 2)
        np.testing.assert_allclose(many[0], one, rtol=1e-12, atol=0)

    def test_patch_stacks_flatten_like_2d(self):
        rng = np.random.default_rng(9)
        patches = rng.normal(size=(10, 4, 6))
        targets = rng.normal(size=(10, 2))
        m3 = fit_kde(patches, targets, bandwidth=2.0)
        m2 = fit_kde(patches.reshape(10, 24), targets, bandwidth=2.0)
        q = rng.normal(size=(2, 4, 6))
        np.testing.assert_array_equal(
            predict_kde(m3, q), predict_kde(m2, q.reshape(2, 24))
        )

    def test_query_length_mismatch_rejected(self):
        model = fit_kde(np.zeros((3, 4)), np.zeros((3, 1)), bandwidth=1.0)
        with pytest.raises(ValueError, match="does not match"):
            predict_kde(model, np.zeros((2, 5)))


class TestSelectBandwidth:
    def test_candidates_are_factors_of_the_median(self):
        rng = np.random.default_rng(10)
        features = rng.normal(size=(20, 3))
        targets = rng.normal(size=(20, 2))
        best, scores = select_bandwidth(features, targets)
        med = median_pairwise_distance(features)
        expected = {f * med for f in DEFAULT_BANDWIDTH_FACTORS}
        assert set(scores) == expected
        assert best in expected
        assert scores[best] == min(scores.values())

    def test_prefers_local_averaging_on_smooth_data(self):
        x, y = ramp_problem(40)
        best, scores = select_bandwidth(x, y)
        med = median_pairwise_distance(x)
        assert best < med  # the raw median heuristic oversmooths here
        assert scores[best] < scores[med * 1.0]

    def test_selected_bandwidth_beats_median_on_held_out_data(self):
        x, y = ramp_problem(40)
        q = x[:-1] + np.diff(x, axis=0) / 2.0  # midpoints
        qt = np.column_stack([q[:, 0], -2.0 * q[:, 0]])
        best, _ = select_bandwidth(x, y)
        mse_sel = np.mean((predict_kde(fit_kde(x, y, bandwidth=best), q) - qt) ** 2)
        mse_med = np.mean((predict_kde(fit_kde(x, y), q) - qt) ** 2)
        assert mse_sel <= mse_med

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        features = rng.normal(size=(25, 4))
        targets = rng.normal(size=(25, 2))
        assert select_bandwidth(features, targets) == select_bandwidth(features, targets)

    def test_identical_features_still_return_positive_bandwidth(self):
        best, scores = select_bandwidth(np.ones((6, 3)), np.arange(12.0).reshape(6, 2))
        assert best > 0.0
        assert len(scores) == len(DEFAULT_BANDWIDTH_FACTORS)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError, match="two samples"):
            select_bandwidth(np.ones((1, 3)), np.ones((1, 2)))

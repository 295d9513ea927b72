"""FIR smoothing, threshold crossing, error statistics, FPR sweep."""

import numpy as np
import pytest

from thermotob.detector import ScoreSeries
from thermotob.tob import (
    DEFAULT_FILTER_LENGTH,
    DEFAULT_GAMMA,
    FirFilter,
    default_sweep_grid,
    error_stats,
    estimate_tob,
    fir_smooth,
    fpr_sweep,
    outcome_report,
    tob_error,
)


def _series(values, rate=8.33, vid=""):
    return ScoreSeries(scores=np.asarray(values, float), frame_rate=rate, video_id=vid)


class TestFir:
    def test_defaults(self):
        filt = FirFilter(DEFAULT_FILTER_LENGTH)
        assert filt.length == 25
        assert np.allclose(filt.coefficients, 1.0 / 25.0)
        assert filt.coefficients.sum() == pytest.approx(1.0)

    def test_manual_oracle_k3(self):
        out = fir_smooth(_series([0.0, 1.0, 1.0, 1.0, 0.0]), 3)
        assert np.allclose(out.scores, [0.0, 1 / 3, 2 / 3, 1.0, 2 / 3])

    def test_zero_initial_conditions(self):
        # warm-up divides by K, not by the number of terms seen
        out = fir_smooth(_series([1.0, 1.0]), 4)
        assert np.allclose(out.scores, [0.25, 0.5])

    def test_identity_when_k1(self):
        values = np.linspace(0, 1, 10)
        out = fir_smooth(_series(values), 1)
        assert np.array_equal(out.scores, values)

    def test_length_validation(self):
        with pytest.raises(ValueError):
            FirFilter(0)
        with pytest.raises(ValueError):
            fir_smooth(_series([0.5]), 0)

    def test_direct_convolution_agreement(self):
        rng = np.random.default_rng(0)
        scores = rng.uniform(0, 1, 300)
        out = fir_smooth(_series(scores), 25)
        n = len(scores)
        expected = np.empty(n)
        for i in range(n):
            acc = 0.0
            for j in range(25):
                if i - j >= 0:
                    acc += scores[i - j]
            expected[i] = acc / 25.0
        assert np.allclose(out.scores, expected, atol=1e-12, rtol=0)


class TestEstimate:
    def test_floor_arithmetic(self):
        scores = np.zeros(300)
        scores[250:] = 0.95
        est = estimate_tob(fir_smooth(_series(scores, rate=8.33), 1), 0.9)
        assert est.found
        assert est.n_birth == 250
        assert est.t_birth_s == 30  # floor(250 / 8.33)

    def test_first_crossing_wins(self):
        series = _series([0.0, 0.91, 0.2, 0.95], rate=1.0)
        est = estimate_tob(series, 0.9)
        assert est.n_birth == 1

    def test_threshold_inclusive(self):
        est = estimate_tob(_series([0.5, 0.9], rate=1.0), 0.9)
        assert est.found and est.n_birth == 1

    def test_not_found(self):
        est = estimate_tob(_series([0.1, 0.5, 0.89], rate=1.0), 0.9)
        assert not est.found
        assert est.n_birth is None
        assert est.t_birth_s is None

    def test_gamma_domain(self):
        series = _series([0.5], rate=1.0)
        with pytest.raises(ValueError):
            estimate_tob(series, 0.0)
        with pytest.raises(ValueError):
            estimate_tob(series, 1.5)
        assert estimate_tob(series, 1.0).found is False

    def test_error_signed(self):
        scores = np.zeros(100)
        scores[42:] = 1.0
        est = estimate_tob(_series(scores, rate=1.0), 0.9)
        assert tob_error(est, 40) == 2
        assert tob_error(est, 45) == -3

    def test_error_requires_found(self):
        est = estimate_tob(_series([0.0], rate=1.0), 0.9)
        with pytest.raises(ValueError):
            tob_error(est, 10)


class TestErrorStats:
    def test_quartile_oracle(self):
        stats = error_stats([1, -2, 3, -4], found_count=4, total=5)
        assert stats.q1 == pytest.approx(1.75)
        assert stats.q2 == pytest.approx(2.5)
        assert stats.q3 == pytest.approx(3.25)
        assert stats.mean == pytest.approx(2.5)
        assert stats.found_fraction == pytest.approx(0.8)

    def test_single_error(self):
        stats = error_stats([7], found_count=1, total=1)
        assert stats.q1 == stats.q2 == stats.q3 == 7.0

    def test_validation(self):
        with pytest.raises(ValueError):
            error_stats([], found_count=0, total=0)
        with pytest.raises(ValueError):
            error_stats([1], found_count=3, total=2)


class TestSweep:
    def test_brute_force_agreement(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(0, 1, 400)
        labels = rng.integers(0, 2, 400)
        grid = (0.2, 0.5, 0.8)
        result = fpr_sweep(scores, labels, grid)
        for point, gamma in zip(result.points, grid):
            fp = np.sum((scores >= gamma) & (labels == 0))
            tn = np.sum((scores < gamma) & (labels == 0))
            assert point.gamma == gamma
            assert point.fpr == pytest.approx(fp / (fp + tn))
        assert not result.degenerate

    def test_monotone_nonincreasing(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(0, 1, 1000)
        labels = rng.integers(0, 2, 1000)
        result = fpr_sweep(scores, labels, sorted(default_sweep_grid()))
        fprs = [p.fpr for p in result.points]
        assert all(a >= b - 1e-15 for a, b in zip(fprs, fprs[1:]))

    def test_all_negative_corpus_caps_at_one(self):
        scores = np.array([0.3, 0.6, 0.9])
        labels = np.zeros(3, dtype=int)
        result = fpr_sweep(scores, labels, (0.0, 0.5))
        assert result.points[0].fpr == 1.0  # threshold 0 flags everything
        assert not result.degenerate

    def test_no_negatives_is_degenerate(self):
        result = fpr_sweep(np.array([0.5, 0.7]), np.array([1, 1]), (0.5,))
        assert result.degenerate
        assert result.points[0].fpr == 0.0

    def test_grid_must_ascend(self):
        with pytest.raises(ValueError):
            fpr_sweep(np.array([0.5]), np.array([0]), (0.9, 0.5))

    def test_default_grid(self):
        grid = default_sweep_grid()
        assert grid[0] == pytest.approx(0.10)
        assert grid[-1] == pytest.approx(0.99)
        assert 0.9 in grid
        assert len(grid) == 90
        assert list(grid) == sorted(grid)


class TestComparison:
    def test_duplicate_variants_give_identical_rows(self, small_scene):
        from thermotob.tob import compare_normalizations

        outcomes = compare_normalizations(
            [small_scene.video],
            [small_scene.track],
            variants=("maxmin", "maxmin"),
            video_ids=["v0"],
        )
        assert len(outcomes) == 2
        a, b = (outcome_report(oc) for oc in outcomes)
        assert a == b

    def test_report_shape(self, small_scene, comparison):
        report = outcome_report(comparison.outcomes[0])
        assert set(report) == {
            "variant", "per_video", "q1", "q2", "q3", "mean", "found_fraction"
        }
        row = report["per_video"][0]
        assert set(row) == {"id", "t_hat", "t_ann", "err"}

    def test_unknown_variant_rejected(self, small_scene):
        from thermotob.tob import compare_normalizations

        with pytest.raises(ValueError):
            compare_normalizations(
                [small_scene.video], [small_scene.track], variants=("median",)
            )

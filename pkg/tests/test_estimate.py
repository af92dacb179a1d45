"""Tests for point estimation and randomization inference."""

from __future__ import annotations

import math

import numpy as np
import pytest

from gendid.assumptions import build_f, enumerate_theta, exposure_average
from gendid.covariance import build_m
from gendid.didmat import build_system
from gendid.errors import (
    CovarianceParamError,
    DegenerateDesignError,
    DimensionError,
)
from gendid.estimate import (
    back_transform,
    estimate_only,
    permutation_p,
    permutation_test,
    plug_in_variance,
    point_estimate,
)
from gendid.panel import AdoptionPattern, PanelData
from gendid.solver import solve_min_variance


@pytest.fixture(scope="module")
def toy_solution():
    pattern = AdoptionPattern(2, 3, (2, 3))
    system = build_system(pattern)
    fmat = build_f("S5", pattern)
    cov = build_m("independent", n_units=2, n_periods=3)
    return solve_min_variance(system, fmat, np.array([1.0]), cov)


class TestPointEstimate:
    def test_recovers_constant_effect(self, toy_solution, toy_pattern, panel_factory):
        panel = panel_factory(toy_pattern, theta=lambda i, j: 0.7)
        assert point_estimate(toy_solution, panel) == pytest.approx(0.7, abs=1e-12)

    def test_nuisance_effects_cancel(self, toy_solution, toy_pattern, panel_factory):
        rng = np.random.default_rng(2)
        panel = panel_factory(
            toy_pattern,
            theta=lambda i, j: 0.0,
            unit_effects=rng.normal(size=2) * 50,
            period_effects=rng.normal(size=3) * 50,
        )
        assert point_estimate(toy_solution, panel) == pytest.approx(0.0, abs=1e-9)

    def test_dimension_mismatch(self, toy_solution):
        pattern = AdoptionPattern(3, 3, (2, 2, 3))
        panel = PanelData(pattern, np.zeros((3, 3)), ("a", "b", "c"))
        with pytest.raises(DimensionError):
            point_estimate(toy_solution, panel)

    def test_estimate_only(self, toy_solution, toy_pattern, panel_factory):
        panel = panel_factory(toy_pattern, theta=lambda i, j: -0.3)
        res = estimate_only(toy_solution, panel)
        assert res.point == pytest.approx(-0.3, abs=1e-12)
        assert res.back_transformed is None
        assert res.perm_p is None

    def test_estimate_only_back_transforms_log_panels(self, toy_solution, toy_pattern):
        y = np.exp(np.array([[0.0, 0.1, 0.2], [0.1, 0.0, 0.3]]))
        panel = PanelData(toy_pattern, np.log(y), ("a", "b"), transform_applied="log")
        res = estimate_only(toy_solution, panel)
        assert res.back_transformed == pytest.approx(math.exp(res.point))


class TestBackTransform:
    def test_log_and_logit_exponentiate(self):
        assert back_transform(0.0, "log") == pytest.approx(1.0)
        assert back_transform(math.log(2.0), "log") == pytest.approx(2.0)
        assert back_transform(1.5, "logit") == pytest.approx(math.exp(1.5))

    def test_identity_passthrough(self):
        assert back_transform(-0.4, "identity") == -0.4

    def test_unknown(self):
        with pytest.raises(ValueError):
            back_transform(1.0, "sqrt")


class TestPermutationP:
    def test_two_sided_counts_magnitudes(self):
        draws = np.array([-3.0, -1.0, 0.5, 2.0])
        assert permutation_p(draws, 1.5, "two") == pytest.approx((1 + 2) / 5)

    def test_left_and_right(self):
        draws = np.array([-2.0, -1.0, 1.0, 2.0])
        assert permutation_p(draws, -1.5, "left") == pytest.approx((1 + 1) / 5)
        assert permutation_p(draws, -1.5, "right") == pytest.approx((1 + 3) / 5)

    def test_never_zero(self):
        draws = np.zeros(99)
        assert permutation_p(draws, 1e9, "two") == pytest.approx(1.0 / 100)

    def test_bad_side(self):
        with pytest.raises(ValueError):
            permutation_p(np.array([0.0]), 0.0, "both")


class TestPermutationTest:
    def test_constant_outcomes_give_p_one(self, toy_solution, toy_pattern):
        panel = PanelData(toy_pattern, np.full((2, 3), 4.2), ("a", "b"))
        res = permutation_test(toy_solution, panel, n_perm=199, seed=11)
        assert res.point == pytest.approx(0.0, abs=1e-12)
        assert res.perm_p == pytest.approx(1.0)

    def test_matches_exhaustive_enumeration(self, toy_pattern, panel_factory):
        """With 2 units there are only two row assignments; p must sit in
        {(1+h)/(P+1)} with h the count of draws at least as extreme."""
        panel = panel_factory(toy_pattern, theta=lambda i, j: 1.0)
        pattern = toy_pattern
        system = build_system(pattern)
        fmat = build_f("S5", pattern)
        cov = build_m("independent", n_units=2, n_periods=3)
        sol = solve_min_variance(system, fmat, np.array([1.0]), cov)
        obs = sol.obs_matrix()
        stats = []
        for perm in ([0, 1], [1, 0]):
            stats.append(float((obs * panel.outcomes[perm]).sum()))
        observed = float((obs * panel.outcomes).sum())
        res = permutation_test(sol, panel, n_perm=500, seed=3, keep_null=True)
        assert res.point == pytest.approx(observed)
        assert set(np.round(res.null_draws, 10)) <= set(
            np.round(stats, 10)
        )
        expected_hits = np.sum(np.abs(res.null_draws) >= abs(observed))
        assert res.perm_p == pytest.approx((1 + expected_hits) / 501)

    def test_detects_large_effect(self, panel_factory):
        pattern = AdoptionPattern.from_times([2, 3, 4, None, None], n_periods=4)
        system = build_system(pattern)
        fmat = build_f("S5", pattern)
        cov = build_m("independent", n_units=5, n_periods=4)
        sol = solve_min_variance(system, fmat, np.array([1.0]), cov)
        rng = np.random.default_rng(9)
        panel = panel_factory(
            pattern, theta=lambda i, j: 5.0, noise_sd=0.1, rng=rng
        )
        res = permutation_test(sol, panel, n_perm=499, seed=21)
        assert res.perm_p < 0.05

    def test_serial_equals_parallel(self, toy_solution, toy_pattern, panel_factory):
        panel = panel_factory(toy_pattern, theta=lambda i, j: 0.4, noise_sd=0.2)
        serial = permutation_test(
            toy_solution, panel, n_perm=200, seed=5, keep_null=True
        )
        parallel = permutation_test(
            toy_solution, panel, n_perm=200, seed=5, keep_null=True, workers=2
        )
        np.testing.assert_array_equal(serial.null_draws, parallel.null_draws)
        assert serial.perm_p == parallel.perm_p

    def test_same_seed_same_draws(self, toy_solution, toy_pattern, panel_factory):
        panel = panel_factory(toy_pattern, theta=lambda i, j: 0.4, noise_sd=0.2)
        a = permutation_test(toy_solution, panel, n_perm=64, seed=8, keep_null=True)
        b = permutation_test(toy_solution, panel, n_perm=64, seed=8, keep_null=True)
        np.testing.assert_array_equal(a.null_draws, b.null_draws)
        c = permutation_test(toy_solution, panel, n_perm=64, seed=9, keep_null=True)
        assert not np.array_equal(a.null_draws, c.null_draws)

    def test_degenerate_design_rejected(self, panel_factory):
        staggered = AdoptionPattern.from_times([2, 3, 3], 3)
        system = build_system(staggered)
        fmat = build_f("S5", staggered)
        cov = build_m("independent", n_units=3, n_periods=3)
        sol = solve_min_variance(system, fmat, np.array([1.0]), cov)
        # same shape, but every unit adopts at once: nothing to permute
        panel = panel_factory(AdoptionPattern(3, 3, (2, 2, 2)))
        with pytest.raises(DegenerateDesignError):
            permutation_test(sol, panel, n_perm=10, seed=1)

    def test_parameter_validation(self, toy_solution, toy_pattern, panel_factory):
        panel = panel_factory(toy_pattern)
        with pytest.raises(ValueError, match="n_perm"):
            permutation_test(toy_solution, panel, n_perm=0, seed=1)
        with pytest.raises(ValueError, match="sided"):
            permutation_test(toy_solution, panel, n_perm=10, seed=1, sided="up")

    def test_sidedness_relationship(self, toy_solution, toy_pattern, panel_factory):
        panel = panel_factory(toy_pattern, theta=lambda i, j: 2.0, noise_sd=0.5)
        left = permutation_test(toy_solution, panel, n_perm=99, seed=2, sided="left")
        right = permutation_test(toy_solution, panel, n_perm=99, seed=2, sided="right")
        # every draw is counted by at least one tail, plus the add-one on both
        assert left.perm_p + right.perm_p >= 1.0


class TestPlugInVariance:
    def test_quadratic_form(self, toy_solution):
        vhat = np.diag(np.arange(1.0, 7.0))
        want = float(
            toy_solution.obs_weights @ vhat @ toy_solution.obs_weights
        )
        assert plug_in_variance(toy_solution, vhat) == pytest.approx(want)

    def test_shape_and_symmetry_checks(self, toy_solution):
        with pytest.raises(DimensionError):
            plug_in_variance(toy_solution, np.eye(4))
        bad = np.eye(6)
        bad[0, 1] = 0.3
        with pytest.raises(CovarianceParamError):
            plug_in_variance(toy_solution, bad)

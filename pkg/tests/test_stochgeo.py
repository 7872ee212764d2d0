"""
Tests for expected interference, threshold solvers, the incomplete gamma
function and the Monte-Carlo interference study.
"""

import math

import numpy as np
import pytest
from scipy import integrate

from config.settings import PUBLISHED_TABLE_I, PUBLISHED_TABLE_II, TABLE_ALPHAS, TABLE_LAMBDAS
from engine.errors import DomainError
from engine.stochgeo import (
    PppParams,
    ThresholdKind,
    ThresholdSpec,
    distance_interference_ratio,
    distance_interference_variance,
    expected_distance_interference,
    expected_total_interference,
    monte_carlo_interference_stats,
    neighbour_interference_ratio,
    nth_neighbour_distance_pdf,
    nth_neighbour_expected_interference,
    nth_neighbour_interference_quadrature,
    resolve_threshold,
    solve_distance_threshold,
    solve_neighbour_threshold,
    upper_incomplete_gamma,
)


class TestPppParams:
    """Parameter validation."""

    @pytest.mark.parametrize("alpha", [2.0, 1.5, -1.0])
    def test_rejects_alpha_at_or_below_two(self, alpha):
        with pytest.raises(DomainError):
            PppParams(0.01, alpha)

    def test_rejects_nonpositive_intensity(self):
        with pytest.raises(DomainError):
            PppParams(0.0, 3.0)


class TestExpectedInterference:
    """Campbell-theorem mean and its distance-truncated form."""

    def test_total_matches_closed_form(self):
        p = PppParams(0.002, 4.0)
        assert expected_total_interference(p) == pytest.approx(math.pi * 0.002 * 2.0, rel=1e-14)

    def test_large_alpha_tends_to_disk_mass(self):
        p = PppParams(0.01, 1e9)
        assert expected_total_interference(p) == pytest.approx(math.pi * 0.01, rel=1e-6)

    def test_distance_ratio_at_reference_distance(self):
        for alpha in TABLE_ALPHAS:
            p = PppParams(0.01, alpha)
            assert distance_interference_ratio(p, 1.0) == pytest.approx((alpha - 2) / alpha, rel=1e-14)

    def test_distance_ratio_is_increasing(self):
        p = PppParams(0.01, 3.5)
        ts = np.linspace(1.0, 100.0, 200)
        ratios = [distance_interference_ratio(p, t) for t in ts]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] < 1.0

    def test_ratio_equals_truncated_over_total(self):
        p = PppParams(0.004, 4.5, 2.0)
        for t in [2.0, 3.0, 7.5]:
            expected = expected_distance_interference(p, t) / expected_total_interference(p)
            assert distance_interference_ratio(p, t) == pytest.approx(expected, rel=1e-12)

    def test_threshold_below_d0_is_rejected(self):
        with pytest.raises(DomainError):
            distance_interference_ratio(PppParams(0.01, 3.0), 0.5)


class TestDistanceThreshold:
    """Smallest integer multiple of d0 reaching the target ratio."""

    @pytest.mark.parametrize("ratio", sorted(PUBLISHED_TABLE_I))
    @pytest.mark.parametrize("alpha", [a for a in TABLE_ALPHAS if a >= 3.5])
    def test_published_cells(self, ratio, alpha):
        expected = PUBLISHED_TABLE_I[ratio][TABLE_ALPHAS.index(alpha)]
        assert solve_distance_threshold(PppParams(0.01, alpha), ratio).distance == expected

    def test_alpha_three(self):
        """Exact inversion at α=3 gives 7, 14 and 34."""
        p = PppParams(0.01, 3.0)
        assert [solve_distance_threshold(p, r).distance for r in (0.90, 0.95, 0.98)] == [7, 14, 34]

    @pytest.mark.parametrize("alpha,ratio,expected", [(5.0, 0.95, 2), (4.0, 0.98, 5)])
    def test_exact_integer_boundaries(self, alpha, ratio, expected):
        spec = solve_distance_threshold(PppParams(0.01, alpha), ratio)
        assert spec.distance == expected
        assert spec.achieved_ratio >= ratio - 1e-12

    def test_result_is_minimal(self):
        for alpha in TABLE_ALPHAS:
            p = PppParams(0.01, alpha)
            for ratio in (0.9, 0.95, 0.98):
                t = solve_distance_threshold(p, ratio).distance
                assert distance_interference_ratio(p, t) >= ratio - 1e-12
                if t > 1:
                    assert distance_interference_ratio(p, t - 1) < ratio - 1e-12

    def test_ratio_below_floor_returns_d0(self):
        spec = solve_distance_threshold(PppParams(0.01, 4.0, 1.5), 0.3)
        assert spec.distance == 1.5

    @pytest.mark.parametrize("ratio", [1.0, 1.2, 0.0, -0.1])
    def test_unreachable_ratio(self, ratio):
        with pytest.raises(DomainError):
            solve_distance_threshold(PppParams(0.01, 4.0), ratio)


class TestIncompleteGamma:
    """Γ(s, x) for negative, zero and positive s."""

    S_GRID = [-2.5, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.5]
    X_GRID = [0.01, 0.1, 1.0, 5.0, 10.0]

    @pytest.mark.parametrize("s", S_GRID)
    @pytest.mark.parametrize("x", X_GRID)
    def test_recurrence_identity(self, s, x):
        lhs = upper_incomplete_gamma(s + 1, x)
        rhs = s * upper_incomplete_gamma(s, x) + x ** s * math.exp(-x)
        assert lhs == pytest.approx(rhs, rel=1e-10)

    @pytest.mark.parametrize("s", [-1.5, -1.0, -0.5, 0.5, 1.5])
    @pytest.mark.parametrize("x", [0.1, 1.0, 5.0])
    def test_quadrature_agreement(self, s, x):
        ref, _ = integrate.quad(lambda t: t ** (s - 1) * math.exp(-t), x, np.inf, epsabs=0, epsrel=1e-12, limit=200)
        assert upper_incomplete_gamma(s, x) == pytest.approx(ref, rel=1e-8)

    def test_positive_s_at_zero_is_complete_gamma(self):
        assert upper_incomplete_gamma(2.5, 0.0) == pytest.approx(math.gamma(2.5), rel=1e-14)

    def test_nonpositive_s_at_zero_diverges(self):
        with pytest.raises(DomainError):
            upper_incomplete_gamma(-0.5, 0.0)

    def test_negative_x_rejected(self):
        with pytest.raises(DomainError):
            upper_incomplete_gamma(1.0, -1.0)


class TestNeighbourDistribution:
    """n-th neighbour distance pdf and expected interference."""

    @pytest.mark.parametrize("lam", [0.002, 0.03])
    @pytest.mark.parametrize("n", range(1, 11))
    def test_pdf_integrates_to_one(self, lam, n):
        p = PppParams(lam, 3.0)
        mode = math.sqrt(n / (lam * math.pi))
        pdf = lambda r: nth_neighbour_distance_pdf(p, n, r)
        total = integrate.quad(pdf, 0, mode, limit=200)[0] + integrate.quad(pdf, mode, np.inf, limit=200)[0]
        assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("lam", [0.002, 0.03])
    @pytest.mark.parametrize("alpha", [3.0, 4.0, 5.5])
    def test_closed_form_matches_quadrature(self, lam, alpha):
        p = PppParams(lam, alpha)
        for n in range(1, 11):
            assert nth_neighbour_expected_interference(p, n) == pytest.approx(
                nth_neighbour_interference_quadrature(p, n), rel=1e-8)

    def test_first_neighbour_share_by_hand(self):
        """λ=0.002, α=3: the nearest interferer carries about 91% of the mean."""
        assert neighbour_interference_ratio(PppParams(0.002, 3.0), 1) == pytest.approx(0.9095, abs=1e-3)

    def test_ratio_tends_to_one(self):
        p = PppParams(0.03, 4.0)
        assert neighbour_interference_ratio(p, 2000) == pytest.approx(1.0, abs=1e-3)
        assert neighbour_interference_ratio(p, 2000) <= 1.0 + 1e-9

    def test_ratio_is_increasing(self):
        p = PppParams(0.01, 3.5)
        ratios = [neighbour_interference_ratio(p, n) for n in range(1, 8)]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))


class TestNeighbourThreshold:
    """Smallest n reaching the target ratio."""

    @pytest.mark.parametrize("lam", TABLE_LAMBDAS)
    def test_published_row(self, lam):
        alphas = [a for a in TABLE_ALPHAS if a >= 3.5]
        row = [solve_neighbour_threshold(PppParams(lam, a), 0.95).neighbour_count for a in alphas]
        assert row == PUBLISHED_TABLE_II[lam][1:]

    def test_alpha_three_column(self):
        """α=3 tail telescopes to x^1.5·Γ(n−½)/(½Γ(n)), giving 2, 3, 7, 12, 18."""
        column = [solve_neighbour_threshold(PppParams(lam, 3.0), 0.95).neighbour_count for lam in TABLE_LAMBDAS]
        assert column == [2, 3, 7, 12, 18]

    def test_result_is_minimal(self):
        p = PppParams(0.03, 3.0)
        spec = solve_neighbour_threshold(p, 0.95)
        n = spec.neighbour_count
        assert neighbour_interference_ratio(p, n) >= 0.95 - 1e-12
        assert neighbour_interference_ratio(p, n - 1) < 0.95

    def test_unreachable_ratio(self):
        with pytest.raises(DomainError):
            solve_neighbour_threshold(PppParams(0.01, 3.0), 1.0)


class TestThresholdSpec:
    """Spec construction, parsing and the auto policy."""

    def test_parse_and_format(self):
        for text in ["distance:4", "neighbour:2", "complete"]:
            assert str(ThresholdSpec.parse(text)) == text

    def test_parse_rejects_garbage(self):
        for text in ["distance", "neighbour:x", "ring:3", "complete:1"]:
            with pytest.raises(DomainError):
                ThresholdSpec.parse(text)

    def test_distance_below_d0_rejected(self):
        with pytest.raises(DomainError):
            ThresholdSpec.for_distance(0.5)

    def test_neighbour_count_must_be_positive(self):
        with pytest.raises(DomainError):
            ThresholdSpec.for_neighbours(0)

    def test_target_ratio_range(self):
        with pytest.raises(DomainError):
            ThresholdSpec.for_neighbours(2, target_ratio=1.0)

    def test_resolve_dispatches_to_solvers(self):
        p = PppParams(0.004, 3.5)
        assert resolve_threshold("distance", p, 0.95) == solve_distance_threshold(p, 0.95)
        assert resolve_threshold(ThresholdKind.NEIGHBOUR, p, 0.95) == solve_neighbour_threshold(p, 0.95)
        assert resolve_threshold("complete", p, 0.95).kind == ThresholdKind.COMPLETE


class TestMonteCarlo:
    """Typical-receiver statistics against the Campbell moments."""

    def test_deterministic_per_seed(self):
        p = PppParams(0.01, 4.0)
        spec = ThresholdSpec.for_neighbours(2)
        a = monte_carlo_interference_stats(p, spec, trials=200, seed=3)
        b = monte_carlo_interference_stats(p, spec, trials=200, seed=3)
        assert a == b

    def test_single_trial_has_zero_variance(self):
        stats = monte_carlo_interference_stats(PppParams(0.01, 4.0), ThresholdSpec.complete(), trials=1, seed=0)
        assert stats.variance == 0.0
        assert stats.sample_count == 1

    def test_distance_rule_mean_and_variance(self):
        p = PppParams(0.01, 4.0)
        spec = solve_distance_threshold(p, 0.95)
        stats = monte_carlo_interference_stats(p, spec, trials=5000, seed=1)
        assert abs(stats.mean - expected_distance_interference(p, spec.distance)) < 5 * stats.standard_error
        assert stats.variance == pytest.approx(distance_interference_variance(p, spec.distance), rel=0.35)

    def test_neighbour_rule_with_huge_n_is_complete(self):
        p = PppParams(0.005, 3.5)
        full = monte_carlo_interference_stats(p, ThresholdSpec.complete(), trials=50, seed=9)
        every = monte_carlo_interference_stats(p, ThresholdSpec.for_neighbours(10000), trials=50, seed=9)
        assert every.mean == pytest.approx(full.mean, rel=1e-12)
        assert every.mean_fraction == pytest.approx(1.0, rel=1e-12)

    def test_dense_network_variances_are_small(self):
        p = PppParams(0.03, 3.0)
        for spec in (solve_distance_threshold(p, 0.95), solve_neighbour_threshold(p, 0.95)):
            assert monte_carlo_interference_stats(p, spec, trials=2000, seed=2).variance < 0.5

    def test_sparse_network_rules_share_variance(self):
        """At λ=0.002, α=5 both rules keep the in-disk interferers, so the variances are close."""
        p = PppParams(0.002, 5.0)
        var_d = monte_carlo_interference_stats(p, solve_distance_threshold(p, 0.95), trials=5000, seed=4).variance
        var_n = monte_carlo_interference_stats(p, solve_neighbour_threshold(p, 0.95), trials=5000, seed=4).variance
        assert 0.5 < var_d / var_n < 2.0

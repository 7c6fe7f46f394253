"""Tests for the Renyi-DP accountant and noise calibration."""

import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent))

from privdiff import accountant
from privdiff.accountant import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_SIGMA_MIN,
    AccountantQuery,
    BoundKind,
    DpBudget,
    Mode,
    Tracking,
    calibrate_flip_prob,
    calibrate_sigma,
    diameter_degree_threshold,
    diameter_projection,
    diameter_uniform_threshold,
    evaluate_bound,
    flip_dp_epsilon,
    g_alpha,
    rdp_bound_asymptotic,
    rdp_bound_composition,
    rdp_bound_diameter,
    rdp_bound_gaussian,
    rdp_bound_personalized,
    rdp_bound_standard,
    rdp_to_dp,
    rho_diff,
    rr_rdp,
    wasserstein_tau,
)
from privdiff.engine import DiffusionSchedule, ppr_schedule
from privdiff.errors import InfeasibleBudgetError
from tests.stubs.graph_stubs import star_graph

FAST_SCHEDULE = DiffusionSchedule.constant(0.8, 0.0, 0.2)


def fast_query(K: int = 100, **kwargs) -> AccountantQuery:
    """Query with gamma = (0.8, 0, 0.2), eta = 1e-5, alpha = 2, sigma = 0.01."""
    params = dict(alpha=2.0, sigma=0.01, K=K)
    params.update(kwargs)
    return AccountantQuery.for_schedule(FAST_SCHEDULE, 1e-5, **params)


def random_queries(count: int, seed: int, K_range=(2, 200)):
    """Random (schedule, eta, alpha, sigma, K) tuples over the supported ranges."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield (
            ppr_schedule(rng.uniform(0.5, 0.95)),
            10 ** rng.uniform(-10, -4),
            rng.uniform(1.1, 64.0),
            10 ** rng.uniform(-3, 0),
            int(rng.integers(K_range[0], K_range[1] + 1)),
        )


class TestLaplaceDivergence:
    """Test g_alpha."""

    def test_closed_form_value(self):
        """Test g_2(1, 1) = ln(2e/3 + e^-2/3)."""
        expected = math.log(2 * math.e / 3 + math.exp(-2) / 3)
        assert g_alpha(2.0, 1.0, 1.0) == pytest.approx(expected, rel=1e-12)
        assert g_alpha(2.0, 1.0, 1.0) == pytest.approx(0.619124, abs=1e-6)

    def test_zero_shift(self):
        """Test that no shift means no divergence."""
        assert g_alpha(3.0, 0.5, 0.0) == 0.0

    def test_monotone_in_shift(self):
        """Test that g grows with rho and shrinks with sigma."""
        values = [g_alpha(4.0, 1.0, rho) for rho in (0.1, 0.5, 1.0, 2.0)]
        assert values == sorted(values)
        assert g_alpha(4.0, 2.0, 1.0) < g_alpha(4.0, 1.0, 1.0)

    def test_quadratic_regime(self):
        """Test g ~ alpha t^2 / 2 for small t = rho / sigma."""
        assert g_alpha(2.0, 0.01, 3.2e-5) == pytest.approx((3.2e-3) ** 2, rel=5e-3)

    def test_small_shift_precision(self):
        """Test g_2(1, t) against t^2 - t^3/3 - t^4/4 for tiny t."""
        for t in (1e-8, 1e-7, 1e-6, 1e-5):
            expected = t ** 2 - t ** 3 / 3 - t ** 4 / 4
            assert g_alpha(2.0, 1.0, t) == pytest.approx(expected, rel=1e-12)

    def test_small_shift_quadratic_limit(self):
        """Test g / t^2 -> alpha / 2 for every order as t -> 0."""
        for alpha in (1.01, 1.5, 4.0, 64.0, 256.0):
            assert g_alpha(alpha, 1.0, 1e-9) / 1e-18 == pytest.approx(alpha / 2, rel=1e-7)

    def test_branch_continuity(self):
        """Test that the value is continuous where the evaluation switches method."""
        for alpha in (1.5, 2.0, 32.0):
            edge = 0.5 / alpha
            below = g_alpha(alpha, 1.0, edge * (1 - 1e-12))
            above = g_alpha(alpha, 1.0, edge * (1 + 1e-12))
            assert above == pytest.approx(below, rel=1e-9)

    def test_large_shift_continuity(self):
        """Test continuity where expm1 hands over to logsumexp."""
        edge = 700.0
        below = g_alpha(2.0, 1.0, edge * (1 - 1e-12))
        above = g_alpha(2.0, 1.0, edge * (1 + 1e-12))
        assert above == pytest.approx(below, rel=1e-9)
        assert below == pytest.approx(edge + math.log(2 / 3), rel=1e-9)

    def test_pure_dp_limit(self):
        """Test that g never exceeds the pure-DP level rho / sigma."""
        for alpha in (1.5, 8.0, 256.0):
            assert g_alpha(alpha, 1.0, 3.0) <= 3.0 + 1e-12

    def test_overflow_is_finite_or_inf(self):
        """Test that huge exponents do not produce NaN."""
        value = g_alpha(256.0, 1e-6, 10.0)
        assert not math.isnan(value)
        assert value > 0

    def test_domain(self):
        """Test rejection of out-of-domain arguments."""
        with pytest.raises(ValueError):
            g_alpha(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            g_alpha(2.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            g_alpha(2.0, 1.0, -1.0)


class TestDistortion:
    """Test rho_diff and the tracked distance."""

    def test_ppr_rho_diff(self):
        """Test rho_diff for PPR at beta = 0.8, eta = 1e-5."""
        assert rho_diff(ppr_schedule(0.8), 1e-5) == pytest.approx(1.6e-5)

    def test_fast_schedule_rho_diff(self):
        """Test rho_diff = max(4 gamma1, 2 gamma_max) eta."""
        assert rho_diff(FAST_SCHEDULE, 1e-5) == pytest.approx(3.2e-5)

    def test_wasserstein_recursion(self):
        """Test w_3 = 1.75 at rho = 1, gamma = 0.5."""
        assert wasserstein_tau(1.0, 0.5, 0) == 0.0
        assert wasserstein_tau(1.0, 0.5, 2) == pytest.approx(1.5)
        assert wasserstein_tau(1.0, 0.5, 3) == pytest.approx(1.75)
        taus = np.arange(10)
        w = wasserstein_tau(1.0, 0.5, taus)
        assert np.allclose(w[1:], 0.5 * w[:-1] + 1.0)

    def test_tracked_distance_vs_diameter(self):
        """Test w_inf / D = 8 / 667966 at beta = 0.8, independent of eta."""
        for eta in (1e-7, 1e-5):
            w_inf = rho_diff(ppr_schedule(0.8), eta) / (1 - 0.8)
            assert w_inf / diameter_degree_threshold(667966, eta) == pytest.approx(8 / 667966)

    def test_diameters(self):
        """Test the diameter constructors."""
        g = star_graph(3)
        assert diameter_projection() == 1.0
        assert diameter_degree_threshold(g, 0.5) == pytest.approx(3.0)
        assert diameter_uniform_threshold(g, 0.5) == pytest.approx(2.0)


class TestQuery:
    """Test AccountantQuery validation."""

    def test_invalid_fields(self):
        """Test each rejected field."""
        base = dict(alpha=2.0, sigma=1.0, K=10, rho_diff=0.1, gamma_max=0.5)
        for key, value in (('alpha', 1.0), ('sigma', 0.0), ('K', 0), ('K', 2.5),
                           ('rho_diff', -1.0), ('gamma_max', 1.0)):
            with pytest.raises(ValueError):
                AccountantQuery(**{**base, key: value})

    def test_tracking_validation(self):
        """Test diameter tracking needs a positive diameter."""
        with pytest.raises(ValueError):
            Tracking(kind='diameter')
        with pytest.raises(ValueError):
            Tracking(kind='wasserstein', diameter=1.0)
        assert Tracking.with_diameter(2).diameter == 2.0


class TestBounds:
    """Test the RDP bounds."""

    def test_composition_linear(self):
        """Test that composition grows exactly linearly in K."""
        assert rdp_bound_composition(fast_query(200)) == pytest.approx(
            2 * rdp_bound_composition(fast_query(100)), rel=1e-12)

    def test_standard_beats_composition(self):
        """Test the composition/standard ratio at K = 100."""
        q = fast_query(100)
        epsilon, tau = rdp_bound_standard(q)
        assert rdp_bound_composition(q) / epsilon > 5
        assert 0 <= tau < 100

    def test_standard_does_not_diverge(self):
        """Test that the bound saturates in K."""
        eps_400, _ = rdp_bound_standard(fast_query(400))
        eps_500, _ = rdp_bound_standard(fast_query(500))
        assert math.isfinite(eps_500)
        assert abs(eps_500 - eps_400) < 1e-3 * eps_400

    def test_standard_below_composition_for_all_K(self):
        """Test standard <= composition since tau = 0 is in the scan."""
        for K in (1, 2, 5, 20, 100):
            q = fast_query(K)
            assert rdp_bound_standard(q)[0] <= rdp_bound_composition(q) * (1 + 1e-12)

    def test_asymptotic_envelope(self):
        """Test that the closed-form envelope dominates the scan."""
        for K in (1, 10, 50, 200):
            q = fast_query(K)
            bound, tau = rdp_bound_asymptotic(q)
            assert rdp_bound_standard(q)[0] <= bound
            assert 0 <= tau <= K - 1

    def test_personalized_single_step(self):
        """Test that a personalized single step leaks nothing."""
        assert rdp_bound_personalized(fast_query(1)) == (0.0, 0)

    def test_personalized_below_standard(self):
        """Test that the personalized scan never exceeds the standard one."""
        for K in (2, 10, 100):
            q = fast_query(K)
            personalized, tau = rdp_bound_personalized(q)
            assert personalized <= rdp_bound_standard(q)[0]
            assert tau >= 1

    @pytest.mark.parametrize('K', [2, 5, 50, 200])
    def test_personalized_is_standard_without_first_step(self, K):
        """Test personalized = min over tau >= 1 of the standard scan terms."""
        for q in (fast_query(K), AccountantQuery.for_schedule(ppr_schedule(0.8), 1e-6, 4.0, 1e-3, K)):
            terms = [
                (K - tau) * g_alpha(q.alpha, q.sigma, q.rho_diff)
                + g_alpha(q.alpha, q.sigma,
                          wasserstein_tau(q.rho_diff, q.gamma_max, tau) * q.gamma_max ** (K - tau))
                for tau in range(1, K)
            ]
            assert rdp_bound_personalized(q)[0] == pytest.approx(min(terms), rel=1e-12)

    @pytest.mark.parametrize('kind', ['standard', 'personalized', 'composition', 'gaussian'])
    def test_scale_invariance(self, kind):
        """Test that scaling sigma and eta together leaves every bound unchanged."""
        for sched, eta, alpha, sigma, K in random_queries(100, seed=11):
            base = evaluate_bound(kind, AccountantQuery.for_schedule(sched, eta, alpha, sigma, K))[0]
            for c in (0.1, 10.0):
                scaled = AccountantQuery.for_schedule(sched, c * eta, alpha, c * sigma, K)
                assert evaluate_bound(kind, scaled)[0] == pytest.approx(base, rel=1e-12)

    def test_mode_forced_by_bound(self):
        """Test that standard ignores a personalized query mode."""
        q = fast_query(1, mode=Mode.PERSONALIZED)
        assert rdp_bound_standard(q)[0] > 0

    def test_ties_report_largest_tau(self):
        """Test tie-breaking when rho_diff = 0."""
        q = AccountantQuery(alpha=2.0, sigma=1.0, K=10, rho_diff=0.0, gamma_max=0.5)
        assert rdp_bound_standard(q) == (0.0, 9)

    def test_diameter_bounds(self):
        """Test that a large fixed diameter is looser than tracking."""
        q = fast_query(100)
        projected = replace(q, tracking=Tracking.with_diameter(diameter_projection()))
        assert rdp_bound_diameter(projected)[0] >= rdp_bound_standard(q)[0]
        with pytest.raises(ValueError):
            rdp_bound_diameter(q)

    def test_gaussian_single_step(self):
        """Test K = 1 reduces to the Gaussian mechanism."""
        q = AccountantQuery(alpha=3.0, sigma=0.5, K=1, rho_diff=0.2, gamma_max=0.5)
        epsilon, tau = rdp_bound_gaussian(q)
        assert epsilon == pytest.approx(3.0 * 0.2 ** 2 / (2 * 0.5 ** 2))
        assert tau == 0

    def test_gaussian_scaling(self):
        """Test eps(2 sigma) = eps(sigma) / 4."""
        q = fast_query(50)
        assert rdp_bound_gaussian(replace(q, sigma=0.02))[0] == pytest.approx(
            rdp_bound_gaussian(q)[0] / 4, rel=1e-12)

    def test_evaluate_dispatch(self):
        """Test that composition reports no tau."""
        assert evaluate_bound('composition', fast_query(10))[1] is None
        assert evaluate_bound(BoundKind.STANDARD, fast_query(10)) == rdp_bound_standard(fast_query(10))


class TestConversion:
    """Test RDP to DP conversion."""

    def test_constant_curve(self):
        """Test that a zero curve leaves the conversion term at the largest alpha."""
        epsilon, alpha = rdp_to_dp(lambda a: 0.0, math.exp(-9))
        assert alpha == 256.0
        assert epsilon == pytest.approx(9 / 255)

    def test_grid_containment(self):
        """Test that the result is no worse than the alpha = 2 value."""
        delta = 1e-5
        epsilon, _ = rdp_to_dp(lambda a: g_alpha(a, 1.0, 1.0), delta)
        assert epsilon <= g_alpha(2.0, 1.0, 1.0) + math.log(1 / delta)

    def test_invalid_inputs(self):
        """Test rejection of bad delta and grids."""
        with pytest.raises(ValueError):
            rdp_to_dp(lambda a: 0.0, 1.5)
        with pytest.raises(ValueError):
            rdp_to_dp(lambda a: 0.0, 0.1, [])
        with pytest.raises(ValueError):
            rdp_to_dp(lambda a: 0.0, 0.1, [0.5, 2.0])


class TestCalibration:
    """Test sigma calibration."""

    def test_rdp_target(self):
        """Test calibration to a raw RDP budget at fixed alpha."""
        q = fast_query(100)
        sigma = calibrate_sigma(1e-3, q, BoundKind.STANDARD)
        assert rdp_bound_standard(replace(q, sigma=sigma))[0] <= 1e-3
        assert rdp_bound_standard(replace(q, sigma=sigma * (1 - 1e-4)))[0] > 1e-3

    @pytest.mark.parametrize('kind', ['standard', 'personalized', 'composition', 'gaussian'])
    def test_round_trip(self, kind):
        """Test that accounting at the calibrated sigma meets the target tightly."""
        target = DpBudget(eps_dp=1.0, delta=1e-6)
        q = AccountantQuery.for_schedule(ppr_schedule(0.8), 1e-5, 2.0, 1.0, 100)
        result = accountant.calibrate(target, q, kind)
        record = accountant.account(replace(q, sigma=result.sigma, alpha=2.0), kind, target.delta)
        assert result.achieved_epsilon <= target.eps_dp
        assert result.achieved_epsilon >= 0.99 * target.eps_dp
        assert record.epsilon_dp == pytest.approx(result.achieved_epsilon, rel=1e-12)

    def test_round_trip_random_queries(self):
        """Test that 100 random DP targets are met or reported infeasible."""
        rng = np.random.default_rng(5)
        delta = 1e-6
        floor = math.log(1 / delta) / (max(DEFAULT_ALPHA_GRID) - 1)
        for sched, eta, _, _, K in random_queries(100, seed=5, K_range=(10, 200)):
            eps = rng.uniform(0.01, 3.0)
            q = AccountantQuery.for_schedule(sched, eta, 2.0, 1.0, K)
            if eps <= floor:
                with pytest.raises(InfeasibleBudgetError):
                    accountant.calibrate(DpBudget(eps, delta), q)
                continue
            result = accountant.calibrate(DpBudget(eps, delta), q)
            assert result.achieved_epsilon <= eps * (1 + 1e-6)
            assert result.sigma > 0

    def test_monotone_in_target(self):
        """Test that a larger budget never needs more noise."""
        q = AccountantQuery.for_schedule(ppr_schedule(0.8), 1e-5, 2.0, 1.0, 100)
        sigmas = [calibrate_sigma(DpBudget(eps, 1e-6), q) for eps in (0.25, 0.5, 1.0, 2.0)]
        assert sigmas == sorted(sigmas, reverse=True)

    def test_zero_distortion(self):
        """Test that rho_diff = 0 returns the minimal sigma."""
        q = AccountantQuery(alpha=2.0, sigma=1.0, K=10, rho_diff=0.0, gamma_max=0.5)
        assert calibrate_sigma(DpBudget(1.0, 1e-6), q) == DEFAULT_SIGMA_MIN

    def test_infeasible_budget(self):
        """Test that an epsilon below every conversion term is infeasible."""
        q = AccountantQuery.for_schedule(ppr_schedule(0.8), 1e-5, 2.0, 1.0, 100)
        with pytest.raises(InfeasibleBudgetError):
            calibrate_sigma(DpBudget(0.01, 1e-6), q)

    @pytest.mark.parametrize('eps', [0.1, 0.3, 1.0])
    def test_tracking_needs_less_noise(self, eps):
        """Test sigma_composition / sigma_standard >= 5 at matched DP budgets."""
        q = AccountantQuery.for_schedule(ppr_schedule(0.8), 1e-5, 2.0, 1.0, 100)
        budget = DpBudget(eps, 1e-6)
        composition = calibrate_sigma(budget, q, BoundKind.COMPOSITION)
        standard = calibrate_sigma(budget, q, BoundKind.STANDARD)
        assert composition / standard >= 5

    def test_account_record(self):
        """Test the fields of an accounting record."""
        q = fast_query(10)
        record = accountant.account(q, BoundKind.STANDARD)
        assert record.epsilon_dp is None
        assert record.inputs['K'] == 10
        assert record.to_dict()['bound_kind'] == 'standard'


class TestRandomizedResponse:
    """Test the edge-flipping accountant."""

    def test_known_value(self):
        """Test rr at p = 0.5, alpha = 2."""
        assert rr_rdp(0.5, 2.0) == pytest.approx(math.log(0.75 ** 2 / 0.25 + 0.25 ** 2 / 0.75))
        assert rr_rdp(0.5, 2.0) == pytest.approx(0.8473, abs=1e-4)

    def test_pure_noise(self):
        """Test that p = 1 leaks nothing."""
        assert rr_rdp(1.0, 8.0) == 0.0

    def test_monotone_in_p(self):
        """Test that more redrawing means less leakage."""
        values = [rr_rdp(p, 4.0) for p in (0.05, 0.2, 0.5, 0.9)]
        assert values == sorted(values, reverse=True)

    def test_domain(self):
        """Test rejection of p outside (0, 1]."""
        with pytest.raises(ValueError):
            rr_rdp(0.0, 2.0)
        with pytest.raises(ValueError):
            rr_rdp(1.5, 2.0)

    def test_calibration_round_trip(self):
        """Test that the calibrated p meets the target."""
        target = DpBudget(1.0, 1e-6)
        p = calibrate_flip_prob(target)
        assert flip_dp_epsilon(p, target.delta)[0] <= target.eps_dp
        assert flip_dp_epsilon(p * (1 - 1e-3), target.delta)[0] > target.eps_dp
        result = accountant.calibrate_flip(target)
        assert result.p == p
        assert result.bound_kind == 'randomized_response'

    def test_calibration_infeasible(self):
        """Test that even p = 1 fails when the delta term exceeds epsilon."""
        with pytest.raises(InfeasibleBudgetError):
            calibrate_flip_prob(DpBudget(0.01, 1e-6), DEFAULT_ALPHA_GRID)

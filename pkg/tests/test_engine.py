"""Tests for exact and noisy diffusion."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent))

from privdiff.engine import (
    DiffusionSchedule,
    NoiseKind,
    ThresholdMode,
    ThresholdPolicy,
    apply_threshold,
    diffusion_step,
    postprocess_scores,
    ppr_schedule,
    project_l1_ball,
    run_exact_diffusion,
    run_noisy_diffusion,
    seed_vector,
)
from privdiff.errors import GraphValidationError
from privdiff.graph import EdgeOp, EdgePerturbation, perturb_edge, random_walk_matvec
from privdiff.noise import RngStream
from privdiff.oracles import random_connected_graph
from tests.stubs.graph_stubs import path_graph, preferential_attachment_graph, star_graph


@pytest.fixture
def graph():
    """Power-law test graph."""
    return preferential_attachment_graph(80, 2, seed=5)


class TestDiffusionSchedule:
    """Test schedule construction."""

    def test_ppr_triple(self):
        """Test the lazy-walk PPR coefficients."""
        sched = ppr_schedule(0.8)
        assert sched.triple(1) == pytest.approx((0.4, 0.4, 0.2))
        assert sched.gamma_max == pytest.approx(0.8)
        assert sched.gamma1_max == pytest.approx(0.4)
        assert sched.is_constant

    def test_coefficients_must_sum_to_one(self):
        """Test rejection of non-affine triples."""
        with pytest.raises(ValueError):
            DiffusionSchedule.constant(0.5, 0.5, 0.5)

    def test_contraction_required(self):
        """Test that gamma_max = 1 is rejected."""
        with pytest.raises(ValueError):
            DiffusionSchedule.constant(0.5, 0.5, 0.0)

    def test_explicit_schedule(self):
        """Test per-step coefficients and the step range."""
        sched = DiffusionSchedule.explicit([(0.5, 0.0, 0.5), (0.2, 0.3, 0.5)])
        assert sched.steps == 2
        assert sched.triple(2) == pytest.approx((0.2, 0.3, 0.5))
        assert sched.gamma_max == pytest.approx(0.5)
        with pytest.raises(ValueError):
            sched.triple(3)
        with pytest.raises(ValueError):
            sched.triple(0)

    def test_negative_coefficients_count_in_gamma_max(self):
        """Test that gamma_max uses absolute values."""
        sched = DiffusionSchedule.constant(-0.3, 0.4, 0.9)
        assert sched.gamma_max == pytest.approx(0.7)


class TestThreshold:
    """Test the clipping functions."""

    def test_symmetric_degree(self):
        """Test clipping into [-eta d, eta d]."""
        g = star_graph(3)
        policy = ThresholdPolicy(0.1)
        x = np.array([1.0, -1.0, 0.05, 0.0])
        assert np.allclose(apply_threshold(policy, g, x), [0.3, -0.1, 0.05, 0.0])

    def test_nonnegative_degree(self):
        """Test clipping into [0, eta d]."""
        g = star_graph(3)
        policy = ThresholdPolicy(0.1, ThresholdMode.NONNEGATIVE_DEGREE)
        x = np.array([1.0, -1.0, 0.05, 0.0])
        assert np.allclose(apply_threshold(policy, g, x), [0.3, 0.0, 0.05, 0.0])

    def test_uniform(self):
        """Test degree-free clipping."""
        g = star_graph(3)
        x = np.array([1.0, -1.0, 0.05, 0.0])
        assert np.allclose(apply_threshold(ThresholdPolicy(0.1, 'uniform'), g, x),
                           [0.1, -0.1, 0.05, 0.0])
        assert np.allclose(apply_threshold(ThresholdPolicy(0.1, 'nonnegative_uniform'), g, x),
                           [0.1, 0.0, 0.05, 0.0])

    def test_personalized_seed_unclipped_above(self):
        """Test that the seed coordinate is never clipped from above."""
        g = star_graph(3)
        policy = ThresholdPolicy(0.1, personalized_seed=2)
        x = np.array([1.0, 1.0, 5.0, -1.0])
        assert np.allclose(apply_threshold(policy, g, x), [0.3, 0.1, 5.0, -0.1])

    def test_invalid_eta(self):
        """Test that eta must be positive."""
        with pytest.raises(ValueError):
            ThresholdPolicy(0.0)

    def test_seed_out_of_range(self):
        """Test that an unknown personalized seed is rejected."""
        with pytest.raises(GraphValidationError):
            apply_threshold(ThresholdPolicy(0.1, personalized_seed=9), star_graph(3), np.zeros(4))


class TestProjection:
    """Test the l1-ball projection."""

    def test_two_equal_coordinates(self):
        """Test that [1, 1] projects to [0.5, 0.5]."""
        assert np.allclose(project_l1_ball(np.array([1.0, 1.0])), [0.5, 0.5])

    def test_inside_ball_unchanged(self):
        """Test that points inside the ball are returned as copies."""
        x = np.array([0.2, -0.3])
        y = project_l1_ball(x)
        assert np.array_equal(x, y)
        assert y is not x

    def test_single_survivor(self):
        """Test a projection that zeroes all but one coordinate."""
        assert np.allclose(project_l1_ball(np.array([3.0, -1.0, 0.5])), [1.0, 0.0, 0.0])

    def test_norm_and_signs(self):
        """Test that projections land on the sphere and keep signs."""
        x = np.random.default_rng(0).normal(size=200) * 3
        y = project_l1_ball(x, radius=2.0)
        assert np.abs(y).sum() == pytest.approx(2.0)
        assert np.all(np.sign(y[y != 0]) == np.sign(x[y != 0]))

    def test_invalid_radius(self):
        """Test that the radius must be positive."""
        with pytest.raises(ValueError):
            project_l1_ball(np.ones(2), radius=0.0)


class TestExactDiffusion:
    """Test the noise-free recursion."""

    def test_seed_vector(self):
        """Test uniform seeds over node sets."""
        assert np.allclose(seed_vector(3, [1, 2, 2]), [0.0, 0.5, 0.5])
        with pytest.raises(ValueError):
            seed_vector(3, [])
        with pytest.raises(GraphValidationError):
            seed_vector(3, [3])

    def test_single_step(self, graph):
        """Test phi_k against its definition."""
        sched = DiffusionSchedule.constant(0.5, 0.3, 0.2)
        x = np.random.default_rng(1).random(graph.n)
        s = seed_vector(graph.n, [0])
        expected = 0.5 * random_walk_matvec(graph, x) + 0.3 * x + 0.2 * s
        assert np.allclose(diffusion_step(graph, sched, 1, x, s), expected)

    def test_ppr_stays_stochastic(self, graph):
        """Test that exact PPR keeps a probability vector."""
        x = run_exact_diffusion(graph, ppr_schedule(0.8), seed_vector(graph.n, [3]), 50)
        assert x.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(x >= 0)

    def test_non_stochastic_seed(self, graph):
        """Test that strict mode rejects non-stochastic seeds."""
        s = np.zeros(graph.n)
        s[0] = 2.0
        with pytest.raises(GraphValidationError):
            run_exact_diffusion(graph, ppr_schedule(0.8), s, 5, strict_seed=True)
        run_exact_diffusion(graph, ppr_schedule(0.8), s, 5)

    def test_invalid_steps(self, graph):
        """Test that K must be positive."""
        with pytest.raises(ValueError):
            run_exact_diffusion(graph, ppr_schedule(0.8), seed_vector(graph.n, [0]), 0)


class TestNoisyDiffusion:
    """Test the thresholded noisy recursion."""

    def test_loose_threshold_matches_exact(self, graph):
        """Test that sigma = 0 with a non-binding threshold is exact diffusion."""
        s = seed_vector(graph.n, [0])
        exact = run_exact_diffusion(graph, ppr_schedule(0.8), s, 30)
        result = run_noisy_diffusion(graph, ppr_schedule(0.8), ThresholdPolicy(10.0), s, 30, 0.0)
        assert np.allclose(result.scores, exact, atol=1e-15)
        assert result.stream_ids == []

    def test_deterministic_per_stream(self, graph):
        """Test that identical streams give identical releases."""
        s = seed_vector(graph.n, [0])
        policy = ThresholdPolicy(1e-3, personalized_seed=0)
        a = run_noisy_diffusion(graph, ppr_schedule(0.8), policy, s, 10, 1e-3, rng=RngStream(9, 4))
        b = run_noisy_diffusion(graph, ppr_schedule(0.8), policy, s, 10, 1e-3, rng=RngStream(9, 4))
        c = run_noisy_diffusion(graph, ppr_schedule(0.8), policy, s, 10, 1e-3, rng=RngStream(9, 5))
        assert np.array_equal(a.scores, b.scores)
        assert not np.array_equal(a.scores, c.scores)

    def test_stream_labels(self, graph):
        """Test that every step consumes two sub-streams."""
        s = seed_vector(graph.n, [0])
        result = run_noisy_diffusion(graph, ppr_schedule(0.8), ThresholdPolicy(1e-3), s, 3, 1e-3,
                                     rng=RngStream(1, 2))
        assert result.stream_ids == ["1/2/1/1", "1/2/1/2", "1/2/2/1", "1/2/2/2",
                                     "1/2/3/1", "1/2/3/2"]

    def test_noise_requires_stream(self, graph):
        """Test that positive sigma needs a random stream."""
        with pytest.raises(ValueError):
            run_noisy_diffusion(graph, ppr_schedule(0.8), ThresholdPolicy(1e-3),
                                seed_vector(graph.n, [0]), 3, 0.1)

    def test_negative_sigma(self, graph):
        """Test that sigma must be non-negative."""
        with pytest.raises(ValueError):
            run_noisy_diffusion(graph, ppr_schedule(0.8), ThresholdPolicy(1e-3),
                                seed_vector(graph.n, [0]), 3, -0.1)

    def test_projection_bounds_iterates(self, graph):
        """Test that projected releases lie in the unit l1 ball."""
        result = run_noisy_diffusion(graph, ppr_schedule(0.8), ThresholdPolicy(1e-2),
                                     seed_vector(graph.n, [0]), 20, 0.5,
                                     rng=RngStream(3, 1), project_unit_l1=True)
        assert np.abs(result.scores).sum() <= 1.0 + 1e-9

    def test_gaussian_noise(self, graph):
        """Test that the Gaussian variant runs and differs from Laplace."""
        s = seed_vector(graph.n, [0])
        policy = ThresholdPolicy(1e-3)
        lap = run_noisy_diffusion(graph, ppr_schedule(0.8), policy, s, 5, 1e-2, rng=RngStream(2, 1))
        gau = run_noisy_diffusion(graph, ppr_schedule(0.8), policy, s, 5, 1e-2,
                                  noise_kind=NoiseKind.GAUSSIAN, rng=RngStream(2, 1))
        assert not np.array_equal(lap.scores, gau.scores)

    def test_tight_threshold_keeps_seed_mass(self):
        """Test that a personalized seed survives a vanishing threshold."""
        g = path_graph(4)
        s = seed_vector(g.n, [0])
        policy = ThresholdPolicy(1e-12, ThresholdMode.NONNEGATIVE_DEGREE, personalized_seed=0)
        result = run_noisy_diffusion(g, ppr_schedule(0.5), policy, s, 1, 0.0)
        # f(s) = s, so one lazy PPR step from e_0 on a path
        assert np.allclose(result.scores, [0.25 + 0.5, 0.25, 0.0, 0.0])


SCHEDULE_FAMILIES = [
    ppr_schedule(0.8),
    DiffusionSchedule.constant(0.8, 0.0, 0.2),
    DiffusionSchedule.constant(-0.3, 0.5, 0.8),
]


class TestContraction:
    """Test the Lipschitz properties the accountant relies on."""

    @pytest.mark.parametrize('sched', SCHEDULE_FAMILIES)
    @pytest.mark.parametrize('mode', list(ThresholdMode))
    def test_thresholded_step_contracts(self, graph, sched, mode):
        """Test ||phi(f(x)) - phi(f(y))||_1 <= gamma_max ||x - y||_1 on random pairs."""
        rng = np.random.default_rng(21)
        policy = ThresholdPolicy(1e-2, mode, personalized_seed=0)
        s = seed_vector(graph.n, [0])
        for _ in range(200):
            scale = 10 ** rng.uniform(-4, 0)
            x = rng.uniform(-scale, scale, graph.n)
            y = x + rng.uniform(-scale, scale, graph.n) * (rng.random(graph.n) < 0.3)
            fx = diffusion_step(graph, sched, 1, apply_threshold(policy, graph, x), s)
            fy = diffusion_step(graph, sched, 1, apply_threshold(policy, graph, y), s)
            distance = np.abs(x - y).sum()
            assert np.abs(fx - fy).sum() <= sched.gamma_max * distance + 1e-12

    def test_projection_nonexpansive(self):
        """Test ||P(x) - P(y)||_1 <= ||x - y||_1 for the l1-ball projection."""
        rng = np.random.default_rng(22)
        for _ in range(200):
            n = int(rng.integers(2, 50))
            x = rng.normal(size=n) * rng.uniform(0.1, 3.0)
            y = x + rng.normal(size=n) * rng.uniform(0.01, 1.0)
            radius = rng.uniform(0.2, 2.0)
            gap = np.abs(project_l1_ball(x, radius) - project_l1_ball(y, radius)).sum()
            assert gap <= np.abs(x - y).sum() + 1e-12


class TestPersonalizedFirstStep:
    """Test that the first personalized step does not see edges away from the seed."""

    @pytest.mark.parametrize('mode', list(ThresholdMode))
    def test_first_step_ignores_remote_edges(self, mode):
        """Test identical first steps for every edge change not touching the seed."""
        g = random_connected_graph(25, 0.15, np.random.default_rng(8))
        seed = 3
        sched = ppr_schedule(0.8)
        policy = ThresholdPolicy(1e-4, mode, personalized_seed=seed)
        s = seed_vector(g.n, [seed])
        step = diffusion_step(g, sched, 1, apply_threshold(policy, g, s), s)
        checked = 0
        for u in range(g.n):
            for v in range(u + 1, g.n):
                if seed in (u, v):
                    continue
                if g.has_edge(u, v):
                    if min(g.degrees[u], g.degrees[v]) == 1:
                        continue
                    change = EdgePerturbation(u, v, EdgeOp.REMOVE)
                else:
                    change = EdgePerturbation(u, v, EdgeOp.ADD)
                g_prime = perturb_edge(g, change)
                step_prime = diffusion_step(g_prime, sched, 1,
                                            apply_threshold(policy, g_prime, s), s)
                assert np.array_equal(step, step_prime)
                checked += 1
        assert checked > 100


class TestPostprocess:
    """Test released-score post-processing."""

    def test_clip(self):
        """Test clipping into [0, 1]."""
        assert np.allclose(postprocess_scores(np.array([-0.2, 0.5, 1.3])), [0.0, 0.5, 1.0])

    def test_renormalize(self):
        """Test optional renormalization to a probability vector."""
        y = postprocess_scores(np.array([-0.2, 0.5, 1.5]), renormalize=True)
        assert np.allclose(y, [0.0, 1 / 3, 2 / 3])

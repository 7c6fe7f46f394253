"""Tests for the edge-flipping baseline."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent))

from privdiff.baselines import (
    FlipConfig,
    edge_flipping,
    flip_edges,
    flipped_ppr,
    run_edge_flipping,
)
from privdiff.engine import ppr_schedule, run_exact_diffusion, seed_vector
from privdiff.errors import GraphValidationError, SizeGuardError
from privdiff.noise import RngStream
from tests.stubs.graph_stubs import path_graph, preferential_attachment_graph, random_graph


class TestFlipConfig:
    """Test configuration validation."""

    def test_probability_range(self):
        """Test that p must lie in (0, 1]."""
        FlipConfig(p=1.0)
        with pytest.raises(ValueError):
            FlipConfig(p=0.0)
        with pytest.raises(ValueError):
            FlipConfig(p=1.1)

    def test_node_limit_from_environment(self, monkeypatch):
        """Test that the size guard defaults to PRIVDIFF_NODE_LIMIT."""
        monkeypatch.setenv('PRIVDIFF_NODE_LIMIT', '123')
        assert FlipConfig(p=0.5).node_limit == 123


class TestFlipEdges:
    """Test randomized response on the adjacency matrix."""

    def test_pure_noise_edge_count(self):
        """Test that p = 1 on an empty graph yields Binomial(C(100, 2), 1/2) edges."""
        n = 100
        flipped = flip_edges(n, np.zeros((0, 2), dtype=np.int64), FlipConfig(p=1.0), RngStream(11, 1))
        pairs = n * (n - 1) // 2
        sd = np.sqrt(pairs / 4)
        assert abs(len(flipped) - pairs / 2) <= 3 * sd

    def test_output_canonical(self):
        """Test that flipped edges satisfy u < v without repeats."""
        flipped = flip_edges(30, path_graph(30).edges(), FlipConfig(p=0.5), RngStream(1, 1))
        assert np.all(flipped[:, 0] < flipped[:, 1])
        assert len(np.unique(flipped, axis=0)) == len(flipped)

    def test_tiny_p_keeps_graph(self):
        """Test that a vanishing redraw probability keeps every pair."""
        g = random_graph(60, seed=2)
        flipped = flip_edges(g.n, g.edges(), FlipConfig(p=1e-12), RngStream(0, 1))
        assert np.array_equal(flipped, g.edges())

    def test_seed_pairs_untouched(self):
        """Test that pairs incident to the seed survive pure noise."""
        g = preferential_attachment_graph(50, 2, seed=1)
        seed = 7
        flipped = flip_edges(g.n, g.edges(), FlipConfig(p=1.0, personalized_seed=seed), RngStream(3, 1))
        incident = flipped[(flipped[:, 0] == seed) | (flipped[:, 1] == seed)]
        assert sorted(incident[incident != seed].tolist()) == g.neighbors(seed).tolist()

    @pytest.mark.parametrize('p', [0.2, 0.5, 0.8])
    def test_expected_edge_count(self, p):
        """Test the mean release size (1 - p/2)|E| + (p/2)(C(n, 2) - |E|) over many streams."""
        g = random_graph(60, seed=6)
        edges = g.num_edges
        absent = g.n * (g.n - 1) // 2 - edges
        keep, appear = 1 - p / 2, p / 2
        runs = 40
        counts = [len(flip_edges(g.n, g.edges(), FlipConfig(p=p), RngStream(13, run)))
                  for run in range(runs)]
        variance = edges * keep * (1 - keep) + absent * appear * (1 - appear)
        expected = keep * edges + appear * absent
        assert abs(np.mean(counts) - expected) <= 4 * np.sqrt(variance / runs)

    def test_kept_edges_follow_p(self):
        """Test that each original edge survives with probability 1 - p/2."""
        g = random_graph(60, seed=6)
        p = 0.4
        original = {tuple(e) for e in g.edges().tolist()}
        runs = 40
        survived = sum(
            len(original & {tuple(e) for e in flip_edges(g.n, g.edges(), FlipConfig(p=p),
                                                         RngStream(14, run)).tolist()})
            for run in range(runs)
        )
        trials = runs * len(original)
        rate = survived / trials
        assert abs(rate - (1 - p / 2)) <= 4 * np.sqrt(p / 2 * (1 - p / 2) / trials)

    def test_deterministic(self):
        """Test that the same stream gives the same release."""
        g = random_graph(40, seed=4)
        cfg = FlipConfig(p=0.3)
        assert np.array_equal(flip_edges(g.n, g.edges(), cfg, RngStream(5, 2)),
                              flip_edges(g.n, g.edges(), cfg, RngStream(5, 2)))

    def test_size_guard(self):
        """Test that oversized graphs are refused."""
        g = random_graph(40, seed=4)
        with pytest.raises(SizeGuardError):
            flip_edges(g.n, g.edges(), FlipConfig(p=0.5, node_limit=10), RngStream(0))

    def test_seed_out_of_range(self):
        """Test that the exempt seed must be a node."""
        with pytest.raises(GraphValidationError):
            flip_edges(5, path_graph(5).edges(), FlipConfig(p=0.5, personalized_seed=5), RngStream(0))


class TestEdgeFlipping:
    """Test the flipped release and PPR on it."""

    def test_component_holds_seed(self):
        """Test that the kept component contains the seed."""
        g = path_graph(40)
        flipped = edge_flipping(g, FlipConfig(p=0.05, personalized_seed=0), RngStream(2, 1))
        assert 0 in flipped.node_ids
        assert flipped.graph.n + flipped.dropped_nodes == g.n
        assert flipped.edges_in == g.num_edges

    def test_lift_and_local_id(self):
        """Test mapping scores back to the original ids."""
        g = path_graph(40)
        flipped = edge_flipping(g, FlipConfig(p=0.05, personalized_seed=3), RngStream(2, 1))
        local = flipped.local_id(3)
        assert flipped.node_ids[local] == 3
        lifted = flipped.lift(np.ones(flipped.graph.n))
        assert lifted.sum() == flipped.graph.n
        dropped = np.setdiff1d(np.arange(g.n), flipped.node_ids)
        assert np.all(lifted[dropped] == 0)
        if len(dropped):
            with pytest.raises(GraphValidationError):
                flipped.local_id(int(dropped[0]))

    def test_flipped_ppr_is_stochastic(self):
        """Test that PPR on the flipped component is a probability vector."""
        g = random_graph(60, seed=6)
        flipped = edge_flipping(g, FlipConfig(p=0.5, personalized_seed=0), RngStream(7, 1))
        scores = flipped_ppr(flipped, 0, 0.8, 50)
        assert scores.shape == (g.n,)
        assert scores.sum() == pytest.approx(1.0, abs=1e-12)

    def test_tiny_p_recovers_exact_ppr(self):
        """Test the full pipeline against exact PPR when nothing is flipped."""
        g = random_graph(60, seed=8)
        scores = run_edge_flipping(g, 4, 1e-12, 0.8, 50, RngStream(0, 1))
        exact = run_exact_diffusion(g, ppr_schedule(0.8), seed_vector(g.n, [4]), 50)
        assert np.allclose(scores, exact, atol=1e-14)

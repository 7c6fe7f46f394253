"""Edge-Flipping baseline: randomized response on the adjacency matrix, then exact PPR."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps
from absl import logging

from .config import Settings
from .engine import ppr_schedule, run_exact_diffusion, seed_vector
from .errors import GraphValidationError, SizeGuardError
from .graph import SparseGraph, component_graph
from .noise import RngStream, as_generator


@dataclass(frozen=True)
class FlipConfig:
    """Redraw probability p, optional exempt seed node and the O(n^2) size guard."""
    p: float
    personalized_seed: Optional[int] = None
    node_limit: int = field(default_factory=lambda: Settings.from_env().node_limit)

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"flip probability must lie in (0, 1], got {self.p}")
        if self.node_limit < 2:
            raise ValueError(f"node_limit must be >= 2, got {self.node_limit}")


@dataclass
class FlippedGraph:
    """Connected component of the flipped graph that PPR runs on."""
    graph: SparseGraph
    # original id of each component node
    node_ids: np.ndarray
    n_original: int
    edges_in: int
    edges_out: int

    @property
    def dropped_nodes(self) -> int:
        return self.n_original - self.graph.n

    def local_id(self, node: int) -> int:
        pos = int(np.searchsorted(self.node_ids, node))
        if pos == len(self.node_ids) or self.node_ids[pos] != node:
            raise GraphValidationError(f"node {node} is not in the flipped component")
        return pos

    def lift(self, scores: np.ndarray) -> np.ndarray:
        """Scatter component scores back to the original ids; other nodes score 0."""
        full = np.zeros(self.n_original)
        full[self.node_ids] = scores
        return full


def flip_edges(n: int, edges: np.ndarray, cfg: FlipConfig, rng) -> np.ndarray:
    """
    Randomized response on every unordered pair i < j.

    With probability p the pair's bit is redrawn uniformly from {0, 1},
    otherwise it is kept. Pairs touching ``cfg.personalized_seed`` are never
    touched. Draws happen row by row, so the output is a pure function of
    the stream.

    Args:
        n: Node count
        edges: (m, 2) undirected edges, possibly empty
        cfg: Flip configuration
        rng: RngStream or numpy Generator

    Returns:
        Flipped edges as an (m', 2) array with u < v, sorted
    """
    if n > cfg.node_limit:
        raise SizeGuardError(
            f"edge flipping is quadratic in n: {n} nodes exceed the limit of {cfg.node_limit}"
        )
    seed = cfg.personalized_seed
    if seed is not None and not 0 <= seed < n:
        raise GraphValidationError(f"personalized seed {seed} outside [0, {n})")

    edges = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
    edges = edges[edges[:, 0] != edges[:, 1]]
    upper = sps.csr_matrix(
        (np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])), shape=(n, n)
    )
    upper.sum_duplicates()

    generator = as_generator(rng)
    rows, cols = [], []
    for i in range(n - 1):
        width = n - i - 1
        current = np.zeros(width, dtype=bool)
        current[upper.indices[upper.indptr[i]:upper.indptr[i + 1]] - i - 1] = True
        redraw = generator.random(width) < cfg.p
        bits = generator.random(width) < 0.5
        if seed is not None:
            if i == seed:
                redraw[:] = False
            elif seed > i:
                redraw[seed - i - 1] = False
        flipped = np.where(redraw, bits, current)
        neighbours = np.flatnonzero(flipped) + i + 1
        rows.append(np.full(len(neighbours), i, dtype=np.int64))
        cols.append(neighbours)

    if not rows:
        return np.zeros((0, 2), dtype=np.int64)
    return np.column_stack([np.concatenate(rows), np.concatenate(cols)])


def edge_flipping(g: SparseGraph, cfg: FlipConfig, rng) -> FlippedGraph:
    """
    Release a flipped copy of g restricted to one connected component.

    The component holding the personalized seed is kept (the largest one
    without a seed); nodes outside it are reported as dropped.
    """
    flipped = flip_edges(g.n, g.edges(), cfg, rng)
    component, node_ids = component_graph(g.n, flipped, cfg.personalized_seed)
    result = FlippedGraph(graph=component, node_ids=node_ids, n_original=g.n,
                          edges_in=g.num_edges, edges_out=len(flipped))
    if result.dropped_nodes:
        logging.info('Flipped graph: %d -> %d edges, %d node(s) outside the kept component',
                     result.edges_in, result.edges_out, result.dropped_nodes)
    return result


def flipped_ppr(flipped: FlippedGraph, seed: int, beta: float, K: int) -> np.ndarray:
    """Exact PPR from ``seed`` on the flipped component, lifted to the original ids."""
    local = flipped.local_id(seed)
    s = seed_vector(flipped.graph.n, [local])
    scores = run_exact_diffusion(flipped.graph, ppr_schedule(beta), s, K)
    return flipped.lift(scores)


def run_edge_flipping(g: SparseGraph, seed: int, p: float, beta: float, K: int,
                      rng: RngStream, node_limit: Optional[int] = None) -> np.ndarray:
    """Flip with the seed exempt, then diffuse: the full baseline pipeline for one trial."""
    kwargs = {} if node_limit is None else {'node_limit': node_limit}
    cfg = FlipConfig(p=p, personalized_seed=seed, **kwargs)
    return flipped_ppr(edge_flipping(g, cfg, rng), seed, beta, K)

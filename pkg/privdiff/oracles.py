"""
Brute-force references for the engine and the accountant.

Everything here is dense or quadratic and guarded by size limits; it is
used by the ``verify`` command and by the test-suite, never on the
experiment path.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from absl import logging
from scipy import integrate

from .accountant import g_alpha, rho_diff, rr_rdp
from .engine import (
    DiffusionSchedule,
    ThresholdMode,
    ThresholdPolicy,
    apply_threshold,
    diffusion_step,
    ppr_schedule,
    run_exact_diffusion,
    seed_vector,
)
from .errors import GraphValidationError, SizeGuardError
from .graph import EdgeOp, EdgePerturbation, SparseGraph, perturb_edge
from .noise import RngStream, as_generator

DENSE_PPR_LIMIT = 2000
DISTORTION_LIMIT = 200


@dataclass
class OracleReport:
    """One engine-vs-oracle comparison."""
    quantity: str
    oracle_value: float
    engine_value: float
    abs_error: float
    rel_error: float
    tolerance: float
    passed: bool

    @classmethod
    def compare(cls, quantity: str, oracle_value: float, engine_value: float,
                tolerance: float) -> 'OracleReport':
        abs_error = abs(engine_value - oracle_value)
        rel_error = abs_error / abs(oracle_value) if oracle_value else abs_error
        return cls(quantity=quantity, oracle_value=float(oracle_value),
                   engine_value=float(engine_value), abs_error=float(abs_error),
                   rel_error=float(rel_error), tolerance=tolerance,
                   passed=bool(abs_error <= tolerance))


def dense_ppr(g: SparseGraph, beta: float, seed: int, tol: float = 1e-10) -> np.ndarray:
    """
    PPR (1 - beta) sum_k beta^k W^k e_seed with a dense lazy walk matrix.

    The series is cut once the remaining mass beta^(k+1) drops below tol.
    """
    if g.n > DENSE_PPR_LIMIT:
        raise SizeGuardError(f"dense PPR is limited to {DENSE_PPR_LIMIT} nodes, got {g.n}")
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if not 0 <= seed < g.n:
        raise GraphValidationError(f"seed {seed} outside [0, {g.n})")
    walk = g.adjacency.toarray() / g.degrees[np.newaxis, :]
    lazy = 0.5 * (walk + np.eye(g.n))

    term = np.zeros(g.n)
    term[seed] = 1.0
    result = (1.0 - beta) * term
    remaining = beta
    while remaining >= tol:
        term = lazy @ term
        result += (1.0 - beta) * remaining * term
        remaining *= beta
    return result


def double_star_graph(hub_degree: int) -> SparseGraph:
    """
    Two hubs 0 and 1 joined by an edge, each completed to degree
    ``hub_degree`` with private leaves (2 * hub_degree nodes in total).

    Removing edge (0, 1) realizes the worst single-step distortion.
    """
    if hub_degree < 2:
        raise ValueError("hub_degree must be >= 2")
    leaves = hub_degree - 1
    leaves_a = np.arange(2, 2 + leaves)
    leaves_b = np.arange(2 + leaves, 2 + 2 * leaves)
    edges = np.vstack([
        [[0, 1]],
        np.column_stack([np.zeros(leaves, dtype=np.int64), leaves_a]),
        np.column_stack([np.ones(leaves, dtype=np.int64), leaves_b]),
    ])
    return SparseGraph.from_edges(2 * hub_degree, edges)


def random_connected_graph(n: int, edge_prob: float, rng) -> SparseGraph:
    """Random spanning tree plus independent extra edges with probability edge_prob."""
    if n < 2:
        raise ValueError("n must be >= 2")
    generator = as_generator(rng)
    order = generator.permutation(n)
    parents = order[[generator.integers(0, i) for i in range(1, n)]]
    tree = np.column_stack([order[1:], parents])
    upper_i, upper_j = np.triu_indices(n, k=1)
    extra = generator.random(len(upper_i)) < edge_prob
    edges = np.vstack([tree, np.column_stack([upper_i[extra], upper_j[extra]])])
    return SparseGraph.from_edges(n, edges)


def single_step_distortion(g: SparseGraph, g_prime: SparseGraph, sched: DiffusionSchedule,
                            policy: ThresholdPolicy, k: int, x: np.ndarray) -> float:
    zero = np.zeros(g.n)
    step = diffusion_step(g, sched, k, apply_threshold(policy, g, x), zero)
    step_prime = diffusion_step(g_prime, sched, k, apply_threshold(policy, g_prime, x), zero)
    return float(np.abs(step - step_prime).sum())


def extremal_inputs(g: SparseGraph, g_prime: SparseGraph, perturbation: EdgePerturbation,
                    policy: ThresholdPolicy) -> List[np.ndarray]:
    """
    Inputs that sit on a clip boundary of either graph at both endpoints and
    vanish elsewhere; these include the tight case of the distortion bound.
    """
    candidates = []
    for node in (perturbation.u, perturbation.v):
        values = set()
        for lower, upper in (policy.bounds(g), policy.bounds(g_prime)):
            for value in (lower[node], upper[node]):
                if np.isfinite(value):
                    values.add(float(value))
        candidates.append(sorted(values))
    inputs = []
    for value_u in candidates[0]:
        for value_v in candidates[1]:
            x = np.zeros(g.n)
            x[perturbation.u] = value_u
            x[perturbation.v] = value_v
            inputs.append(x)
    return inputs


def _sample_input(generator: np.random.Generator, family: int, g: SparseGraph,
                  perturbation: EdgePerturbation, candidates: Sequence[np.ndarray],
                  scale: float) -> np.ndarray:
    n = g.n
    if family == 0:
        # sparse: a handful of coordinates, endpoints favoured
        x = np.zeros(n)
        picks = generator.choice(n, size=min(n, int(generator.integers(1, 6))), replace=False)
        if generator.random() < 0.5:
            picks = np.append(picks, [perturbation.u, perturbation.v])
        x[picks] = generator.uniform(-scale, scale, len(picks))
        return x
    if family == 1:
        return generator.uniform(-scale, scale, n)
    # clip boundary at the endpoints, optional background
    x = candidates[int(generator.integers(0, len(candidates)))].copy()
    if generator.random() < 0.5:
        background = generator.uniform(-scale, scale, n)
        background[[perturbation.u, perturbation.v]] = 0.0
        x += background
    return x


def measure_distortion(g: SparseGraph, perturbation: EdgePerturbation,
                       sched: DiffusionSchedule, policy: ThresholdPolicy,
                       trials: int, rng, k: int = 1) -> float:
    """
    Largest observed ||phi_k(f_g(x)) - phi_k(f_g'(x))||_1 over sampled inputs.

    Inputs rotate over sparse, dense and clip-boundary families; the
    deterministic boundary inputs from :func:`extremal_inputs` are always
    evaluated as well.

    Args:
        g: Graph (n <= 200)
        perturbation: Edge change producing g'
        sched: Diffusion schedule
        policy: Thresholding function
        trials: Number of random inputs
        rng: RngStream or numpy Generator
        k: Step index whose coefficients are used

    Returns:
        Maximum observed l1 distortion
    """
    if g.n > DISTORTION_LIMIT:
        raise SizeGuardError(f"distortion measurement is limited to {DISTORTION_LIMIT} nodes")
    seed = policy.personalized_seed
    if seed is not None and seed in (perturbation.u, perturbation.v):
        raise GraphValidationError("personalized distortion excludes edges incident to the seed")
    g_prime = perturb_edge(g, perturbation)
    generator = as_generator(rng)

    candidates = extremal_inputs(g, g_prime, perturbation, policy)
    observed = max(single_step_distortion(g, g_prime, sched, policy, k, x) for x in candidates)
    scale = 1.5 * policy.eta * max(int(g.degrees.max()), int(g_prime.degrees.max()))
    for t in range(trials):
        x = _sample_input(generator, t % 3, g, perturbation, candidates, scale)
        observed = max(observed, single_step_distortion(g, g_prime, sched, policy, k, x))
    return observed


def laplace_renyi_divergence_numeric(alpha: float, sigma: float, rho: float) -> float:
    """Renyi divergence of Laplace(0, sigma) from Laplace(rho, sigma) by quadrature."""
    if not alpha > 1 or not sigma > 0 or not rho >= 0:
        raise ValueError("need alpha > 1, sigma > 0, rho >= 0")

    def integrand(x):
        exponent = -(alpha * abs(x) + (1 - alpha) * abs(x - rho)) / sigma
        return math.exp(exponent) / (2 * sigma)

    total = 0.0
    for lo, hi in ((-math.inf, 0.0), (0.0, rho), (rho, math.inf)):
        if hi > lo:
            value, _ = integrate.quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-12)
            total += value
    return math.log(total) / (alpha - 1)


def randomized_response_divergence_numeric(p: float, alpha: float) -> float:
    """Renyi divergence between the output laws of randomized response on bit 1 and bit 0."""
    on_one = np.array([p / 2, 1 - p / 2])
    on_zero = np.array([1 - p / 2, p / 2])
    return float(np.log(np.sum(on_one ** alpha * on_zero ** (1 - alpha))) / (alpha - 1))


def run_oracle_suite(seed: int = 0, graphs: int = 5, n_max: int = 120,
                     distortion_trials: int = 300) -> List[OracleReport]:
    """
    Run every oracle once at desk scale.

    Returns:
        Reports for divergence formulas, PPR convergence and distortion bounds
    """
    reports = []
    for alpha, sigma, rho in ((2.0, 1.0, 1.0), (1.5, 1.0, 0.3), (8.0, 2.0, 0.5), (32.0, 1.0, 0.05)):
        reports.append(OracleReport.compare(
            f"g_alpha(alpha={alpha}, sigma={sigma}, rho={rho})",
            laplace_renyi_divergence_numeric(alpha, sigma, rho),
            g_alpha(alpha, sigma, rho), 1e-7,
        ))
    for p in (0.1, 0.5, 0.9):
        for alpha in (2.0, 8.0):
            reports.append(OracleReport.compare(
                f"rr_rdp(p={p}, alpha={alpha})",
                randomized_response_divergence_numeric(p, alpha), rr_rdp(p, alpha), 1e-10,
            ))

    beta, tol = 0.8, 1e-8
    K = math.ceil(math.log(tol) / math.log(beta))
    for index in range(graphs):
        stream = RngStream(seed, index)
        generator = stream.generator()
        n = int(generator.integers(10, n_max + 1))
        g = random_connected_graph(n, 3.0 / n, generator)
        source = int(generator.integers(0, n))
        engine = run_exact_diffusion(g, ppr_schedule(beta), seed_vector(n, [source]), K)
        oracle = dense_ppr(g, beta, source, tol=1e-12)
        reports.append(OracleReport.compare(
            f"ppr_l1_distance(graph={index}, n={n})", 0.0,
            float(np.abs(engine - oracle).sum()), 2 * tol,
        ))

    hub_degree, eta = 100, 1e-3
    g = double_star_graph(hub_degree)
    removal = EdgePerturbation(0, 1, EdgeOp.REMOVE)
    for name, sched in (('ppr', ppr_schedule(beta)),
                        ('fast', DiffusionSchedule.constant(0.8, 0.0, 0.2))):
        policy = ThresholdPolicy(eta, ThresholdMode.SYMMETRIC_DEGREE)
        bound = rho_diff(sched, eta)
        observed = measure_distortion(g, removal, sched, policy, distortion_trials,
                                      RngStream(seed, graphs + 1))
        reports.append(OracleReport(
            quantity=f"double_star_distortion({name}, hub_degree={hub_degree})",
            oracle_value=bound, engine_value=observed,
            abs_error=abs(bound - observed), rel_error=abs(bound - observed) / bound,
            tolerance=0.2 * bound,
            passed=bool(0.8 * bound <= observed <= bound + 1e-12),
        ))

    failed = sum(not r.passed for r in reports)
    if failed:
        logging.warning('%d of %d oracle checks failed', failed, len(reports))
    else:
        logging.info('All %d oracle checks passed', len(reports))
    return reports

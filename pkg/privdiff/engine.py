"""Exact and noisy graph diffusion: schedules, thresholding, l1-ball projection."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from absl import logging

from .errors import GraphValidationError
from .graph import SparseGraph, random_walk_matvec
from .noise import RngStream, sample_gaussian_vec, sample_laplace_vec

Triple = Tuple[float, float, float]

_COEFF_SUM_TOL = 1e-12
_STOCHASTIC_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """
    Per-step coefficients (gamma1_k, gamma2_k, gamma3_k) of the maps
    phi_k(x) = (gamma1_k P + gamma2_k I) x + gamma3_k s.

    A schedule is either explicit (one row per step) or a single constant
    triple reused at every step; ``steps`` bounds the valid step index when set.
    """
    coeffs: np.ndarray
    steps: Optional[int] = None

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.float64).reshape(-1, 3)
        coeffs.flags.writeable = False
        object.__setattr__(self, 'coeffs', coeffs)
        if len(coeffs) == 0:
            raise ValueError("schedule needs at least one coefficient triple")
        if np.any(np.abs(coeffs.sum(axis=1) - 1.0) > _COEFF_SUM_TOL):
            raise ValueError("each coefficient triple must sum to 1")
        if not self.gamma_max < 1.0:
            raise ValueError(f"gamma_max must be < 1 for a contraction, got {self.gamma_max}")
        if len(coeffs) > 1:
            object.__setattr__(self, 'steps', len(coeffs))
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")

    @classmethod
    def constant(cls, gamma1: float, gamma2: float, gamma3: float,
                 steps: Optional[int] = None) -> 'DiffusionSchedule':
        return cls(coeffs=np.array([[gamma1, gamma2, gamma3]]), steps=steps)

    @classmethod
    def explicit(cls, triples: Sequence[Triple]) -> 'DiffusionSchedule':
        return cls(coeffs=np.asarray(triples, dtype=np.float64))

    @property
    def is_constant(self) -> bool:
        return len(self.coeffs) == 1

    @property
    def gamma_max(self) -> float:
        return float(np.max(np.abs(self.coeffs[:, 0]) + np.abs(self.coeffs[:, 1])))

    @property
    def gamma1_max(self) -> float:
        return float(np.max(np.abs(self.coeffs[:, 0])))

    def triple(self, k: int) -> Triple:
        """Coefficients of step k (1-based)."""
        if k < 1 or (self.steps is not None and k > self.steps):
            raise ValueError(f"step {k} outside schedule range 1..{self.steps}")
        row = self.coeffs[0] if self.is_constant else self.coeffs[k - 1]
        return float(row[0]), float(row[1]), float(row[2])


class ThresholdMode(str, Enum):
    SYMMETRIC_DEGREE = 'symmetric_degree'
    NONNEGATIVE_DEGREE = 'nonnegative_degree'
    UNIFORM = 'uniform'
    NONNEGATIVE_UNIFORM = 'nonnegative_uniform'

    @property
    def degree_based(self) -> bool:
        return self in (ThresholdMode.SYMMETRIC_DEGREE, ThresholdMode.NONNEGATIVE_DEGREE)

    @property
    def nonnegative(self) -> bool:
        return self in (ThresholdMode.NONNEGATIVE_DEGREE, ThresholdMode.NONNEGATIVE_UNIFORM)


class NoiseKind(str, Enum):
    LAPLACE = 'laplace'
    GAUSSIAN = 'gaussian'


@dataclass(frozen=True)
class ThresholdPolicy:
    """Clipping function f: threshold eta, mode, optional unclipped seed node."""
    eta: float
    mode: ThresholdMode = ThresholdMode.SYMMETRIC_DEGREE
    personalized_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'mode', ThresholdMode(self.mode))
        if not self.eta > 0:
            raise ValueError(f"threshold eta must be > 0, got {self.eta}")

    def bounds(self, g: SparseGraph) -> Tuple[np.ndarray, np.ndarray]:
        """Per-coordinate (lower, upper) clip bounds on graph g."""
        scale = g.degrees.astype(np.float64) if self.mode.degree_based else np.ones(g.n)
        upper = self.eta * scale
        lower = np.zeros(g.n) if self.mode.nonnegative else -upper
        if self.personalized_seed is not None:
            if not 0 <= self.personalized_seed < g.n:
                raise GraphValidationError(
                    f"personalized seed {self.personalized_seed} outside [0, {g.n})"
                )
            upper[self.personalized_seed] = np.inf
        return lower, upper


@dataclass
class NoisyDiffusionResult:
    """Final noisy iterate and the noise streams consumed to produce it."""
    scores: np.ndarray
    stream_ids: List[str] = field(default_factory=list)


def apply_threshold(policy: ThresholdPolicy, g: SparseGraph, x: np.ndarray) -> np.ndarray:
    """Clip each coordinate of x into the policy's bounds."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.n,):
        raise GraphValidationError(f"vector length {x.shape} does not match n={g.n}")
    lower, upper = policy.bounds(g)
    return np.minimum(np.maximum(x, lower), upper)


def diffusion_step(g: SparseGraph, sched: DiffusionSchedule, k: int,
                   x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Apply phi_k(x) = gamma1_k P x + gamma2_k x + gamma3_k s.

    Args:
        g: Graph
        sched: Diffusion schedule
        k: Step index, 1-based
        x: Current iterate
        s: Seed vector

    Returns:
        Next iterate
    """
    gamma1, gamma2, gamma3 = sched.triple(k)
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x.shape != (g.n,) or s.shape != (g.n,):
        raise GraphValidationError("iterate and seed must both have length n")
    return gamma1 * random_walk_matvec(g, x) + gamma2 * x + gamma3 * s


def project_l1_ball(x: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """
    Euclidean projection onto {y : ||y||_1 <= radius} by sorting magnitudes.

    Args:
        x: Input vector
        radius: Ball radius, strictly positive

    Returns:
        Projected vector (a copy of x when x is already inside the ball)
    """
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    magnitude = np.abs(x)
    if magnitude.sum() <= radius:
        return x.copy()

    sorted_mag = np.sort(magnitude)[::-1]
    cumulative = np.cumsum(sorted_mag)
    ranks = np.arange(1, len(x) + 1)
    active = np.flatnonzero(sorted_mag - (cumulative - radius) / ranks > 0)
    count = active[-1] + 1
    theta = (cumulative[count - 1] - radius) / count
    return np.sign(x) * np.maximum(magnitude - theta, 0.0)


def seed_vector(n: int, nodes: Iterable[int]) -> np.ndarray:
    """Uniform seed over a node set: sum_{i in S} e_i / |S|."""
    nodes = sorted(set(int(v) for v in nodes))
    if not nodes:
        raise ValueError("seed set must be non-empty")
    if nodes[0] < 0 or nodes[-1] >= n:
        raise GraphValidationError(f"seed node outside [0, {n})")
    s = np.zeros(n)
    s[nodes] = 1.0 / len(nodes)
    return s


def _check_seed(s: np.ndarray, strict: bool):
    if np.any(s < 0) or abs(s.sum() - 1.0) > _STOCHASTIC_TOL:
        message = f"seed vector is not stochastic (sum={s.sum():.6g}, min={s.min():.3g})"
        if strict:
            raise GraphValidationError(message)
        logging.warning(message)


def run_exact_diffusion(g: SparseGraph, sched: DiffusionSchedule, s: np.ndarray,
                        K: int, strict_seed: bool = False) -> np.ndarray:
    """Noise-free s_K = phi_K o ... o phi_1 (s); no thresholding or projection."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    s = np.asarray(s, dtype=np.float64)
    _check_seed(s, strict_seed)
    x = s
    for k in range(1, K + 1):
        x = diffusion_step(g, sched, k, x, s)
    return x


def run_noisy_diffusion(g: SparseGraph,
                        sched: DiffusionSchedule,
                        policy: ThresholdPolicy,
                        s: np.ndarray,
                        K: int,
                        sigma: float,
                        noise_kind: NoiseKind = NoiseKind.LAPLACE,
                        rng: Optional[RngStream] = None,
                        project_unit_l1: bool = False,
                        radius: float = 1.0,
                        strict_seed: bool = False) -> NoisyDiffusionResult:
    """
    Run s_k = phi_k(f(s_{k-1})) + xi_k^(1) + xi_k^(2), optionally projecting
    each iterate onto the l1 ball after the noise is added.

    The two noises of step k come from sub-streams (k, 1) and (k, 2) of ``rng``.
    sigma = 0 gives the thresholded deterministic recursion.

    Args:
        g: Graph
        sched: Diffusion schedule
        policy: Thresholding function f
        s: Stochastic seed vector
        K: Number of steps
        sigma: Noise scale (Laplace scale or Gaussian standard deviation)
        noise_kind: Laplace or Gaussian noise
        rng: Trial stream, required when sigma > 0
        project_unit_l1: Project onto the l1 ball after each noisy step
        radius: l1 ball radius
        strict_seed: Raise instead of warning on a non-stochastic seed

    Returns:
        Final iterate with the consumed stream labels
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma > 0 and rng is None:
        raise ValueError("a random stream is required when sigma > 0")
    noise_kind = NoiseKind(noise_kind)
    sample = sample_laplace_vec if noise_kind is NoiseKind.LAPLACE else sample_gaussian_vec

    s = np.asarray(s, dtype=np.float64)
    _check_seed(s, strict_seed)
    stream_ids = []
    x = s
    for k in range(1, K + 1):
        x = diffusion_step(g, sched, k, apply_threshold(policy, g, x), s)
        if sigma > 0:
            for j in (1, 2):
                stream = rng.child(k, j)
                x = x + sample(g.n, sigma, stream)
                stream_ids.append(stream.label)
        if project_unit_l1:
            x = project_l1_ball(x, radius)
    return NoisyDiffusionResult(scores=x, stream_ids=stream_ids)


def ppr_schedule(beta: float, K: Optional[int] = None) -> DiffusionSchedule:
    """Lazy-walk PPR, phi_k(x) = beta W x + (1 - beta) s: triple (beta/2, beta/2, 1 - beta)."""
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    return DiffusionSchedule.constant(beta / 2, beta / 2, 1 - beta, steps=K)


def postprocess_scores(x: np.ndarray, renormalize: bool = False) -> np.ndarray:
    """Clip released scores into [0, 1], optionally renormalizing to sum 1."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    if renormalize and x.sum() > 0:
        x = x / x.sum()
    return x

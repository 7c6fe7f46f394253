"""
Edge-level Renyi-DP accounting for noisy graph diffusion.

Bounds are evaluated by exhaustive scans over the split point tau between
the absorbed-distortion steps and the contraction steps. All divergences
are computed in log space; overflow yields ``inf`` instead of raising.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from absl import logging
from scipy.special import logsumexp

from .engine import DiffusionSchedule
from .errors import InfeasibleBudgetError
from .graph import SparseGraph

DEFAULT_ALPHA_GRID: Tuple[float, ...] = (
    1.01, 1.05, 1.1, 1.25, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0
)
DEFAULT_REL_TOL = 1e-6
DEFAULT_MAX_STEPS = 200
DEFAULT_SIGMA_MIN = 1e-12
_SIGMA_MAX = 1e300

BoundValue = Tuple[float, Optional[int]]


class Mode(str, Enum):
    STANDARD = 'standard'
    PERSONALIZED = 'personalized'


class BoundKind(str, Enum):
    PERSONALIZED = 'personalized'
    STANDARD = 'standard'
    COMPOSITION = 'composition'
    DIAMETER_PROJECTION = 'diameter_projection'
    DIAMETER_THRESHOLD = 'diameter_threshold'
    GAUSSIAN = 'gaussian'

    @property
    def uses_diameter(self) -> bool:
        return self in (BoundKind.DIAMETER_PROJECTION, BoundKind.DIAMETER_THRESHOLD)


@dataclass(frozen=True)
class Tracking:
    """How the coupled-iterate distance is tracked: Wasserstein, or a fixed diameter D."""
    kind: str = 'wasserstein'
    diameter: Optional[float] = None

    def __post_init__(self):
        if self.kind == 'wasserstein':
            if self.diameter is not None:
                raise ValueError("Wasserstein tracking takes no diameter")
        elif self.kind == 'diameter':
            if self.diameter is None or not self.diameter > 0:
                raise ValueError(f"diameter D must be > 0, got {self.diameter}")
        else:
            raise ValueError(f"unknown tracking kind {self.kind!r}")

    @classmethod
    def wasserstein(cls) -> 'Tracking':
        return cls()

    @classmethod
    def with_diameter(cls, diameter: float) -> 'Tracking':
        return cls(kind='diameter', diameter=float(diameter))


@dataclass(frozen=True)
class AccountantQuery:
    """
    Inputs of every bound: Renyi order, noise scale, steps, one-step
    distortion and contraction coefficient.

    Calibration routines replace ``sigma`` (and ``alpha`` for DP targets),
    so any positive placeholder may be passed there.
    """
    alpha: float
    sigma: float
    K: int
    rho_diff: float
    gamma_max: float
    mode: Mode = Mode.STANDARD
    tracking: Tracking = field(default_factory=Tracking.wasserstein)

    def __post_init__(self):
        object.__setattr__(self, 'mode', Mode(self.mode))
        if not self.alpha > 1:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.K}")
        object.__setattr__(self, 'K', int(self.K))
        if not self.rho_diff >= 0:
            raise ValueError(f"rho_diff must be >= 0, got {self.rho_diff}")
        if not 0 < self.gamma_max < 1:
            raise ValueError(f"gamma_max must lie in (0, 1), got {self.gamma_max}")

    @classmethod
    def for_schedule(cls, sched: DiffusionSchedule, eta: float, alpha: float, sigma: float,
                     K: int, mode: Mode = Mode.STANDARD,
                     tracking: Optional[Tracking] = None) -> 'AccountantQuery':
        """Query for a diffusion schedule thresholded at eta."""
        return cls(alpha=alpha, sigma=sigma, K=K, rho_diff=rho_diff(sched, eta),
                   gamma_max=sched.gamma_max, mode=mode,
                   tracking=tracking or Tracking.wasserstein())


@dataclass(frozen=True)
class DpBudget:
    eps_dp: float
    delta: float

    def __post_init__(self):
        if not self.eps_dp > 0:
            raise ValueError(f"eps_dp must be > 0, got {self.eps_dp}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass
class AccountingResult:
    """Bound evaluation at the query's alpha plus its (eps, delta)-DP conversion."""
    bound_kind: str
    epsilon_rdp: float
    alpha: float
    tau_star: Optional[int]
    epsilon_dp: Optional[float] = None
    alpha_dp: Optional[float] = None
    delta: Optional[float] = None
    inputs: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class CalibrationResult:
    """Calibrated noise scale (or flip probability) and the budget it achieves."""
    bound_kind: str
    achieved_epsilon: float
    alpha_star: Optional[float]
    tau_star: Optional[int] = None
    sigma: Optional[float] = None
    p: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


# alpha * rho / sigma below this uses the power series of the excess
_SERIES_LIMIT = 0.5
_SERIES_TERMS = 40
# (alpha - 1) * rho / sigma above this would overflow expm1
_EXPM1_LIMIT = 700.0


def _excess_series(alpha: float, t: np.ndarray) -> np.ndarray:
    # w1 e^{(alpha-1)t} + w2 e^{-alpha t} - 1 summed from the t^2 term; the
    # constant and linear terms cancel exactly since w1 + w2 = 1 and
    # w1 (alpha - 1) = w2 alpha
    w1 = alpha / (2 * alpha - 1)
    w2 = (alpha - 1) / (2 * alpha - 1)
    up = (alpha - 1) * t
    down = -alpha * t
    total = np.zeros_like(t)
    for n in range(2, _SERIES_TERMS + 1):
        up = up * ((alpha - 1) * t) / n
        down = down * (-alpha * t) / n
        total = total + (w1 * up + w2 * down)
    return total


def _g_alpha(alpha: float, sigma: float, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    t = rho / sigma
    w1 = alpha / (2 * alpha - 1)
    w2 = (alpha - 1) / (2 * alpha - 1)
    with np.errstate(over='ignore', invalid='ignore'):
        small = alpha * t <= _SERIES_LIMIT
        safe = np.where(small, 0.0, np.minimum(t, _EXPM1_LIMIT / (alpha - 1)))
        series = np.log1p(_excess_series(alpha, np.where(small, t, 0.0))) / (alpha - 1)
        moderate = np.log1p(w1 * np.expm1((alpha - 1) * safe)
                            + w2 * np.expm1(-alpha * safe)) / (alpha - 1)
        weights = np.array([w1, w2]).reshape((2,) + (1,) * t.ndim)
        large = logsumexp(np.stack([(alpha - 1) * t, -alpha * t]), axis=0, b=weights) / (alpha - 1)
        value = np.where(small, series,
                         np.where((alpha - 1) * t < _EXPM1_LIMIT, moderate, large))
    value = np.where(np.isnan(value), np.inf, value)
    return np.where(rho == 0, 0.0, np.maximum(value, 0.0))


def g_alpha(alpha: float, sigma: float, rho: float) -> float:
    """
    Renyi divergence of order alpha between Laplace(0, sigma) and its shift by rho.

    Args:
        alpha: Renyi order, > 1
        sigma: Laplace scale, > 0
        rho: l1 shift, >= 0

    Returns:
        Divergence value (``inf`` on overflow)
    """
    if not alpha > 1:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not rho >= 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    return float(_g_alpha(alpha, sigma, rho))


def rho_diff(sched: DiffusionSchedule, eta: float) -> float:
    """Largest single-step l1 distortion between edge-adjacent graphs."""
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    return max(4.0 * sched.gamma1_max, 2.0 * sched.gamma_max) * eta


def wasserstein_tau(rho: float, gamma_max: float, tau):
    """Tracked distance w_tau = rho (1 - gamma^tau) / (1 - gamma); accepts an array of tau."""
    tau = np.asarray(tau)
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    value = rho * (1.0 - np.power(gamma_max, tau)) / (1.0 - gamma_max)
    return float(value) if value.ndim == 0 else value


def _taus(q: AccountantQuery) -> Optional[np.ndarray]:
    # No leakage in the first step of a personalized run; the literal tau = 0
    # case of the personalized bound is excluded from the scan.
    if q.mode is Mode.PERSONALIZED:
        return None if q.K == 1 else np.arange(1, q.K)
    return np.arange(q.K)


def _argmin_last(values: np.ndarray, taus: np.ndarray) -> BoundValue:
    best = float(values.min())
    last = len(values) - 1 - int(np.argmin(values[::-1]))
    return best, int(taus[last])


def _laplace_scan(q: AccountantQuery, shift: Callable[[np.ndarray], np.ndarray]) -> BoundValue:
    taus = _taus(q)
    if taus is None:
        return 0.0, 0
    if q.rho_diff == 0:
        return 0.0, int(taus[-1])
    remaining = q.K - taus
    absorbed = shift(taus) * np.power(q.gamma_max, remaining)
    with np.errstate(invalid='ignore'):
        values = remaining * g_alpha(q.alpha, q.sigma, q.rho_diff) + _g_alpha(q.alpha, q.sigma, absorbed)
    values = np.where(np.isnan(values), np.inf, values)
    return _argmin_last(values, taus)


def rdp_bound_standard(q: AccountantQuery) -> BoundValue:
    """
    Minimum over tau in {0..K-1} of (K - tau) g(rho) + g(w_tau gamma^(K - tau)).

    Returns:
        (epsilon, minimizing tau); ties report the largest tau
    """
    standard = replace(q, mode=Mode.STANDARD)
    return _laplace_scan(standard, lambda taus: wasserstein_tau(q.rho_diff, q.gamma_max, taus))


def rdp_bound_personalized(q: AccountantQuery) -> BoundValue:
    """Personalized bound: 0 for K = 1, otherwise the tau >= 1 part of the standard scan."""
    personalized = replace(q, mode=Mode.PERSONALIZED)
    return _laplace_scan(personalized, lambda taus: wasserstein_tau(q.rho_diff, q.gamma_max, taus))


def rdp_bound_asymptotic(q: AccountantQuery) -> BoundValue:
    """
    Closed-form large-K envelope of the standard bound and its suggested tau.

    Returns:
        (bound value, suggested tau clamped into {0..K-1})
    """
    if q.rho_diff == 0:
        return 0.0, q.K - 1
    log_inv_gamma = math.log(1.0 / q.gamma_max)
    inner = (1.0 / q.rho_diff + 1.0 / (1.0 - q.gamma_max)) * log_inv_gamma
    bound = q.rho_diff / (q.sigma * log_inv_gamma) * (math.log(inner) + 1.0)
    tau = math.ceil(q.K - math.log(inner) / log_inv_gamma)
    return max(bound, 0.0), min(max(tau, 0), q.K - 1)


def rdp_bound_composition(q: AccountantQuery) -> float:
    """K-fold composition of one Laplace mechanism with sensitivity rho_diff per step."""
    return q.K * g_alpha(q.alpha, q.sigma, q.rho_diff)


def rdp_bound_diameter(q: AccountantQuery) -> BoundValue:
    """Scan with the tracked distance replaced by a fixed space diameter D."""
    if q.tracking.kind != 'diameter':
        raise ValueError("diameter bound needs Tracking.with_diameter(D)")
    diameter = q.tracking.diameter
    return _laplace_scan(q, lambda taus: np.full(len(taus), diameter))


def diameter_projection(radius: float = 1.0) -> float:
    """Diameter of the unit l1 ball used by the projection step."""
    return float(radius)


def diameter_degree_threshold(g: Union[SparseGraph, int], eta: float) -> float:
    """Diameter induced by degree thresholding: eta * sum_i d_i."""
    degree_sum = g.degree_sum if isinstance(g, SparseGraph) else int(g)
    return eta * degree_sum


def diameter_uniform_threshold(n: Union[SparseGraph, int], eta: float) -> float:
    """Diameter induced by uniform thresholding: eta * n."""
    n = n.n if isinstance(n, SparseGraph) else int(n)
    return eta * n


def rdp_bound_gaussian(q: AccountantQuery) -> BoundValue:
    """
    Gaussian-noise variant: min over tau of alpha / (2 sigma^2) *
    [(K - tau) rho^2 + (w_tau gamma^(K - tau))^2], sigma being the standard deviation.
    """
    taus = _taus(q)
    if taus is None:
        return 0.0, 0
    remaining = q.K - taus
    absorbed = wasserstein_tau(q.rho_diff, q.gamma_max, taus) * np.power(q.gamma_max, remaining)
    with np.errstate(over='ignore'):
        values = q.alpha / (2.0 * q.sigma ** 2) * (remaining * q.rho_diff ** 2 + absorbed ** 2)
    return _argmin_last(values, taus)


def evaluate_bound(kind: BoundKind, q: AccountantQuery) -> BoundValue:
    """Dispatch to the bound named by ``kind``; composition reports no tau."""
    kind = BoundKind(kind)
    if kind is BoundKind.PERSONALIZED:
        return rdp_bound_personalized(q)
    if kind is BoundKind.STANDARD:
        return rdp_bound_standard(q)
    if kind is BoundKind.COMPOSITION:
        return rdp_bound_composition(q), None
    if kind is BoundKind.GAUSSIAN:
        return rdp_bound_gaussian(q)
    return rdp_bound_diameter(q)


def _check_grid(alpha_grid: Sequence[float]):
    if len(alpha_grid) == 0:
        raise ValueError("alpha grid is empty")
    if any(not a > 1 for a in alpha_grid):
        raise ValueError("every grid alpha must be > 1")


def rdp_to_dp(rdp_curve: Callable[[float], float], delta: float,
              alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID) -> Tuple[float, float]:
    """
    Convert an RDP curve to (eps, delta)-DP: min over the grid of eps(alpha) + ln(1/delta)/(alpha-1).

    Args:
        rdp_curve: alpha -> eps_RDP(alpha)
        delta: Target delta in (0, 1)
        alpha_grid: Candidate orders

    Returns:
        (eps_DP, minimizing alpha)
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    _check_grid(alpha_grid)
    log_inv_delta = math.log(1.0 / delta)
    values = [rdp_curve(a) + log_inv_delta / (a - 1) for a in alpha_grid]
    best = int(np.argmin(values))
    return float(values[best]), float(alpha_grid[best])


def _smallest_passing(bound: Callable[[float], float], target: float, start: float,
                      rel_tol: float, max_steps: int, floor: float) -> float:
    """Smallest x >= floor with bound(x) <= target, bound non-increasing in x."""
    hi = start
    while bound(hi) > target:
        hi *= 2.0
        if hi > _SIGMA_MAX:
            raise InfeasibleBudgetError(f"no noise scale reaches epsilon {target:.6g}")
    lo = hi / 2.0
    while bound(lo) <= target:
        hi = lo
        lo /= 2.0
        if lo < floor:
            return max(hi, floor)
    for _ in range(max_steps):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if bound(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def _residual(eps_dp: float, conversion: float) -> float:
    # Round down so that residual + conversion never exceeds eps_dp in floating point.
    residual = eps_dp - conversion
    while residual > 0 and residual + conversion > eps_dp:
        residual = float(np.nextafter(residual, -np.inf))
    return residual


def _bound_at(kind: BoundKind, q: AccountantQuery) -> Callable[[float], float]:
    return lambda sigma: evaluate_bound(kind, replace(q, sigma=sigma))[0]


def calibrate_sigma(target: Union[DpBudget, float], q: AccountantQuery,
                    bound_kind: BoundKind = BoundKind.STANDARD,
                    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
                    rel_tol: float = DEFAULT_REL_TOL,
                    max_steps: int = DEFAULT_MAX_STEPS,
                    sigma_min: float = DEFAULT_SIGMA_MIN) -> float:
    """
    Smallest noise scale whose bound meets the target.

    A float target is an RDP budget at ``q.alpha``. A DpBudget target is met
    through the RDP-to-DP conversion: for each grid alpha with a positive
    residual eps_DP - ln(1/delta)/(alpha-1) the smallest passing sigma is
    found by bisection, and the minimum over alpha is returned.

    Args:
        target: RDP epsilon at q.alpha, or a DP budget
        q: Query whose sigma (and, for DP targets, alpha) is ignored
        bound_kind: Bound to calibrate against
        alpha_grid: Candidate orders for DP targets
        rel_tol: Relative bisection tolerance on sigma
        max_steps: Bisection step cap
        sigma_min: Returned when any sigma passes (zero distortion)

    Returns:
        Calibrated sigma
    """
    bound_kind = BoundKind(bound_kind)
    if q.rho_diff == 0:
        return sigma_min
    start = max(q.rho_diff, sigma_min)

    if not isinstance(target, DpBudget):
        if not target > 0:
            raise ValueError(f"target epsilon must be > 0, got {target}")
        return _smallest_passing(_bound_at(bound_kind, q), float(target), start,
                                 rel_tol, max_steps, sigma_min)

    _check_grid(alpha_grid)
    log_inv_delta = math.log(1.0 / target.delta)
    best = math.inf
    for alpha in alpha_grid:
        residual = _residual(target.eps_dp, log_inv_delta / (alpha - 1))
        if residual <= 0:
            continue
        sigma = _smallest_passing(_bound_at(bound_kind, replace(q, alpha=alpha)), residual,
                                  start, rel_tol, max_steps, sigma_min)
        best = min(best, sigma)
    if math.isinf(best):
        raise InfeasibleBudgetError(
            f"eps_dp={target.eps_dp:.6g} is infeasible at delta={target.delta:.3g}: "
            f"ln(1/delta)/(alpha-1) exceeds it on the whole alpha grid"
        )
    return best


def account(q: AccountantQuery, bound_kind: BoundKind = BoundKind.STANDARD,
            delta: Optional[float] = None,
            alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID) -> AccountingResult:
    """Evaluate a bound at q.alpha and, when delta is given, its DP conversion."""
    bound_kind = BoundKind(bound_kind)
    epsilon, tau = evaluate_bound(bound_kind, q)
    result = AccountingResult(
        bound_kind=bound_kind.value,
        epsilon_rdp=epsilon,
        alpha=q.alpha,
        tau_star=tau,
        inputs={
            'sigma': q.sigma,
            'K': q.K,
            'rho_diff': q.rho_diff,
            'gamma_max': q.gamma_max,
            'mode': q.mode.value,
            'diameter': q.tracking.diameter,
        },
    )
    if delta is not None:
        result.epsilon_dp, result.alpha_dp = rdp_to_dp(
            lambda a: evaluate_bound(bound_kind, replace(q, alpha=a))[0], delta, alpha_grid
        )
        result.delta = delta
    return result


def calibrate(target: DpBudget, q: AccountantQuery,
              bound_kind: BoundKind = BoundKind.STANDARD,
              alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
              rel_tol: float = DEFAULT_REL_TOL) -> CalibrationResult:
    """Calibrate sigma to a DP budget and re-account at the returned scale."""
    bound_kind = BoundKind(bound_kind)
    sigma = calibrate_sigma(target, q, bound_kind, alpha_grid, rel_tol)
    calibrated = replace(q, sigma=sigma)
    achieved, alpha_star = rdp_to_dp(
        lambda a: evaluate_bound(bound_kind, replace(calibrated, alpha=a))[0],
        target.delta, alpha_grid,
    )
    _, tau_star = evaluate_bound(bound_kind, replace(calibrated, alpha=alpha_star))
    logging.info('Calibrated sigma=%.6g (%s) for eps_dp=%.4g: achieved %.6g at alpha=%g',
                 sigma, bound_kind.value, target.eps_dp, achieved, alpha_star)
    return CalibrationResult(bound_kind=bound_kind.value, achieved_epsilon=achieved,
                             alpha_star=alpha_star, tau_star=tau_star, sigma=sigma)


def rr_rdp(p: float, alpha: float) -> float:
    """
    RDP of per-entry randomized response: with probability p the bit is
    redrawn uniformly from {0, 1}, so it survives with probability 1 - p/2.

    Args:
        p: Redraw probability in (0, 1]
        alpha: Renyi order, > 1

    Returns:
        Two-point Renyi divergence (``inf`` as p -> 0)
    """
    if not 0 < p <= 1:
        raise ValueError(f"flip probability must lie in (0, 1], got {p}")
    if not alpha > 1:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    keep = 1.0 - p / 2.0
    flip = p / 2.0
    log_keep, log_flip = math.log(keep), math.log(flip)
    value = logsumexp([
        alpha * log_keep + (1 - alpha) * log_flip,
        alpha * log_flip + (1 - alpha) * log_keep,
    ]) / (alpha - 1)
    return max(float(value), 0.0)


def flip_dp_epsilon(p: float, delta: float,
                    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID) -> Tuple[float, float]:
    """(eps_DP, alpha) of randomized response with redraw probability p."""
    return rdp_to_dp(lambda a: rr_rdp(p, a), delta, alpha_grid)


def calibrate_flip_prob(target: DpBudget,
                        alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
                        rel_tol: float = DEFAULT_REL_TOL,
                        max_steps: int = DEFAULT_MAX_STEPS) -> float:
    """
    Smallest redraw probability p in (0, 1] whose DP epsilon meets the target.

    Raises:
        InfeasibleBudgetError: even p = 1 misses the target (delta term too large)
    """
    if flip_dp_epsilon(1.0, target.delta, alpha_grid)[0] > target.eps_dp:
        raise InfeasibleBudgetError(
            f"eps_dp={target.eps_dp:.6g} is infeasible for edge flipping at delta={target.delta:.3g}"
        )
    lo, hi = 0.0, 1.0
    for _ in range(max_steps):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if flip_dp_epsilon(mid, target.delta, alpha_grid)[0] <= target.eps_dp:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_flip(target: DpBudget,
                   alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID) -> CalibrationResult:
    """Calibrate p and report the epsilon it achieves."""
    p = calibrate_flip_prob(target, alpha_grid)
    achieved, alpha_star = flip_dp_epsilon(p, target.delta, alpha_grid)
    logging.info('Calibrated flip probability p=%.6g for eps_dp=%.4g', p, target.eps_dp)
    return CalibrationResult(bound_kind='randomized_response', achieved_epsilon=achieved,
                             alpha_star=alpha_star, p=p)

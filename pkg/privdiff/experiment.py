"""
Privacy-utility sweeps and accountant curves.

A sweep calibrates the noise scale (or flip probability) for every
(epsilon, eta) cell, runs paired trials from shared random seed nodes and
aggregates NDCG@R / Recall@R against the noise-free PPR.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from absl import logging

from .accountant import (
    AccountantQuery,
    BoundKind,
    DpBudget,
    Mode,
    Tracking,
    calibrate,
    calibrate_flip,
    calibrate_sigma,
    diameter_degree_threshold,
    diameter_projection,
    diameter_uniform_threshold,
    rdp_bound_asymptotic,
    rdp_bound_composition,
    rdp_bound_diameter,
    rdp_bound_gaussian,
    rdp_bound_personalized,
    rdp_bound_standard,
    rho_diff,
    wasserstein_tau,
)
from .baselines import run_edge_flipping
from .config import CurvesConfig, ExperimentConfig, Method, Settings
from .engine import (
    DiffusionSchedule,
    ThresholdPolicy,
    postprocess_scores,
    ppr_schedule,
    run_exact_diffusion,
    run_noisy_diffusion,
    seed_vector,
)
from .errors import InfeasibleBudgetError, SizeGuardError
from .graph import GraphSummary, SparseGraph, load_edge_list
from .metrics import ndcg_at_r, recall_at_r
from .noise import RngStream
from .serialization import write_csv, write_json_lines

SWEEP_COLUMNS = [
    'method', 'eps_target', 'eta', 'delta', 'status', 'best_eta', 'sigma', 'p',
    'eps_achieved', 'alpha_star', 'tau_star', 'trials', 'ndcg_mean', 'ndcg_std', 'ndcg_ci',
    'recall_mean', 'recall_std', 'recall_ci',
]

CURVE_COLUMNS = [
    'curve', 'K', 'tau', 'eps_dp', 'standard', 'personalized', 'composition',
    'diameter_projection', 'diameter_threshold', 'diameter_uniform', 'gaussian', 'asymptotic',
    'asymptotic_tau', 'w_tau', 'diameter', 'w_over_diameter', 'sigma_standard',
    'sigma_composition', 'sigma_ratio',
]

Z_95 = 1.96


@dataclass
class TrialReport:
    """Outcome of one private release from one seed node."""
    method: str
    eps_target: float
    eta: Optional[float]
    trial_id: int
    seed_node: int
    stream_id: int
    ndcg: float
    recall: float
    runtime: float
    sigma: Optional[float] = None
    p: Optional[float] = None
    stream_ids: List[str] = field(default_factory=list)


@dataclass
class SweepRow:
    """Aggregate of the trials of one (method, epsilon, eta) cell."""
    method: str
    eps_target: float
    eta: Optional[float]
    delta: float
    status: str = 'ok'
    best_eta: bool = False
    sigma: Optional[float] = None
    p: Optional[float] = None
    eps_achieved: Optional[float] = None
    alpha_star: Optional[float] = None
    tau_star: Optional[int] = None
    trials: int = 0
    ndcg_mean: Optional[float] = None
    ndcg_std: Optional[float] = None
    ndcg_ci: Optional[float] = None
    recall_mean: Optional[float] = None
    recall_std: Optional[float] = None
    recall_ci: Optional[float] = None

    def to_dict(self) -> Dict:
        return {column: getattr(self, column) for column in SWEEP_COLUMNS}


@dataclass
class SweepResult:
    rows: List[SweepRow]
    trials: List[TrialReport]
    summary: GraphSummary
    seed_nodes: List[int]
    delta: float

    @property
    def all_infeasible(self) -> bool:
        return all(row.status == 'infeasible' for row in self.rows)


def aggregate(values: List[float]) -> Tuple[float, float, float]:
    """Mean, sample standard deviation and normal-approximation 95% CI half-width."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return mean, std, Z_95 * std / math.sqrt(len(values))


def sample_seed_nodes(n: int, trials: int, base_seed: int) -> List[int]:
    """Seed nodes shared by every method and grid cell (stream 0 of the base seed)."""
    generator = RngStream(base_seed, 0).generator()
    return [int(v) for v in generator.integers(0, n, size=trials)]


def _sweep_query(cfg: ExperimentConfig, g: SparseGraph, sched: DiffusionSchedule,
                 eta: float) -> AccountantQuery:
    mode = Mode.PERSONALIZED if cfg.personalized else Mode.STANDARD
    tracking = Tracking.wasserstein()
    if cfg.bound_kind is BoundKind.DIAMETER_PROJECTION:
        tracking = Tracking.with_diameter(diameter_projection())
    elif cfg.bound_kind is BoundKind.DIAMETER_THRESHOLD:
        diameter = (diameter_degree_threshold(g, eta) if cfg.threshold_mode.degree_based
                    else diameter_uniform_threshold(g, eta))
        tracking = Tracking.with_diameter(diameter)
    return AccountantQuery.for_schedule(sched, eta, alpha=2.0, sigma=1.0, K=cfg.K,
                                        mode=mode, tracking=tracking)


class _Progress:
    """Progress lines in the "Progress: x% (i/n), ETA" register."""

    def __init__(self, total: int):
        self.total = max(total, 1)
        self.done = 0
        self.start = time.time()

    def advance(self, label: str):
        self.done += 1
        elapsed = time.time() - self.start
        eta = elapsed / self.done * (self.total - self.done)
        logging.info('Progress: %.1f%% (%d/%d), ETA: %.0fs [%s]',
                     100.0 * self.done / self.total, self.done, self.total, eta, label)


class SweepRunner:
    """Runs the grid of an ExperimentConfig on one loaded graph."""

    def __init__(self, cfg: ExperimentConfig, g: SparseGraph, summary: GraphSummary,
                 settings: Optional[Settings] = None):
        self.cfg = cfg
        self.g = g
        self.summary = summary
        self.settings = settings or Settings.from_env()
        self.threads = cfg.threads or self.settings.threads
        self.node_limit = cfg.node_limit or self.settings.node_limit
        self.delta = cfg.delta if cfg.delta is not None else 1.0 / g.num_edges
        self.sched = ppr_schedule(cfg.beta)
        self.seed_nodes = sample_seed_nodes(g.n, cfg.trials, cfg.base_seed)
        self._references: Dict[int, np.ndarray] = {}

    def reference(self, node: int) -> np.ndarray:
        if node not in self._references:
            s = seed_vector(self.g.n, [node])
            self._references[node] = run_exact_diffusion(self.g, self.sched, s, self.cfg.K)
        return self._references[node]

    def _score(self, scores: np.ndarray, node: int) -> Tuple[float, float]:
        exclude = [node] if self.cfg.personalized else None
        true = self.reference(node)
        ndcg = ndcg_at_r(scores, true, self.cfg.R, exclude, binary=self.cfg.binary_relevance)
        recall = recall_at_r(scores, true, self.cfg.R, exclude)
        return ndcg, recall

    def _stream_id(self, method_index: int, eps_index: int, eta_index: int, trial: int) -> int:
        cell = (method_index * len(self.cfg.eps_grid) + eps_index) * len(self.cfg.eta_grid) + eta_index
        return cell * self.cfg.trials + trial + 1

    def _noisy_trial(self, row: SweepRow, trial: int, stream_id: int) -> TrialReport:
        cfg = self.cfg
        node = self.seed_nodes[trial]
        start = time.time()
        policy = ThresholdPolicy(row.eta, cfg.threshold_mode,
                                 node if cfg.personalized else None)
        result = run_noisy_diffusion(
            self.g, self.sched, policy, seed_vector(self.g.n, [node]), cfg.K, row.sigma,
            noise_kind=cfg.noise_kind, rng=RngStream(cfg.base_seed, stream_id),
            project_unit_l1=cfg.project_l1,
        )
        scores = postprocess_scores(result.scores) if cfg.postprocess else result.scores
        ndcg, recall = self._score(scores, node)
        return TrialReport(method=row.method, eps_target=row.eps_target, eta=row.eta,
                           trial_id=trial, seed_node=node, stream_id=stream_id, ndcg=ndcg,
                           recall=recall, runtime=time.time() - start, sigma=row.sigma,
                           stream_ids=result.stream_ids)

    def _flip_trial(self, row: SweepRow, trial: int, stream_id: int) -> TrialReport:
        cfg = self.cfg
        node = self.seed_nodes[trial]
        start = time.time()
        scores = run_edge_flipping(self.g, node, row.p, cfg.beta, cfg.K,
                                   RngStream(cfg.base_seed, stream_id), self.node_limit)
        ndcg, recall = self._score(scores, node)
        return TrialReport(method=row.method, eps_target=row.eps_target, eta=None,
                           trial_id=trial, seed_node=node, stream_id=stream_id, ndcg=ndcg,
                           recall=recall, runtime=time.time() - start, p=row.p,
                           stream_ids=[RngStream(cfg.base_seed, stream_id).label])

    def _calibrate_row(self, row: SweepRow) -> SweepRow:
        budget = DpBudget(row.eps_target, self.delta)
        try:
            if row.method == Method.EDGE_FLIPPING.value:
                result = calibrate_flip(budget, self.cfg.alpha_grid)
                row.p = result.p
            else:
                query = _sweep_query(self.cfg, self.g, self.sched, row.eta)
                result = calibrate(budget, query, self.cfg.bound_kind, self.cfg.alpha_grid)
                row.sigma = result.sigma
                row.tau_star = result.tau_star
        except InfeasibleBudgetError as e:
            logging.warning('Row %s eps=%g eta=%s infeasible: %s',
                            row.method, row.eps_target, row.eta, e)
            row.status = 'infeasible'
            return row
        row.eps_achieved = result.achieved_epsilon
        row.alpha_star = result.alpha_star
        return row

    def _run_trials(self, row: SweepRow, method_index: int, eps_index: int,
                    eta_index: int) -> List[TrialReport]:
        run = self._flip_trial if row.method == Method.EDGE_FLIPPING.value else self._noisy_trial
        timeout = self.cfg.trial_timeout
        reports = []
        # A trial cannot be interrupted; on timeout its thread is abandoned, not joined.
        pool = ThreadPoolExecutor(max_workers=self.threads)
        try:
            futures = [
                pool.submit(run, row, t, self._stream_id(method_index, eps_index, eta_index, t))
                for t in range(self.cfg.trials)
            ]
            for trial, future in enumerate(futures):
                try:
                    report = future.result(timeout=timeout)
                except FutureTimeoutError:
                    logging.warning('Trial %d still running after the %.1fs limit; row skipped',
                                    trial, timeout)
                    row.status = 'skipped'
                except SizeGuardError as e:
                    logging.warning('Row %s eps=%g skipped: %s', row.method, row.eps_target, e)
                    row.status = 'skipped'
                if row.status == 'ok':
                    reports.append(report)
                    if timeout is not None and report.runtime > timeout:
                        logging.warning('Trial %d ran %.1fs, over the %.1fs limit; row skipped',
                                        report.trial_id, report.runtime, timeout)
                        row.status = 'skipped'
                if row.status != 'ok':
                    break
        finally:
            pool.shutdown(wait=row.status == 'ok', cancel_futures=True)
        return reports

    def run(self) -> SweepResult:
        cfg = self.cfg
        cells = []
        for method_index, method in enumerate(cfg.methods):
            etas = [None] if method is Method.EDGE_FLIPPING else cfg.eta_grid
            for eps_index, eps in enumerate(cfg.eps_grid):
                for eta_index, eta in enumerate(etas):
                    cells.append((method_index, eps_index, eta_index,
                                  SweepRow(method=method.value, eps_target=eps, eta=eta,
                                           delta=self.delta)))

        for node in sorted(set(self.seed_nodes)):
            self.reference(node)
        progress = _Progress(len(cells))
        all_trials = []
        for method_index, eps_index, eta_index, row in cells:
            self._calibrate_row(row)
            if row.status == 'ok':
                reports = self._run_trials(row, method_index, eps_index, eta_index)
                all_trials.extend(reports)
                if row.status == 'ok':
                    row.trials = len(reports)
                    row.ndcg_mean, row.ndcg_std, row.ndcg_ci = aggregate([r.ndcg for r in reports])
                    row.recall_mean, row.recall_std, row.recall_ci = aggregate(
                        [r.recall for r in reports]
                    )
            progress.advance(f"{row.method} eps={row.eps_target:g} eta={row.eta}")

        rows = [cell[3] for cell in cells]
        mark_best_eta(rows)
        return SweepResult(rows=rows, trials=all_trials, summary=self.summary,
                           seed_nodes=self.seed_nodes, delta=self.delta)


def mark_best_eta(rows: List[SweepRow]):
    """Flag the row with the highest mean NDCG per (method, epsilon); ties go to the smaller eta."""
    groups: Dict[Tuple[str, float], List[SweepRow]] = {}
    for row in rows:
        row.best_eta = False
        if row.status == 'ok':
            groups.setdefault((row.method, row.eps_target), []).append(row)
    for group in groups.values():
        best = min(group, key=lambda r: (-r.ndcg_mean, r.eta if r.eta is not None else 0.0))
        best.best_eta = True


def run_privacy_utility_sweep(cfg: ExperimentConfig,
                              settings: Optional[Settings] = None) -> SweepResult:
    """
    Load the dataset, run the sweep and write the configured outputs.

    Args:
        cfg: Experiment configuration
        settings: Environment settings (read from the environment when None)

    Returns:
        Rows, per-trial reports and the seed nodes used
    """
    with open(cfg.dataset.path) as source:
        loaded = load_edge_list(source, one_indexed=cfg.dataset.one_indexed,
                                extract_lcc=cfg.dataset.extract_lcc)
    logging.info('Loaded %s: n=%d, |E|=%d', cfg.dataset.path, loaded.summary.n,
                 loaded.summary.num_edges)
    result = SweepRunner(cfg, loaded.graph, loaded.summary, settings).run()
    write_sweep_outputs(result, cfg)
    return result


def write_sweep_outputs(result: SweepResult, cfg: ExperimentConfig):
    if cfg.output_csv:
        with open(cfg.output_csv, 'w', newline='') as sink:
            write_csv([row.to_dict() for row in result.rows], sink, SWEEP_COLUMNS)
        logging.info('Sweep table saved to: %s', cfg.output_csv)
    if cfg.output_jsonl:
        with open(cfg.output_jsonl, 'w') as sink:
            write_json_lines(result.trials, sink)
        logging.info('Trial reports saved to: %s', cfg.output_jsonl)


def _calibrated_or_none(budget: DpBudget, query: AccountantQuery, kind: BoundKind,
                        alpha_grid) -> Optional[float]:
    try:
        return calibrate_sigma(budget, query, kind, alpha_grid)
    except InfeasibleBudgetError:
        return None


def emit_bound_curves(cfg: CurvesConfig) -> List[Dict]:
    """
    Rows of three curve families:

    - ``rdp_vs_K``: every bound for K = 1..K_max at fixed alpha and sigma
    - ``w_vs_D``: tracked distance w_tau against the threshold diameter
    - ``sigma_vs_eps``: calibrated sigma under the standard bound and under composition
    """
    sched = DiffusionSchedule.constant(*cfg.gamma)
    rho = rho_diff(sched, cfg.eta)
    d_threshold = diameter_degree_threshold(cfg.degree_sum, cfg.eta)
    d_uniform = diameter_uniform_threshold(cfg.n, cfg.eta) if cfg.n else None
    rows = []

    for K in range(1, cfg.K_max + 1):
        q = AccountantQuery(alpha=cfg.alpha, sigma=cfg.sigma, K=K, rho_diff=rho,
                            gamma_max=sched.gamma_max)
        asymptotic, asymptotic_tau = rdp_bound_asymptotic(q)
        row = {
            'curve': 'rdp_vs_K',
            'K': K,
            'standard': rdp_bound_standard(q)[0],
            'personalized': rdp_bound_personalized(q)[0],
            'composition': rdp_bound_composition(q),
            'diameter_projection': rdp_bound_diameter(
                replace(q, tracking=Tracking.with_diameter(diameter_projection())))[0],
            'diameter_threshold': rdp_bound_diameter(
                replace(q, tracking=Tracking.with_diameter(d_threshold)))[0],
            'gaussian': rdp_bound_gaussian(q)[0],
            'asymptotic': asymptotic,
            'asymptotic_tau': asymptotic_tau,
        }
        if d_uniform is not None:
            row['diameter_uniform'] = rdp_bound_diameter(
                replace(q, tracking=Tracking.with_diameter(d_uniform)))[0]
        rows.append(row)

    for tau in range(cfg.K_max + 1):
        w = wasserstein_tau(rho, sched.gamma_max, tau)
        rows.append({'curve': 'w_vs_D', 'tau': tau, 'w_tau': w, 'diameter': d_threshold,
                     'w_over_diameter': w / d_threshold})

    base = AccountantQuery(alpha=2.0, sigma=1.0, K=cfg.calib_K, rho_diff=rho,
                           gamma_max=sched.gamma_max)
    for eps in cfg.eps_grid:
        budget = DpBudget(eps, cfg.delta)
        sigma_std = _calibrated_or_none(budget, base, BoundKind.STANDARD, cfg.alpha_grid)
        sigma_comp = _calibrated_or_none(budget, base, BoundKind.COMPOSITION, cfg.alpha_grid)
        ratio = sigma_comp / sigma_std if sigma_std and sigma_comp else None
        rows.append({'curve': 'sigma_vs_eps', 'K': cfg.calib_K, 'eps_dp': eps,
                     'sigma_standard': sigma_std, 'sigma_composition': sigma_comp,
                     'sigma_ratio': ratio})

    if cfg.output_csv:
        with open(Path(cfg.output_csv), 'w', newline='') as sink:
            write_csv(rows, sink, CURVE_COLUMNS)
        logging.info('Bound curves saved to: %s', cfg.output_csv)
    return rows

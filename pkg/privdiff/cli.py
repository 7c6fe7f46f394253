"""The ``privdiff`` command: ingest, diffuse, account, calibrate, verify, sweep, curves, flip-baseline."""

import argparse
import os
import sys
from typing import Optional, Sequence

from absl import logging

from . import accountant, oracles
from .accountant import AccountantQuery, BoundKind, DpBudget, Mode, Tracking
from .baselines import FlipConfig, edge_flipping, flipped_ppr
from .config import CurvesConfig, ExperimentConfig, Settings, load_config
from .engine import (
    DiffusionSchedule,
    NoiseKind,
    ThresholdMode,
    ThresholdPolicy,
    postprocess_scores,
    ppr_schedule,
    run_exact_diffusion,
    run_noisy_diffusion,
    seed_vector,
)
from .errors import InfeasibleBudgetError, PrivDiffError
from .experiment import CURVE_COLUMNS, SWEEP_COLUMNS, emit_bound_curves, run_privacy_utility_sweep
from .graph import LoadedGraph, load_edge_list, write_edge_list, write_id_map
from .noise import RngStream
from .serialization import dumps, write_csv, write_json_lines, write_vector

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

_LOG_LEVELS = {
    'debug': logging.DEBUG,
    'info': logging.INFO,
    'warning': logging.WARNING,
    'error': logging.ERROR,
}


def _add_graph_args(parser: argparse.ArgumentParser, flag: str = '--graph'):
    parser.add_argument(flag, required=True, help="Edge-list file")
    parser.add_argument('--one-indexed', action='store_true', help="Node ids start at 1")
    parser.add_argument('--lcc', action='store_true', help="Keep only the largest connected component")


def _add_schedule_args(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--beta', type=float, help="PPR continuation probability (default 0.8)")
    group.add_argument('--gamma', type=float, nargs=3, metavar=('G1', 'G2', 'G3'),
                       help="Constant schedule triple")


def _add_query_args(parser: argparse.ArgumentParser):
    _add_schedule_args(parser)
    parser.add_argument('--K', type=int, required=True, help="Diffusion steps")
    parser.add_argument('--eta', type=float, help="Threshold eta (gives rho_diff)")
    parser.add_argument('--rho-diff', type=float, help="Single-step distortion, instead of --eta")
    parser.add_argument('--gamma-max', type=float, help="Contraction coefficient with --rho-diff")
    parser.add_argument('--personalized', action='store_true', help="Personalized accounting")
    parser.add_argument('--bound', choices=[k.value for k in BoundKind], default='standard')
    parser.add_argument('--diameter', type=float, help="Space diameter D for diameter bounds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='privdiff', description="Edge-level private graph diffusion")
    parser.add_argument('--verbose', '-v', action='store_true', help="Debug logging")
    sub = parser.add_subparsers(dest='command', required=True)

    ingest = sub.add_parser('ingest', help="Validate an edge list and write its canonical form")
    _add_graph_args(ingest, '--input')
    ingest.add_argument('--output', help="Canonical edge list destination")
    ingest.add_argument('--id-map', help="Original-to-new id map destination")

    diffuse = sub.add_parser('diffuse', help="Run exact or noisy diffusion from seed nodes")
    _add_graph_args(diffuse)
    _add_schedule_args(diffuse)
    diffuse.add_argument('--seed-node', type=int, nargs='+', required=True)
    diffuse.add_argument('--K', type=int, default=100)
    diffuse.add_argument('--eta', type=float, help="Threshold; exact diffusion when omitted")
    diffuse.add_argument('--mode', choices=[m.value for m in ThresholdMode], default='symmetric_degree')
    diffuse.add_argument('--personalized', action='store_true', help="Exempt a single seed node from clipping")
    diffuse.add_argument('--sigma', type=float, default=0.0)
    diffuse.add_argument('--noise', choices=[k.value for k in NoiseKind], default='laplace')
    diffuse.add_argument('--project', action='store_true', help="Project iterates onto the unit l1 ball")
    diffuse.add_argument('--postprocess', action='store_true', help="Clip released scores into [0, 1]")
    diffuse.add_argument('--seed', type=int, default=0, help="Base random seed")
    diffuse.add_argument('--stream', type=int, default=1, help="Stream id")
    diffuse.add_argument('--format', choices=['json', 'binary'], default='json')
    diffuse.add_argument('--output', help="Destination (stdout when omitted)")

    account = sub.add_parser('account', help="Evaluate a privacy bound")
    _add_query_args(account)
    account.add_argument('--alpha', type=float, default=2.0)
    account.add_argument('--sigma', type=float, required=True)
    account.add_argument('--delta', type=float, help="Also convert to (eps, delta)-DP")

    calib = sub.add_parser('calibrate', help="Calibrate sigma (or flip probability) to a budget")
    calib.add_argument('--epsilon', type=float, required=True, help="Target DP epsilon")
    calib.add_argument('--delta', type=float, required=True)
    calib.add_argument('--flip', action='store_true', help="Calibrate the edge-flipping probability")
    calib.add_argument('--K', type=int, default=100)
    _add_schedule_args(calib)
    calib.add_argument('--eta', type=float)
    calib.add_argument('--rho-diff', type=float)
    calib.add_argument('--gamma-max', type=float)
    calib.add_argument('--personalized', action='store_true')
    calib.add_argument('--bound', choices=[k.value for k in BoundKind], default='standard')
    calib.add_argument('--diameter', type=float)

    verify = sub.add_parser('verify', help="Run the oracle suite")
    verify.add_argument('--seed', type=int, default=0)
    verify.add_argument('--graphs', type=int, default=5)

    sweep = sub.add_parser('sweep', help="Privacy-utility sweep")
    sweep.add_argument('--config', help="JSON ExperimentConfig")
    sweep.add_argument('--dataset', dest='dataset_path')
    sweep.add_argument('--methods', nargs='+', choices=['noisy_diffusion', 'edge_flipping'])
    sweep.add_argument('--eps', dest='eps_grid', type=float, nargs='+')
    sweep.add_argument('--eta', dest='eta_grid', type=float, nargs='+')
    sweep.add_argument('--delta', type=float)
    sweep.add_argument('--beta', type=float)
    sweep.add_argument('--K', type=int)
    sweep.add_argument('--R', type=int)
    sweep.add_argument('--trials', type=int)
    sweep.add_argument('--seed', dest='base_seed', type=int)
    sweep.add_argument('--bound', dest='bound_kind', choices=[k.value for k in BoundKind])
    sweep.add_argument('--mode', dest='threshold_mode', choices=[m.value for m in ThresholdMode])
    sweep.add_argument('--noise', dest='noise_kind', choices=[k.value for k in NoiseKind])
    sweep.add_argument('--standard', action='store_true', help="Standard (non-personalized) accounting")
    sweep.add_argument('--project', action='store_true', help="Project iterates onto the unit l1 ball")
    sweep.add_argument('--threads', type=int)
    sweep.add_argument('--timeout', dest='trial_timeout', type=float)
    sweep.add_argument('--output-csv')
    sweep.add_argument('--output-jsonl')

    curves = sub.add_parser('curves', help="Accountant curves as CSV")
    curves.add_argument('--config', help="JSON CurvesConfig")
    curves.add_argument('--gamma', type=float, nargs=3, metavar=('G1', 'G2', 'G3'))
    curves.add_argument('--alpha', type=float)
    curves.add_argument('--sigma', type=float)
    curves.add_argument('--eta', type=float)
    curves.add_argument('--K-max', dest='K_max', type=int)
    curves.add_argument('--degree-sum', type=int)
    curves.add_argument('--n', type=int)
    curves.add_argument('--delta', type=float)
    curves.add_argument('--output', dest='output_csv')

    flip = sub.add_parser('flip-baseline', help="Edge-flipping release followed by exact PPR")
    _add_graph_args(flip)
    flip.add_argument('--seed-node', type=int, required=True)
    group = flip.add_mutually_exclusive_group(required=True)
    group.add_argument('--p', type=float, help="Redraw probability")
    group.add_argument('--epsilon', type=float, help="Target DP epsilon (calibrates p)")
    flip.add_argument('--delta', type=float, help="Target delta (default 1/|E|)")
    flip.add_argument('--beta', type=float, default=0.8)
    flip.add_argument('--K', type=int, default=100)
    flip.add_argument('--seed', type=int, default=0)
    flip.add_argument('--stream', type=int, default=1)
    flip.add_argument('--node-limit', type=int)
    flip.add_argument('--format', choices=['json', 'binary'], default='json')
    flip.add_argument('--output')
    return parser


def _load_graph(path: str, one_indexed: bool, lcc: bool) -> LoadedGraph:
    with open(path) as source:
        return load_edge_list(source, one_indexed=one_indexed, extract_lcc=lcc)


def _schedule(args) -> DiffusionSchedule:
    if getattr(args, 'gamma', None):
        return DiffusionSchedule.constant(*args.gamma)
    return ppr_schedule(args.beta if args.beta is not None else 0.8)


def _query(args, alpha: float, sigma: float) -> AccountantQuery:
    mode = Mode.PERSONALIZED if args.personalized else Mode.STANDARD
    tracking = Tracking.with_diameter(args.diameter) if args.diameter else Tracking.wasserstein()
    if args.rho_diff is not None:
        if args.gamma_max is None:
            raise PrivDiffError("--rho-diff needs --gamma-max")
        return AccountantQuery(alpha=alpha, sigma=sigma, K=args.K, rho_diff=args.rho_diff,
                               gamma_max=args.gamma_max, mode=mode, tracking=tracking)
    if args.eta is None:
        raise PrivDiffError("either --eta or --rho-diff is required")
    return AccountantQuery.for_schedule(_schedule(args), args.eta, alpha, sigma, args.K,
                                        mode=mode, tracking=tracking)


def _emit_vector(scores, fmt: str, output: Optional[str]):
    if output:
        with open(output, 'wb' if fmt == 'binary' else 'w') as sink:
            write_vector(scores, sink, fmt)
        logging.info('Scores saved to: %s', output)
    elif fmt == 'binary':
        write_vector(scores, sys.stdout.buffer, fmt)
        sys.stdout.buffer.flush()
    else:
        write_vector(scores, sys.stdout, fmt)


def cmd_ingest(args) -> int:
    loaded = _load_graph(args.input, args.one_indexed, args.lcc)
    if args.output:
        with open(args.output, 'w') as sink:
            write_edge_list(loaded.graph, sink)
    if args.id_map and loaded.id_map is not None:
        with open(args.id_map, 'w') as sink:
            write_id_map(loaded.id_map, sink)
    print(dumps(loaded.summary))
    return EXIT_OK


def cmd_diffuse(args) -> int:
    g = _load_graph(args.graph, args.one_indexed, args.lcc).graph
    sched = _schedule(args)
    s = seed_vector(g.n, args.seed_node)
    if args.eta is None:
        scores = run_exact_diffusion(g, sched, s, args.K)
    else:
        if args.personalized and len(args.seed_node) != 1:
            raise PrivDiffError("--personalized needs exactly one seed node")
        policy = ThresholdPolicy(args.eta, args.mode,
                                 args.seed_node[0] if args.personalized else None)
        result = run_noisy_diffusion(g, sched, policy, s, args.K, args.sigma,
                                     noise_kind=args.noise,
                                     rng=RngStream(args.seed, args.stream),
                                     project_unit_l1=args.project)
        scores = result.scores
        logging.info('Consumed %d noise streams', len(result.stream_ids))
    if args.postprocess:
        scores = postprocess_scores(scores)
    _emit_vector(scores, args.format, args.output)
    return EXIT_OK


def cmd_account(args) -> int:
    q = _query(args, args.alpha, args.sigma)
    record = accountant.account(q, args.bound, args.delta)
    print(dumps(record))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    budget = DpBudget(args.epsilon, args.delta)
    if args.flip:
        result = accountant.calibrate_flip(budget)
    else:
        result = accountant.calibrate(budget, _query(args, 2.0, 1.0), args.bound)
    print(dumps(result))
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = oracles.run_oracle_suite(seed=args.seed, graphs=args.graphs)
    write_json_lines(reports, sys.stdout)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_ERROR


def cmd_sweep(args) -> int:
    overrides = {
        key: getattr(args, key)
        for key in ('dataset_path', 'eps_grid', 'eta_grid', 'delta', 'beta', 'K', 'R', 'trials',
                    'base_seed', 'bound_kind', 'threshold_mode', 'noise_kind', 'threads',
                    'trial_timeout', 'output_csv', 'output_jsonl')
    }
    overrides['methods'] = args.methods
    if args.standard:
        overrides['personalized'] = False
    if args.project:
        overrides['project_l1'] = True
    cfg = load_config(ExperimentConfig, args.config, overrides)
    result = run_privacy_utility_sweep(cfg)
    if not cfg.output_csv:
        write_csv([row.to_dict() for row in result.rows], sys.stdout, SWEEP_COLUMNS)
    if result.all_infeasible:
        logging.error('Every sweep row is infeasible')
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_curves(args) -> int:
    overrides = {
        key: getattr(args, key)
        for key in ('gamma', 'alpha', 'sigma', 'eta', 'K_max', 'degree_sum', 'n', 'delta', 'output_csv')
    }
    cfg = load_config(CurvesConfig, args.config, overrides)
    rows = emit_bound_curves(cfg)
    if not cfg.output_csv:
        write_csv(rows, sys.stdout, CURVE_COLUMNS)
    return EXIT_OK


def cmd_flip_baseline(args) -> int:
    g = _load_graph(args.graph, args.one_indexed, args.lcc).graph
    p = args.p
    if p is None:
        delta = args.delta if args.delta is not None else 1.0 / g.num_edges
        result = accountant.calibrate_flip(DpBudget(args.epsilon, delta))
        p = result.p
        logging.info('Calibrated p=%.6g (achieved eps=%.6g)', p, result.achieved_epsilon)
    node_limit = args.node_limit or Settings.from_env().node_limit
    cfg = FlipConfig(p=p, personalized_seed=args.seed_node, node_limit=node_limit)
    flipped = edge_flipping(g, cfg, RngStream(args.seed, args.stream))
    logging.info('Flipped graph: %d -> %d edges, component of %d nodes',
                 flipped.edges_in, flipped.edges_out, flipped.graph.n)
    _emit_vector(flipped_ppr(flipped, args.seed_node, args.beta, args.K), args.format, args.output)
    return EXIT_OK


COMMANDS = {
    'ingest': cmd_ingest,
    'diffuse': cmd_diffuse,
    'account': cmd_account,
    'calibrate': cmd_calibrate,
    'verify': cmd_verify,
    'sweep': cmd_sweep,
    'curves': cmd_curves,
    'flip-baseline': cmd_flip_baseline,
}


def configure_logging(verbose: bool):
    level = 'debug' if verbose else os.getenv('PRIVDIFF_LOG_LEVEL', 'info').lower()
    logging.set_verbosity(_LOG_LEVELS.get(level, logging.INFO))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except InfeasibleBudgetError as e:
        print(f"privdiff: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, OSError) as e:
        print(f"privdiff: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())

"""RQ Worker for privacy-utility sweep jobs."""

import sys
from pathlib import Path
from typing import Any, Dict

from absl import logging

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent))

from privdiff.config import ExperimentConfig
from privdiff.experiment import run_privacy_utility_sweep
from privdiff.serialization import to_jsonable


def process_sweep_job(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Run a sweep in a background job.

    Args:
        config: ExperimentConfig as a JSON-compatible dict

    Returns:
        Row table and output locations
    """
    cfg = ExperimentConfig.model_validate(config)
    logging.info('Sweep job started on %s', cfg.dataset.path)
    try:
        result = run_privacy_utility_sweep(cfg)
    except Exception as e:
        logging.error('Sweep job failed: %s', e)
        raise

    return {
        'status': 'infeasible' if result.all_infeasible else 'completed',
        'rows': to_jsonable([row.to_dict() for row in result.rows]),
        'seed_nodes': to_jsonable(result.seed_nodes),
        'output_csv': cfg.output_csv,
        'output_jsonl': cfg.output_jsonl,
    }

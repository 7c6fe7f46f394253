"""Experiment configuration models and environment settings."""

import json
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .accountant import DEFAULT_ALPHA_GRID, BoundKind
from .engine import NoiseKind, ThresholdMode
from .errors import ConfigError

DEFAULT_ETA_GRID = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4]
DEFAULT_NODE_LIMIT = 20000
DEFAULT_JOB_TIMEOUT = 43200


@dataclass(frozen=True)
class Settings:
    """Process-wide knobs read from the environment."""
    threads: int
    log_level: str
    node_limit: int
    redis_url: str
    job_timeout: int

    @classmethod
    def from_env(cls) -> 'Settings':
        return cls(
            threads=max(1, int(os.getenv('PRIVDIFF_THREADS', str(os.cpu_count() or 1)))),
            log_level=os.getenv('PRIVDIFF_LOG_LEVEL', 'info').lower(),
            node_limit=int(os.getenv('PRIVDIFF_NODE_LIMIT', str(DEFAULT_NODE_LIMIT))),
            redis_url=os.getenv('REDIS_URL', 'redis://localhost:6379'),
            job_timeout=int(os.getenv('PRIVDIFF_JOB_TIMEOUT', str(DEFAULT_JOB_TIMEOUT))),
        )


class Method(str, Enum):
    NOISY_DIFFUSION = 'noisy_diffusion'
    EDGE_FLIPPING = 'edge_flipping'


class DatasetConfig(BaseModel):
    """Edge-list dataset and ingestion options."""
    path: str = Field(..., description="Path to a whitespace-separated edge list")
    one_indexed: bool = Field(False, description="Node ids in the file start at 1")
    extract_lcc: bool = Field(True, description="Keep only the largest connected component")


class ExperimentConfig(BaseModel):
    """Privacy-utility sweep over (epsilon, eta) grids."""
    dataset: DatasetConfig = Field(..., description="Input graph")
    methods: List[Method] = Field(
        default_factory=lambda: [Method.NOISY_DIFFUSION],
        description="Mechanisms compared on paired seed nodes",
    )
    beta: float = Field(0.8, gt=0, lt=1, description="PPR continuation probability")
    K: int = Field(100, ge=1, description="Number of diffusion steps")
    eta_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_ETA_GRID),
                                  description="Threshold values eta")
    eps_grid: List[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0],
                                  description="Target (eps, delta)-DP epsilons")
    delta: Optional[float] = Field(None, gt=0, lt=1, description="Target delta; 1/|E| when omitted")
    R: int = Field(100, ge=1, description="Ranking cutoff for NDCG@R and Recall@R")
    trials: int = Field(20, ge=1, description="Independent trials per grid cell")
    base_seed: int = Field(0, ge=0, description="Root seed of every random stream")
    personalized: bool = Field(True, description="Exempt the seed node and use personalized accounting")
    bound_kind: BoundKind = Field(BoundKind.PERSONALIZED, description="Accountant used for calibration")
    threshold_mode: ThresholdMode = Field(ThresholdMode.SYMMETRIC_DEGREE, description="Clipping function f")
    noise_kind: NoiseKind = Field(NoiseKind.LAPLACE, description="Injected noise distribution")
    project_l1: bool = Field(False, description="Project every noisy iterate onto the unit l1 ball")
    postprocess: bool = Field(False, description="Clip released scores into [0, 1]")
    binary_relevance: bool = Field(False, description="Use top-R membership as NDCG gain")
    alpha_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHA_GRID),
                                    description="Renyi orders searched by the DP conversion")
    trial_timeout: Optional[float] = Field(None, gt=0, description="Seconds before a row is marked skipped")
    threads: Optional[int] = Field(None, ge=1, description="Trial parallelism; PRIVDIFF_THREADS when omitted")
    node_limit: Optional[int] = Field(None, ge=2, description="Edge-flipping size guard")
    output_csv: Optional[str] = Field(None, description="Aggregate table destination")
    output_jsonl: Optional[str] = Field(None, description="Per-trial report destination")

    @field_validator('eta_grid', 'eps_grid', 'alpha_grid', 'methods')
    @classmethod
    def _non_empty(cls, value):
        if not value:
            raise ValueError("grid must be non-empty")
        return value

    @field_validator('eta_grid', 'eps_grid')
    @classmethod
    def _positive(cls, value):
        if any(not v > 0 for v in value):
            raise ValueError("grid values must be > 0")
        return value

    @field_validator('alpha_grid')
    @classmethod
    def _orders(cls, value):
        if any(not a > 1 for a in value):
            raise ValueError("Renyi orders must be > 1")
        return value

    @model_validator(mode='after')
    def _consistent(self):
        if self.bound_kind is BoundKind.PERSONALIZED and not self.personalized:
            self.bound_kind = BoundKind.STANDARD
        if (self.noise_kind is NoiseKind.GAUSSIAN) != (self.bound_kind is BoundKind.GAUSSIAN):
            raise ValueError("gaussian noise must be calibrated with the gaussian bound and vice versa")
        if self.bound_kind is BoundKind.DIAMETER_PROJECTION and not self.project_l1:
            raise ValueError("diameter_projection accounting needs project_l1")
        return self


class CurvesConfig(BaseModel):
    """Parameters of the bound-vs-K, w-vs-D and sigma-vs-epsilon curves."""
    gamma: Tuple[float, float, float] = Field((0.8, 0.0, 0.2), description="Constant schedule triple")
    alpha: float = Field(2.0, gt=1, description="Renyi order of the per-K curves")
    sigma: float = Field(0.01, gt=0, description="Noise scale of the per-K curves")
    eta: float = Field(1e-5, gt=0, description="Threshold eta")
    K_max: int = Field(200, ge=1, description="Largest K (and tau) evaluated")
    degree_sum: int = Field(667966, ge=2, description="Degree sum for the threshold diameter")
    n: Optional[int] = Field(None, ge=1, description="Node count for the uniform-threshold diameter")
    calib_K: int = Field(100, ge=1, description="Steps used by the sigma-vs-epsilon rows")
    eps_grid: List[float] = Field(default_factory=lambda: [0.1, 0.3, 1.0],
                                  description="DP epsilons for the sigma-vs-epsilon rows")
    delta: float = Field(1e-6, gt=0, lt=1, description="DP delta for the sigma-vs-epsilon rows")
    alpha_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHA_GRID),
                                    description="Renyi orders searched by the DP conversion")
    output_csv: Optional[str] = Field(None, description="Curve table destination")


ModelT = TypeVar('ModelT', bound=BaseModel)


def load_config(model: Type[ModelT], path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> ModelT:
    """
    Build a config from a JSON file and CLI overrides (override > file > default).

    Args:
        model: Pydantic model class
        path: Optional JSON file
        overrides: Keys set on the command line; None values are ignored

    Returns:
        Validated config

    Raises:
        ConfigError: unreadable file or failed validation
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == 'dataset_path':
            data.setdefault('dataset', {})['path'] = value
        else:
            data[key] = value
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {e}")

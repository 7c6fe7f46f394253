"""Pydantic models for the privdiff accounting API."""

from typing import Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from privdiff.accountant import AccountantQuery, BoundKind, Mode, Tracking
from privdiff.engine import DiffusionSchedule, ppr_schedule


class BoundQuery(BaseModel):
    """Mechanism description shared by accounting and calibration requests."""
    beta: Optional[float] = Field(None, gt=0, lt=1, description="PPR continuation probability")
    gamma: Optional[Tuple[float, float, float]] = Field(
        None, description="Constant schedule triple (gamma1, gamma2, gamma3)"
    )
    K: int = Field(100, ge=1, description="Number of diffusion steps")
    eta: Optional[float] = Field(None, gt=0, description="Threshold eta, gives rho_diff")
    rho_diff: Optional[float] = Field(None, ge=0, description="Single-step distortion, instead of eta")
    gamma_max: Optional[float] = Field(None, gt=0, lt=1, description="Contraction coefficient with rho_diff")
    personalized: bool = Field(False, description="Personalized accounting")
    bound_kind: BoundKind = Field(BoundKind.STANDARD, description="Bound to evaluate")
    diameter: Optional[float] = Field(None, gt=0, description="Space diameter D for diameter bounds")

    @model_validator(mode='after')
    def _mechanism(self):
        if self.beta is not None and self.gamma is not None:
            raise ValueError("give either beta or gamma, not both")
        if self.rho_diff is None and self.eta is None and self._needs_mechanism():
            raise ValueError("either eta or rho_diff is required")
        if self.rho_diff is not None and self.gamma_max is None:
            raise ValueError("rho_diff needs gamma_max")
        return self

    def _needs_mechanism(self) -> bool:
        return True

    def schedule(self) -> DiffusionSchedule:
        if self.gamma is not None:
            return DiffusionSchedule.constant(*self.gamma)
        return ppr_schedule(self.beta if self.beta is not None else 0.8)

    def to_query(self, alpha: float, sigma: float) -> AccountantQuery:
        mode = Mode.PERSONALIZED if self.personalized else Mode.STANDARD
        tracking = Tracking.with_diameter(self.diameter) if self.diameter else Tracking.wasserstein()
        if self.rho_diff is not None:
            return AccountantQuery(alpha=alpha, sigma=sigma, K=self.K, rho_diff=self.rho_diff,
                                   gamma_max=self.gamma_max, mode=mode, tracking=tracking)
        return AccountantQuery.for_schedule(self.schedule(), self.eta, alpha, sigma, self.K,
                                            mode=mode, tracking=tracking)


class AccountRequest(BoundQuery):
    """Evaluate a bound at a fixed noise scale."""
    alpha: float = Field(2.0, gt=1, description="Renyi order")
    sigma: float = Field(..., gt=0, description="Laplace (or Gaussian) noise scale")
    delta: Optional[float] = Field(None, gt=0, lt=1, description="Also convert to (eps, delta)-DP")


class CalibrateRequest(BoundQuery):
    """Calibrate sigma, or the edge-flipping probability, to a DP budget."""
    epsilon: float = Field(..., gt=0, description="Target DP epsilon")
    delta: float = Field(..., gt=0, lt=1, description="Target DP delta")
    flip: bool = Field(False, description="Calibrate the edge-flipping probability instead of sigma")

    def _needs_mechanism(self) -> bool:
        # the flip probability depends on the budget only
        return not self.flip


class IngestResponse(BaseModel):
    """Statistics of an uploaded edge list."""
    n: int = Field(..., description="Node count after ingestion")
    num_edges: int = Field(..., description="Undirected edge count")
    degree_sum: int = Field(..., description="Sum of degrees (2|E|)")
    min_degree: int = Field(..., description="Smallest degree")
    max_degree: int = Field(..., description="Largest degree")
    self_loops_dropped: int = Field(0, description="Self-loop lines ignored")
    duplicates_dropped: int = Field(0, description="Duplicate edges ignored")
    lcc_dropped_nodes: int = Field(0, description="Nodes outside the largest component")


class SweepResponse(BaseModel):
    """Sweep submission receipt."""
    success: bool = Field(..., description="Whether the sweep was accepted")
    message: str = Field(..., description="Status message")
    job_id: Optional[str] = Field(None, description="rq job id; None for in-process runs")
    output_csv: Optional[str] = Field(None, description="Aggregate table destination")
    output_jsonl: Optional[str] = Field(None, description="Per-trial report destination")


class HealthResponse(BaseModel):
    status: str = Field(..., description="Service status")
    queue_ready: bool = Field(..., description="Whether the rq queue is reachable")

import io
import os
import sys
from pathlib import Path

import redis
from fastapi import BackgroundTasks, FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from rq import Queue
from rq.job import Job

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from privdiff import accountant
from privdiff.accountant import DpBudget
from privdiff.config import ExperimentConfig, Settings
from privdiff.errors import InfeasibleBudgetError
from privdiff.graph import load_edge_list
from privdiff.serialization import to_jsonable
from .models import (
    AccountRequest,
    CalibrateRequest,
    HealthResponse,
    IngestResponse,
    SweepResponse,
)

settings = Settings.from_env()

# Initialize Redis connection for job queue
try:
    redis_conn = redis.from_url(settings.redis_url)
    redis_conn.ping()
    job_queue = Queue('privdiff_sweeps', connection=redis_conn)
except Exception as e:
    print(f"Redis connection failed: {e}. Job queue disabled.")
    redis_conn = None
    job_queue = None

app = FastAPI(title="Private Graph Diffusion API", version="0.1.0")

# Environment variables with defaults
CORS_ORIGINS = os.getenv("CORS_ORIGINS", "http://localhost:3000").split(",")
MAX_UPLOAD_SIZE_MB = int(os.getenv('MAX_UPLOAD_SIZE_MB', '200'))

app.add_middleware(
    CORSMiddleware,
    allow_origins=CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)


@app.get("/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint."""
    return HealthResponse(status="healthy", queue_ready=job_queue is not None)


@app.post("/account")
async def account(request: AccountRequest):
    """
    Evaluate a privacy bound at a fixed noise scale.

    Args:
        request: Mechanism, order and noise scale

    Returns:
        Bound value, minimizing tau and the optional DP conversion
    """
    try:
        record = accountant.account(request.to_query(request.alpha, request.sigma),
                                    request.bound_kind, request.delta)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return to_jsonable(record)


@app.post("/calibrate")
async def calibrate(request: CalibrateRequest):
    """
    Calibrate the noise scale (or the flip probability) to an (epsilon, delta) budget.

    Returns:
        Calibrated parameter and the epsilon it achieves; 422 when the
        budget cannot be met at any Renyi order.
    """
    try:
        budget = DpBudget(request.epsilon, request.delta)
        if request.flip:
            result = accountant.calibrate_flip(budget)
        else:
            result = accountant.calibrate(budget, request.to_query(2.0, 1.0), request.bound_kind)
    except InfeasibleBudgetError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return to_jsonable(result)


@app.post("/ingest", response_model=IngestResponse)
async def ingest(
    file: UploadFile = File(...),
    one_indexed: bool = Form(False),
    extract_lcc: bool = Form(False),
):
    """
    Validate an uploaded edge list and report its statistics.

    Args:
        file: Whitespace-separated edge list
        one_indexed: Node ids in the file start at 1
        extract_lcc: Keep only the largest connected component

    Returns:
        Graph summary
    """
    content = await file.read()
    if len(content) > MAX_UPLOAD_SIZE_MB * 1024 * 1024:
        raise HTTPException(status_code=413, detail=f"File too large. Max size: {MAX_UPLOAD_SIZE_MB}MB")
    try:
        text = content.decode('utf-8')
    except UnicodeDecodeError:
        raise HTTPException(status_code=415, detail="Edge list must be UTF-8 text")
    try:
        loaded = load_edge_list(io.StringIO(text), one_indexed=one_indexed, extract_lcc=extract_lcc)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return IngestResponse(**to_jsonable(loaded.summary))


@app.post("/sweep", response_model=SweepResponse)
async def submit_sweep(cfg: ExperimentConfig, background_tasks: BackgroundTasks):
    """
    Queue a privacy-utility sweep.

    The sweep runs on the rq worker when Redis is reachable and as an
    in-process background task otherwise.
    """
    if not Path(cfg.dataset.path).exists():
        raise HTTPException(status_code=404, detail=f"Dataset not found: {cfg.dataset.path}")

    from workers.sweep_worker import process_sweep_job

    payload = cfg.model_dump(mode='json')
    if job_queue:
        job = job_queue.enqueue(process_sweep_job, payload, job_timeout=settings.job_timeout)
        return SweepResponse(success=True, message="Sweep queued", job_id=job.id,
                             output_csv=cfg.output_csv, output_jsonl=cfg.output_jsonl)

    # Fallback to background task if Redis not available
    background_tasks.add_task(process_sweep_job, payload)
    return SweepResponse(success=True, message="Sweep started in process", job_id=None,
                         output_csv=cfg.output_csv, output_jsonl=cfg.output_jsonl)


@app.get("/jobs/{job_id}")
async def get_job_status(job_id: str):
    """
    Get RQ job status and results.

    Args:
        job_id: RQ job ID

    Returns:
        Job status and results
    """
    if not redis_conn:
        raise HTTPException(status_code=503, detail="Job queue not available")

    try:
        job = Job.fetch(job_id, connection=redis_conn)
    except Exception as e:
        raise HTTPException(status_code=404, detail=f"Job not found: {str(e)}")

    return {
        "job_id": job_id,
        "status": job.get_status(),
        "created_at": job.created_at.isoformat() if job.created_at else None,
        "started_at": job.started_at.isoformat() if job.started_at else None,
        "ended_at": job.ended_at.isoformat() if job.ended_at else None,
        "result": job.result,
        "exc_info": job.exc_info,
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=int(os.getenv("PORT", "8000")))

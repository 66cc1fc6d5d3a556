# ================================
# TURBOLYNX FASTAPI MAIN
# ================================

import os
import sys
import time
import logging
from contextlib import asynccontextmanager
from typing import Any, Dict, List, Optional

import uvicorn
from dotenv import load_dotenv
from fastapi import BackgroundTasks, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field, ValidationError

# Load environment variables
load_dotenv()

# Add backend directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from mimo_pipeline.config import DETECTOR_PRESETS, ExperimentConfig, apply_overrides, get_settings
from mimo_pipeline.epcore import get_detector_params, schedule_table
from mimo_pipeline.errors import TurboLynxError
from mimo_pipeline.simulation import BerRecord, run_experiment
from mimo_pipeline.verification import CheckResult, run_verification
from utils.file_handler import get_next_sequential_number
from utils.logging_setup import configure_logging

logger = logging.getLogger(__name__)


# ================================
# EXPERIMENT TRACKER
# ================================

class ExperimentTracker:
    """Track background BER sweeps by experiment id."""
    experiments: Dict[str, Dict[str, Any]] = {}
    # finished entries kept for status queries; running ones are never dropped
    max_finished: int = 20

    @classmethod
    def set_processing(cls, experiment_id: str, total_points: int):
        cls.cleanup_finished()
        cls.experiments[experiment_id] = {
            "status": "processing",
            "started_at": time.time(),
            "points_done": 0,
            "points_total": total_points,
            "records": [],
        }

    @classmethod
    def cleanup_finished(cls, keep: Optional[int] = None) -> int:
        """Drop the oldest ready or failed experiments beyond ``keep``."""
        keep = cls.max_finished if keep is None else keep
        finished = sorted(
            (
                (entry.get("completed_at", entry.get("failed_at", 0.0)), experiment_id)
                for experiment_id, entry in cls.experiments.items()
                if entry.get("status") in ("ready", "error")
            ),
            reverse=True,
        )
        stale = [experiment_id for _, experiment_id in finished[keep:]]
        for experiment_id in stale:
            cls.experiments.pop(experiment_id, None)
        if stale:
            logger.info(f"🗑️ Cleaned up {len(stale)} finished experiments")
        return len(stale)

    @classmethod
    def add_point(cls, experiment_id: str, records: List[BerRecord]):
        entry = cls.experiments.get(experiment_id)
        if entry is not None:
            entry["points_done"] += 1
            entry["records"] += [r.model_dump() for r in records]

    @classmethod
    def set_ready(cls, experiment_id: str, results_dir: str):
        entry = cls.experiments.get(experiment_id, {})
        started_at = entry.get("started_at", time.time())
        entry.update({
            "status": "ready",
            "completed_at": time.time(),
            "processing_time": time.time() - started_at,
            "results_dir": results_dir,
        })
        cls.experiments[experiment_id] = entry

    @classmethod
    def set_error(cls, experiment_id: str, error: str):
        entry = cls.experiments.get(experiment_id, {})
        entry.update({"status": "error", "error": error, "failed_at": time.time()})
        cls.experiments[experiment_id] = entry

    @classmethod
    def get_status(cls, experiment_id: str) -> Dict[str, Any]:
        return cls.experiments.get(experiment_id, {"status": "unknown"})


# ================================
# LIFESPAN MANAGER
# ================================

@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging()
    settings = get_settings()
    logger.info(f"🚀 Starting TurboLynx API (results in {settings.results_dir}, workers={settings.workers})")
    yield
    logger.info("🛑 Shutting down TurboLynx API...")


app = FastAPI(
    title="TurboLynx EP Turbo MIMO API",
    version="1.0.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ================================
# REQUEST / RESPONSE MODELS
# ================================

class ExperimentRequest(BaseModel):
    config: Dict[str, Any] = Field(default_factory=dict)
    overrides: Dict[str, Any] = Field(default_factory=dict)


class ExperimentResponse(BaseModel):
    experiment_id: str
    status: str
    results_dir: str


class VerifyRequest(BaseModel):
    slow: bool = False


class VerifyResponse(BaseModel):
    passed: bool
    checks: List[CheckResult]


# ================================
# ENDPOINTS
# ================================

@app.get("/", response_model=Dict[str, str])
async def root():
    return {"message": "TurboLynx EP turbo MIMO detection API", "docs": "/docs"}


@app.get("/health")
async def health_check():
    settings = get_settings()
    running = sum(1 for e in ExperimentTracker.experiments.values() if e.get("status") == "processing")
    return {
        "status": "healthy",
        "detectors": list(DETECTOR_PRESETS),
        "experiments_running": running,
        "results_dir": str(settings.results_dir),
    }


@app.get("/params/{variant}")
async def get_params(variant: str, turbo_iters: int = 5):
    try:
        return schedule_table(get_detector_params(variant), turbo_iters)
    except TurboLynxError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _run_tracked(experiment_id: str, cfg: ExperimentConfig):
    try:
        run_experiment(cfg, on_point=lambda _snr, records: ExperimentTracker.add_point(experiment_id, records))
        ExperimentTracker.set_ready(experiment_id, str(cfg.output.dir))
        logger.info(f"✅ Experiment {experiment_id} ready")
    except Exception as e:
        logger.error(f"❌ Experiment {experiment_id} failed: {e}")
        ExperimentTracker.set_error(experiment_id, str(e))


@app.post("/experiments", response_model=ExperimentResponse)
async def start_experiment(request: ExperimentRequest, background_tasks: BackgroundTasks):
    try:
        cfg = ExperimentConfig.model_validate(apply_overrides(request.config, request.overrides))
    except (TurboLynxError, ValidationError) as e:
        raise HTTPException(status_code=400, detail=str(e))

    results_root = cfg.results_dir()
    experiment_id = f"exp_{get_next_sequential_number(results_root, 'exp')}"
    cfg.output.dir = results_root / experiment_id
    cfg.output.dir.mkdir(parents=True, exist_ok=True)

    ExperimentTracker.set_processing(experiment_id, len(cfg.snr_db))
    background_tasks.add_task(_run_tracked, experiment_id, cfg)
    logger.info(f"🔄 Experiment {experiment_id} queued")
    return ExperimentResponse(experiment_id=experiment_id, status="processing", results_dir=str(cfg.output.dir))


@app.get("/experiments/{experiment_id}")
async def get_experiment(experiment_id: str):
    status = ExperimentTracker.get_status(experiment_id)
    if status["status"] == "unknown":
        raise HTTPException(status_code=404, detail=f"Experiment {experiment_id} not found")
    return {"experiment_id": experiment_id, **status}


@app.post("/verify", response_model=VerifyResponse)
def verify(request: Optional[VerifyRequest] = None):
    try:
        checks = run_verification(slow=bool(request and request.slow))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Verification failed to run: {e}")
    return VerifyResponse(passed=all(c.passed for c in checks), checks=checks)


# ================================
# MAIN FUNCTION
# ================================

def main(port: Optional[int] = None):
    """Run the API with the PORT environment variable when no port is given."""
    port = port or int(os.environ.get("PORT", 8000))
    logger.info(f"🌐 Starting server on port: {port}")

    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=port,
        reload=False,
        log_level=get_settings().log_level.lower(),
        workers=1,  # tracker state lives in this process
    )


if __name__ == "__main__":
    main()

"""
Few-Label SOM Lab - Job Service
FastAPI backend for submitting experiments, polling their status and fetching reports.
"""

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager
import uvicorn
from typing import Dict, List

from lab.experiment_manager import ExperimentManager
from lab.job_manager import JobManager
from lab.presets import PRESETS, build_config
from models.errors import LabError
from models.schemas import (
    APIInfoResponse,
    ErrorResponse,
    ExperimentReport,
    JobResponse,
    JobSubmitRequest,
)


# Global job manager instance
job_manager: JobManager = None


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Lifespan context manager for startup and shutdown events.
    Starts the job worker on startup and stops it on shutdown.
    """
    global job_manager
    job_manager = JobManager(ExperimentManager().run_experiment)
    job_manager.start()
    print("\n" + "="*60)
    print("🚀 Few-Label SOM Lab is running!")
    print("="*60)
    print(f"📍 API available at: http://localhost:8000")
    print(f"📚 API docs at: http://localhost:8000/docs")
    print(f"🧪 Presets: {', '.join(sorted(PRESETS))}")
    print("="*60 + "\n")

    yield

    if job_manager:
        job_manager.stop()
    print("\n👋 Few-Label SOM Lab stopped")


app = FastAPI(
    title="Few-Label SOM Lab",
    description="Experiment service for SOM classification with raw, autoencoder, spiking and CNN features",
    version="1.0.0",
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _manager() -> JobManager:
    if job_manager is None:
        raise HTTPException(status_code=503, detail="Job manager not initialized")
    return job_manager


# ==================== API ENDPOINTS ====================

@app.get("/", response_model=APIInfoResponse)
async def root() -> Dict:
    """
    Root endpoint - API information and health check.
    """
    return {
        "message": "Few-Label SOM Lab API",
        "version": "1.0.0",
        "status": "running",
        "endpoints": {
            "GET /presets": "List experiment presets",
            "POST /jobs": "Submit an experiment (preset + config overrides)",
            "GET /jobs": "List all jobs",
            "GET /jobs/statistics": "Job counts by status",
            "GET /jobs/{job_id}": "Status of one job",
            "GET /jobs/{job_id}/report": "Report of a completed job",
            "DELETE /jobs/{job_id}": "Cancel a pending job",
            "GET /docs": "Interactive API documentation"
        }
    }


@app.get("/presets")
async def get_presets() -> Dict:
    """Named partial configurations accepted by POST /jobs."""
    return PRESETS


@app.post("/jobs", response_model=JobResponse, responses={400: {"model": ErrorResponse}})
async def submit_job(request: JobSubmitRequest) -> Dict:
    """
    Queue an experiment built from a preset and config overrides.

    Returns:
        The queued job
    """
    manager = _manager()
    try:
        config = build_config(request.preset, request.config)
    except (LabError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return manager.submit(config).to_dict()


@app.get("/jobs", response_model=List[JobResponse])
async def get_jobs() -> List[Dict]:
    """All submitted jobs, oldest first."""
    return [job.to_dict() for job in _manager().list_jobs()]


@app.get("/jobs/statistics")
async def get_job_statistics() -> Dict:
    """Job counts by status and mean duration of completed jobs."""
    return _manager().get_statistics()


@app.get("/jobs/{job_id}", response_model=JobResponse, responses={404: {"model": ErrorResponse}})
async def get_job(job_id: str) -> Dict:
    """Status of one job."""
    job = _manager().get_job(job_id)
    if job is None:
        raise HTTPException(status_code=404, detail=f"Job with ID {job_id} not found")
    return job.to_dict()


@app.get("/jobs/{job_id}/report", response_model=ExperimentReport,
         responses={404: {"model": ErrorResponse}, 400: {"model": ErrorResponse}})
async def get_job_report(job_id: str) -> ExperimentReport:
    """Report of a completed job."""
    job = _manager().get_job(job_id)
    if job is None:
        raise HTTPException(status_code=404, detail=f"Job with ID {job_id} not found")
    if job.report is None:
        raise HTTPException(status_code=400, detail=f"Job {job_id} is {job.status.value}, no report available")
    return job.report


@app.delete("/jobs/{job_id}", responses={404: {"model": ErrorResponse}, 400: {"model": ErrorResponse}})
async def cancel_job(job_id: str) -> Dict:
    """Cancel a job that has not started yet."""
    manager = _manager()
    job = manager.get_job(job_id)
    if job is None:
        raise HTTPException(status_code=404, detail=f"Job with ID {job_id} not found")
    if not manager.cancel_job(job_id):
        raise HTTPException(status_code=400, detail=f"Job {job_id} is {job.status.value} and cannot be cancelled")
    return {
        "message": f"Job {job_id} cancelled successfully",
        "job_id": job_id
    }


# ==================== MAIN EXECUTION ====================

if __name__ == "__main__":
    print("\n🚀 Starting Few-Label SOM Lab...")
    print("Press CTRL+C to stop the server\n")

    uvicorn.run(
        "app:app",
        host="0.0.0.0",
        port=8000,
        log_level="info"
    )

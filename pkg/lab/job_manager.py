"""
Job Manager
Queues experiment jobs and runs them one at a time on a background worker thread.
"""

import logging
import queue
import threading
import uuid
from datetime import datetime
from enum import Enum
from typing import Callable, Dict, List, Optional

from models.schemas import ExperimentConfig, ExperimentReport

logger = logging.getLogger(__name__)


class JobStatus(str, Enum):
    """Status of an experiment job"""
    PENDING = "pending"       # Waiting in the queue
    RUNNING = "running"       # Picked up by the worker
    COMPLETED = "completed"   # Report available
    FAILED = "failed"         # Experiment raised
    CANCELLED = "cancelled"   # Removed before it started


class Job:
    """
    One queued experiment.

    Attributes:
        job_id (str): Unique identifier for the job
        config (ExperimentConfig): Experiment to run
        status (JobStatus): Current status of the job
        report (ExperimentReport): Result once completed
        error (str): Failure message once failed
        created_at (datetime): When the job was submitted
        started_at (datetime): When the worker picked it up
        completed_at (datetime): When it finished, failed or was cancelled
    """

    def __init__(self, config: ExperimentConfig):
        self.job_id = str(uuid.uuid4())[:8]
        self.config = config
        self.status = JobStatus.PENDING
        self.report: Optional[ExperimentReport] = None
        self.error: Optional[str] = None
        self.created_at = datetime.now()
        self.started_at: Optional[datetime] = None
        self.completed_at: Optional[datetime] = None

    def start(self):
        self.status = JobStatus.RUNNING
        self.started_at = datetime.now()

    def complete(self, report: ExperimentReport):
        self.status = JobStatus.COMPLETED
        self.report = report
        self.completed_at = datetime.now()

    def fail(self, reason: str):
        self.status = JobStatus.FAILED
        self.error = reason
        self.completed_at = datetime.now()
        logger.error("✗ Job %s failed: %s", self.job_id, reason)

    def cancel(self):
        self.status = JobStatus.CANCELLED
        self.completed_at = datetime.now()

    def get_duration(self) -> Optional[float]:
        """Run time in seconds"""
        if self.started_at and self.completed_at:
            return (self.completed_at - self.started_at).total_seconds()
        return None

    def to_dict(self) -> Dict:
        """Convert job to dictionary for JSON serialization"""
        return {
            "job_id": self.job_id,
            "status": self.status.value,
            "name": self.config.name,
            "created_at": self.created_at.isoformat(),
            "started_at": self.started_at.isoformat() if self.started_at else None,
            "completed_at": self.completed_at.isoformat() if self.completed_at else None,
            "duration": self.get_duration(),
            "error": self.error,
            "mean_accuracy": self.report.mean if self.report else None,
        }


class JobManager:
    """
    FIFO queue of experiment jobs with a single worker thread; the worker is the only
    writer of reports.

    Attributes:
        runner (Callable): Executes one ExperimentConfig and returns its report
        jobs (Dict[str, Job]): Every submitted job by id
    """

    def __init__(self, runner: Callable[[ExperimentConfig], ExperimentReport]):
        self.runner = runner
        self.jobs: Dict[str, Job] = {}
        self._queue: "queue.Queue[Optional[Job]]" = queue.Queue()
        self._lock = threading.Lock()
        self._worker: Optional[threading.Thread] = None

    def submit(self, config: ExperimentConfig) -> Job:
        job = Job(config)
        with self._lock:
            self.jobs[job.job_id] = job
        self._queue.put(job)
        logger.info("✓ Queued job %s (%s)", job.job_id, config.name)
        return job

    def get_job(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self.jobs.get(job_id)

    def list_jobs(self) -> List[Job]:
        with self._lock:
            return sorted(self.jobs.values(), key=lambda j: j.created_at)

    def cancel_job(self, job_id: str) -> bool:
        """
        Cancel a pending job.

        Returns:
            True if the job was pending and is now cancelled
        """
        with self._lock:
            job = self.jobs.get(job_id)
            if job is None or job.status != JobStatus.PENDING:
                return False
            job.cancel()
        logger.info("✗ Job %s cancelled (was pending)", job_id)
        return True

    def get_statistics(self) -> Dict:
        with self._lock:
            counts = {status.value: 0 for status in JobStatus}
            for job in self.jobs.values():
                counts[job.status.value] += 1
            durations = [j.get_duration() for j in self.jobs.values()
                         if j.status == JobStatus.COMPLETED and j.get_duration() is not None]
        return {
            "total_jobs": sum(counts.values()),
            **counts,
            "average_duration": sum(durations) / len(durations) if durations else None,
        }

    def run_next(self, job: Job):
        """Execute one dequeued job (skipped when it was cancelled meanwhile)."""
        with self._lock:
            if job.status != JobStatus.PENDING:
                return
            job.start()
        logger.info("→ Running job %s (%s)", job.job_id, job.config.name)
        try:
            report = self.runner(job.config)
        except Exception as e:
            with self._lock:
                job.fail(str(e))
            return
        with self._lock:
            job.complete(report)
        logger.info("✓ Job %s completed (Duration: %.1fs)", job.job_id, job.get_duration())

    def start(self):
        """Start the background worker."""
        if self._worker is not None and self._worker.is_alive():
            logger.warning("⚠️ Worker already running")
            return
        self._worker = threading.Thread(target=self._loop, daemon=True)
        self._worker.start()
        logger.info("✓ Job worker started")

    def stop(self, timeout: float = 5.0):
        """Stop the worker after its current job."""
        if self._worker is None or not self._worker.is_alive():
            return
        self._queue.put(None)
        self._worker.join(timeout=timeout)
        logger.info("✓ Job worker stopped")

    def _loop(self):
        while True:
            job = self._queue.get()
            if job is None:
                break
            self.run_next(job)

"""Lab package: feature pipeline, experiment orchestration and the job queue."""
from .experiment_manager import ExperimentManager
from .job_manager import Job, JobManager, JobStatus

__all__ = ['ExperimentManager', 'Job', 'JobManager', 'JobStatus']

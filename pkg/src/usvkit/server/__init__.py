from .app import create_app
from .jobs import JobQueue, JobStatus

__all__ = ["create_app", "JobQueue", "JobStatus"]

"""FIFO background job queue with one worker thread.

States move forward only: queued -> running -> done | failed. Long
operations (train, detect, augment, evaluate) run here so HTTP handlers
return immediately and the UI polls /jobs/{id}.
"""
from __future__ import annotations

import queue
import threading
import traceback
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional


@dataclass
class JobStatus:
    job_id: str
    kind: str  # train | detect | augment | evaluate
    state: str = "queued"  # queued | running | done | failed
    progress: float = 0.0
    result: Optional[dict] = None
    error: str = ""


_ORDER = {"queued": 0, "running": 1, "done": 2, "failed": 2}


class JobQueue:
    def __init__(self):
        self._jobs: Dict[str, JobStatus] = {}
        self._queue: "queue.Queue[Optional[str]]" = queue.Queue()
        self._fns: Dict[str, Callable[[Callable[[float], None]], dict]] = {}
        self._lock = threading.Lock()
        self._counter = 0
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def submit(self, kind: str, fn: Callable[[Callable[[float], None]], dict]) -> str:
        """fn receives a progress callback taking a fraction in [0, 1] and
        returns the job's result dict."""
        with self._lock:
            self._counter += 1
            job_id = f"job-{self._counter:04d}"
            self._jobs[job_id] = JobStatus(job_id=job_id, kind=kind)
            self._fns[job_id] = fn
        self._queue.put(job_id)
        return job_id

    def get(self, job_id: str) -> Optional[JobStatus]:
        with self._lock:
            return self._jobs.get(job_id)

    def _transition(self, job: JobStatus, state: str):
        if _ORDER[state] < _ORDER[job.state]:
            raise RuntimeError(f"job {job.job_id}: illegal transition {job.state} -> {state}")
        job.state = state

    def _run(self):
        while True:
            job_id = self._queue.get()
            if job_id is None:
                return
            with self._lock:
                job = self._jobs[job_id]
                fn = self._fns.pop(job_id)
                self._transition(job, "running")

            def progress(fraction: float, job=job):
                with self._lock:
                    job.progress = min(max(float(fraction), 0.0), 1.0)

            try:
                result = fn(progress)
            except Exception as exc:  # noqa: BLE001 - job errors surface via status
                with self._lock:
                    job.error = f"{type(exc).__name__}: {exc}"
                    self._transition(job, "failed")
                traceback.print_exc()
                continue
            with self._lock:
                job.progress = 1.0
                job.result = result
                self._transition(job, "done")

    def shutdown(self):
        self._queue.put(None)
        self._worker.join(timeout=5)

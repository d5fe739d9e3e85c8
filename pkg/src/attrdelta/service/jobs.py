"""In-process job store with a background worker thread.

Jobs move queued -> running -> done | failed. Results stay in memory; the
toy samples are tiny. The worker is a daemon thread consuming a FIFO queue,
so requests return immediately and clients poll the status endpoint.
"""

from __future__ import annotations

import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Optional


@dataclass
class Job:
    job_id: str
    kind: str  # "generate" | "sweep"
    seed: int
    run: Callable[[], dict]
    state: str = "queued"
    error: Optional[str] = None
    result: Optional[dict] = None
    created_at: float = field(default_factory=time.time)
    started_at: Optional[float] = None
    finished_at: Optional[float] = None


class JobStore:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._queue: "queue.Queue[str]" = queue.Queue()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._worker: Optional[threading.Thread] = None

    def start(self) -> None:
        if self._worker is None or not self._worker.is_alive():
            self._stop.clear()
            self._worker = threading.Thread(target=self._loop, daemon=True)
            self._worker.start()

    def stop(self) -> None:
        self._stop.set()
        self._queue.put("")  # wake the worker
        if self._worker is not None:
            self._worker.join(timeout=5)

    def submit(self, kind: str, seed: int, run: Callable[[], dict]) -> Job:
        job = Job(job_id=uuid.uuid4().hex[:12], kind=kind, seed=seed, run=run)
        with self._lock:
            self._jobs[job.job_id] = job
        self._queue.put(job.job_id)
        return job

    def get(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self._jobs.get(job_id)

    def _loop(self) -> None:
        while not self._stop.is_set():
            job_id = self._queue.get()
            if not job_id:
                continue
            job = self.get(job_id)
            if job is None:
                continue
            job.state = "running"
            job.started_at = time.time()
            try:
                job.result = job.run()
                job.state = "done"
            except Exception as exc:
                job.error = f"{type(exc).__name__}: {exc}"
                job.state = "failed"
            finally:
                job.finished_at = time.time()

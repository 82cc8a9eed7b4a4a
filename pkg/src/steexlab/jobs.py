"""Asynchronous explanation jobs with a disk-persisted store.

Each job owns a directory holding its record and, once finished, the result
artifacts.  Records are written atomically; terminal states are immutable;
the store survives process restarts because nothing lives only in memory.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .errors import SteexlabError

TERMINAL_STATES = ("done", "failed")
RECORD_NAME = "record.json"


@dataclass
class JobRecord:
    job_id: str
    state: str
    request: dict
    error: Optional[dict] = None
    result_dir: Optional[str] = None
    timings: dict = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_jsonable(data: dict) -> "JobRecord":
        return JobRecord(**data)


class JobStore:
    def __init__(self, home: str | Path):
        self.root = Path(home) / "jobs"
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def job_dir(self, job_id: str) -> Path:
        return self.root / job_id

    def _record_path(self, job_id: str) -> Path:
        return self.job_dir(job_id) / RECORD_NAME

    def create(self, request: dict) -> JobRecord:
        job_id = uuid.uuid4().hex
        record = JobRecord(
            job_id=job_id,
            state="queued",
            request=request,
            timings={"submitted": time.time()},
        )
        self.job_dir(job_id).mkdir(parents=True)
        self._write(record)
        return record

    def _write(self, record: JobRecord) -> None:
        path = self._record_path(record.job_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record.to_jsonable(), indent=2))
        tmp.replace(path)

    def exists(self, job_id: str) -> bool:
        return self._record_path(job_id).exists()

    def get(self, job_id: str) -> JobRecord:
        path = self._record_path(job_id)
        if not path.exists():
            raise KeyError(job_id)
        return JobRecord.from_jsonable(json.loads(path.read_text()))

    def transition(self, job_id: str, state: str, **updates) -> JobRecord:
        with self._lock:
            record = self.get(job_id)
            if record.state in TERMINAL_STATES:
                raise SteexlabError(f"job {job_id} is terminal ({record.state})")
            record.state = state
            record.timings[state] = time.time()
            for key, value in updates.items():
                setattr(record, key, value)
            self._write(record)
        return record


def default_worker_count() -> int:
    env = os.environ.get("STEEXLAB_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, (os.cpu_count() or 2) - 1)


class JobRunner:
    """Bounded worker pool executing job functions against the store."""

    def __init__(self, store: JobStore, max_workers: Optional[int] = None):
        self.store = store
        self.pool = ThreadPoolExecutor(max_workers=max_workers or default_worker_count())

    def submit(self, job_id: str, fn: Callable[[], tuple[Optional[str], Optional[dict]]]) -> None:
        def run():
            try:
                self.store.transition(job_id, "running")
                result_dir, _ = fn()
                self.store.transition(job_id, "done", result_dir=result_dir)
            except Exception as exc:  # noqa: BLE001 - job boundary
                error = {"error_class": type(exc).__name__, "message": str(exc)}
                step = getattr(exc, "step", None)
                if step is not None:
                    error["step"] = step
                try:
                    self.store.transition(job_id, "failed", error=error)
                except SteexlabError:
                    pass

        self.pool.submit(run)

    def shutdown(self, wait: bool = True) -> None:
        self.pool.shutdown(wait=wait)

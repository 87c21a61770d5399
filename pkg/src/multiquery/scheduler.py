"""Local concurrent job pool for driver jobs."""

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from multiquery.driver import execute_job
from multiquery.models import COMPLETED, STATUSES, BatchResult, Model

_logger = logging.getLogger(__name__)

RUN_LOG_NAME = "queens_run.log"
WORKSPACE_ENV = "QUEENS_WORKSPACE"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_attached_logs = {}
_attach_lock = threading.Lock()


class SchedulerError(RuntimeError):
    """The batch could not be launched."""


def default_workspace():
    return Path(os.environ.get(WORKSPACE_ENV, os.path.join(os.getcwd(), "workspace")))


def attach_run_log(path):
    """Route the package logger to a line-oriented, timestamped run log (idempotent)."""
    path = str(Path(path).resolve())
    with _attach_lock:
        if path in _attached_logs:
            return _attached_logs[path]
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(path)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler.setLevel(logging.INFO)
        root = logging.getLogger("multiquery")
        if root.level == logging.NOTSET or root.level > logging.INFO:
            root.setLevel(logging.INFO)
        root.addHandler(handler)
        _attached_logs[path] = handler
        return handler


def detach_run_log(path):
    path = str(Path(path).resolve())
    with _attach_lock:
        handler = _attached_logs.pop(path, None)
    if handler is not None:
        logging.getLogger("multiquery").removeHandler(handler)
        handler.close()


@dataclass
class SchedulerConfig:
    """Pool settings.

    Attributes:
        max_concurrent: Upper bound on simultaneously running jobs.
        retries: Extra attempts for a job that did not complete.
        workspace: Root for job directories; defaults to ``$QUEENS_WORKSPACE``
            or ``./workspace``.
        log_path: Run log; defaults to ``<workspace>/queens_run.log``.
    """

    max_concurrent: int = 1
    retries: int = 0
    workspace: str = None
    log_path: str = None

    def __post_init__(self):
        if int(self.max_concurrent) < 1:
            raise SchedulerError("max_concurrent must be at least 1")
        if int(self.retries) < 0:
            raise SchedulerError("retries must be non-negative")
        self.max_concurrent = int(self.max_concurrent)
        self.retries = int(self.retries)
        if self.workspace is None:
            self.workspace = str(default_workspace())
        if self.log_path is None:
            self.log_path = str(Path(self.workspace) / RUN_LOG_NAME)


@dataclass
class BatchReport:
    records: list
    counts: dict
    wall_time: float
    peak_running: int = 0


class Scheduler:
    """Fixed-size worker pool; job ids increase monotonically over its lifetime."""

    def __init__(self, config=None):
        self.config = config or SchedulerConfig()
        self._next_id = 0
        self._id_lock = threading.Lock()
        self._running = 0
        self._run_lock = threading.Lock()
        self.peak_running = 0

    def _reserve_ids(self, n):
        with self._id_lock:
            start = self._next_id
            self._next_id += n
        return range(start, start + n)

    def _check_workspace(self):
        ws = Path(self.config.workspace)
        try:
            ws.mkdir(parents=True, exist_ok=True)
            probe = ws / f".write_probe_{os.getpid()}_{threading.get_ident()}"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise SchedulerError(f"workspace not writable: {ws} ({exc})") from None

    def _run_one(self, job_id, params, driver):
        log = _logger
        with self._run_lock:
            self._running += 1
            self.peak_running = max(self.peak_running, self._running)
        try:
            record = None
            for attempt in range(self.config.retries + 1):
                log.info("job %d running (attempt %d)", job_id, attempt)
                record = execute_job(driver, params, job_id, self.config.workspace, attempt)
                if record.status == COMPLETED:
                    break
                log.info("job %d attempt %d ended %s: %s", job_id, attempt, record.status, record.diagnostic)
            log.info("job %d %s after %.3f s", job_id, record.status, record.wall_time)
            return record
        finally:
            with self._run_lock:
                self._running -= 1

    def submit_batch(self, jobs):
        """Run ``(params, driver)`` jobs; blocks until all are terminal.

        Returns:
            :class:`BatchReport` with records in submission order.

        Raises:
            SchedulerError: on an empty batch or unwritable workspace.
        """
        jobs = list(jobs)
        if not jobs:
            raise SchedulerError("empty batch")
        self._check_workspace()
        attach_run_log(self.config.log_path)
        ids = self._reserve_ids(len(jobs))
        t0 = time.perf_counter()
        for job_id in ids:
            _logger.info("job %d queued", job_id)
        self.peak_running = 0
        with ThreadPoolExecutor(max_workers=self.config.max_concurrent) as pool:
            futures = [
                pool.submit(self._run_one, job_id, params, driver)
                for job_id, (params, driver) in zip(ids, jobs)
            ]
            records = [f.result() for f in futures]
        wall = time.perf_counter() - t0
        counts = {s: 0 for s in STATUSES}
        for r in records:
            counts[r.status] += 1
        _logger.info(
            "batch of %d finished in %.3f s: %s", len(records), wall,
            ", ".join(f"{k}={v}" for k, v in counts.items()),
        )
        return BatchReport(records, counts, wall, self.peak_running)


def submit_batch(jobs, sched):
    """One-shot convenience wrapper around :meth:`Scheduler.submit_batch`."""
    return Scheduler(sched).submit_batch(jobs)


class DriverModel(Model):
    """A :class:`Model` whose rows run as external-solver jobs through a scheduler."""

    def __init__(self, driver, sched, space):
        if driver.output_dim is None:
            driver = replace(driver, output_dim=1)
        self.driver = driver
        self.scheduler = sched if isinstance(sched, Scheduler) else Scheduler(sched)
        self.space = space
        self.input_dim = space.dim
        self.input_names = space.names
        self.output_dim = driver.output_dim or 1
        self.last_report = None

    def __repr__(self):
        return f"DriverModel({self.driver.executable!r}, d={self.input_dim}, m={self.output_dim})"

    def _evaluate_rows(self, values):
        names = self.space.names
        jobs = [(dict(zip(names, row.tolist())), self.driver) for row in values]
        report = self.scheduler.submit_batch(jobs)
        self.last_report = report
        n, m = values.shape[0], self.output_dim
        outputs = np.full((n, m), np.nan)
        statuses, diagnostics = [], []
        for i, rec in enumerate(report.records):
            if rec.status == COMPLETED:
                outputs[i] = rec.output
            statuses.append(rec.status)
            diagnostics.append(rec.diagnostic)
        return BatchResult(outputs, statuses, diagnostics)


def as_model(driver, sched, space):
    return DriverModel(driver, sched, space)

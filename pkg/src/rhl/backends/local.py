"""Local backend: thread workers for in-process tasks, one OS process
per rank for executables.

Placement cores and GPUs are logical: they bound what the scheduler
hands out, they are not pinned. Spawned processes learn their slice
through RHL_* environment variables.
"""

from __future__ import annotations

import itertools
import logging
import os
import queue
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from ..events import (
    ENTITY_TASK,
    EV_CANCELED,
    EV_DONE,
    EV_FAILED,
    EV_RUNNING,
    ExecutionEvent,
)
from ..functions import REGISTRY
from ..mapper import Placement
from ..model import TaskCategory, TaskDescription, task_type_key
from ..runners import run_coupled, run_service_client
from .base import Backend, ExecutionHandle, UnknownFunction

log = logging.getLogger(__name__)


class _Job:
    __slots__ = ("task", "placement", "cancel_event", "procs")

    def __init__(self, task: TaskDescription, placement: Placement):
        self.task = task
        self.placement = placement
        self.cancel_event = threading.Event()
        self.procs: list[subprocess.Popen] = []


class LocalBackend(Backend):
    id = "local"

    def __init__(self, clock, workers: int | None = None, services=None):
        self.clock = clock
        self.workers = workers if workers is not None else (os.cpu_count() or 4)
        self.services = services  # ServiceManager, wired by the runtime
        self.ctx = None           # RuntimeContext, wired by the runtime
        self._events: queue.Queue[ExecutionEvent] = queue.Queue()
        self._pool = ThreadPoolExecutor(
            max_workers=self.workers, thread_name_prefix="rhl-worker"
        )
        self._jobs: dict[int, _Job] = {}
        self._tokens = itertools.count(1)
        self._lock = threading.Lock()

    # events -------------------------------------------------------------
    def emit(self, event: ExecutionEvent) -> None:
        self._events.put(event)

    def _emit_task(self, task_id: str, event: str, attrs: dict) -> None:
        self.emit(ExecutionEvent(self.clock.now(), ENTITY_TASK, task_id, event, attrs))

    def poll_events(self, timeout: float = 0.0) -> list[ExecutionEvent]:
        out: list[ExecutionEvent] = []
        try:
            out.append(self._events.get(timeout=timeout) if timeout > 0 else self._events.get_nowait())
        except queue.Empty:
            return out
        while True:
            try:
                out.append(self._events.get_nowait())
            except queue.Empty:
                return out

    # launch -------------------------------------------------------------
    def launch(self, task: TaskDescription, placement: Placement) -> ExecutionHandle:
        handle = ExecutionHandle(task.id, self.id, next(self._tokens))
        job = _Job(task, placement)
        with self._lock:
            self._jobs[handle.token] = job

        if task.category is TaskCategory.SERVICE:
            if self.services is None:
                self._emit_task(task.id, EV_FAILED, {"error": "no service manager configured"})
            else:
                self.services.start_async(task, placement)
            return handle

        if task.category is TaskCategory.EXECUTABLE:
            t = threading.Thread(
                target=self._run_executable, args=(job,), daemon=True,
                name=f"rhl-exec-{task.id}",
            )
            t.start()
            return handle

        self._pool.submit(self._run_callable, job)
        return handle

    def _running_attrs(self, job: _Job) -> dict:
        return {
            "task_type_key": task_type_key(job.task).label,
            "cores": job.placement.cores,
            "gpus": job.placement.gpus,
            "partition": job.placement.partition,
        }

    # executables ----------------------------------------------------------
    def _rank_env(self, job: _Job, rank_binding) -> dict:
        env = dict(os.environ)
        env.update(job.task.payload.get("env", {}))
        env["RHL_RANK"] = str(rank_binding.rank)
        env["RHL_RANKS"] = str(job.task.ranks)
        env["RHL_CORES"] = ",".join(str(c) for c in rank_binding.cores)
        env["RHL_GPUS"] = ",".join(str(g) for g in rank_binding.gpus)
        env["RHL_TASK_ID"] = job.task.id
        env["RHL_RENDEZVOUS"] = f"local://{job.task.id}"
        return env

    def _run_executable(self, job: _Job) -> None:
        task = job.task
        if job.cancel_event.is_set():
            self._emit_task(task.id, EV_CANCELED, {})
            return
        cmd = [task.payload["command"], *[str(a) for a in task.payload.get("args", [])]]
        cwd = task.payload.get("cwd")
        try:
            for binding in job.placement.bindings:
                job.procs.append(
                    subprocess.Popen(
                        cmd,
                        env=self._rank_env(job, binding),
                        cwd=cwd,
                        stdout=subprocess.DEVNULL,
                        stderr=subprocess.DEVNULL,
                    )
                )
        except OSError as exc:
            for p in job.procs:
                p.kill()
            self._emit_task(task.id, EV_FAILED, {"error": f"spawn failed: {exc}"})
            return
        self._emit_task(task.id, EV_RUNNING, self._running_attrs(job))
        t0 = time.perf_counter()
        rcs = [p.wait() for p in job.procs]
        wall = time.perf_counter() - t0
        if job.cancel_event.is_set():
            self._emit_task(task.id, EV_CANCELED, {"exit_codes": rcs})
        elif all(rc == 0 for rc in rcs):
            self._emit_task(task.id, EV_DONE, {"compute_s": wall, "exit_codes": rcs})
        else:
            self._emit_task(
                task.id, EV_FAILED, {"error": f"nonzero exit codes {rcs}", "exit_codes": rcs}
            )

    # in-process tasks -----------------------------------------------------
    def _run_callable(self, job: _Job) -> None:
        task = job.task
        if job.cancel_event.is_set():
            self._emit_task(task.id, EV_CANCELED, {})
            return
        self._emit_task(task.id, EV_RUNNING, self._running_attrs(job))
        t0 = time.perf_counter()
        try:
            if task.category is TaskCategory.FUNCTION:
                name = task.payload["function"]
                fn = REGISTRY.get(name)
                if fn is None:
                    raise UnknownFunction(f"function {name!r} is not registered")
                result = fn(self.ctx, **task.payload.get("args", {}))
            elif task.category is TaskCategory.COUPLED:
                result = run_coupled(self.ctx, task)
            elif task.category is TaskCategory.SERVICE_CLIENT:
                result = run_service_client(self.ctx, task)
            else:
                raise RuntimeError(f"local backend cannot run category {task.category}")
        except Exception as exc:
            log.debug("task %s failed", task.id, exc_info=True)
            self._emit_task(task.id, EV_FAILED, {"error": str(exc) or type(exc).__name__})
            return
        wall = time.perf_counter() - t0
        attrs: dict = {"compute_s": wall}
        if isinstance(result, dict):
            attrs.update(result)
        if job.cancel_event.is_set():
            self._emit_task(task.id, EV_CANCELED, {})
        else:
            self._emit_task(task.id, EV_DONE, attrs)

    # cancel / shutdown ----------------------------------------------------
    def cancel(self, handle: ExecutionHandle) -> None:
        with self._lock:
            job = self._jobs.get(handle.token)
        if job is None:
            return
        job.cancel_event.set()
        for p in job.procs:
            if p.poll() is None:
                p.terminate()
        if job.task.category is TaskCategory.SERVICE and self.services is not None:
            self.services.stop_service(job.task.id, outcome=EV_CANCELED)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)

"""Discrete-event simulated backend.

Tasks complete at start + expected_duration on a virtual clock that
only moves when advance_virtual_time is called. Completions fire in
timestamp order with launch order breaking ties, so a run is
bit-reproducible.

An optional per-node dispatch overhead serializes task starts on each
node by that many virtual seconds, modeling the cost of starting a
task on real hardware. It defaults to 0.0: tasks then start at the
instant they are launched.
"""

from __future__ import annotations

import heapq
import itertools

from ..clock import VirtualClock
from ..events import (
    ENTITY_TASK,
    EV_CANCELED,
    EV_DONE,
    EV_FAILED,
    EV_RUNNING,
    ExecutionEvent,
)
from ..mapper import Placement
from ..model import TaskCategory, TaskDescription, task_type_key
from .base import Backend, ExecutionHandle


class SimBackend(Backend):
    id = "sim"

    def __init__(self, clock: VirtualClock | None = None, dispatch_overhead: float = 0.0):
        self.clock = clock if clock is not None else VirtualClock()
        self.dispatch_overhead = float(dispatch_overhead)
        self._heap: list[tuple[float, int, ExecutionEvent]] = []
        self._seq = itertools.count()
        self._tokens = itertools.count(1)
        self._node_free_at: dict[str, float] = {}
        self._canceled: set[str] = set()
        self._terminal: set[str] = set()
        self._open_services: dict[int, ExecutionHandle] = {}

    def _push(self, ts: float, ev: ExecutionEvent) -> None:
        heapq.heappush(self._heap, (ts, next(self._seq), ev))

    def launch(self, task: TaskDescription, placement: Placement) -> ExecutionHandle:
        now = self.clock.now()
        start = now
        for node in placement.nodes:
            start = max(start, self._node_free_at.get(node, 0.0))
        start += self.dispatch_overhead
        for node in placement.nodes:
            self._node_free_at[node] = start

        handle = ExecutionHandle(task.id, self.id, next(self._tokens))
        run_attrs = {
            "task_type_key": task_type_key(task).label,
            "cores": placement.cores,
            "gpus": placement.gpus,
            "partition": placement.partition,
        }
        self._push(start, ExecutionEvent(start, ENTITY_TASK, task.id, EV_RUNNING, run_attrs))

        if task.category is TaskCategory.SERVICE:
            # runs until the orchestrator stops it
            self._open_services[handle.token] = handle
            return handle

        duration = task.expected_duration if task.expected_duration is not None else 0.0
        end = start + duration
        if task.payload.get("fail"):
            term = ExecutionEvent(
                end, ENTITY_TASK, task.id, EV_FAILED, {"error": "simulated failure"}
            )
        else:
            term = ExecutionEvent(
                end, ENTITY_TASK, task.id, EV_DONE, {"compute_s": duration}
            )
        self._push(end, term)
        return handle

    def complete_service(self, handle: ExecutionHandle) -> None:
        """Stop a simulated service; its task finishes Done now."""
        if handle.token not in self._open_services:
            return
        del self._open_services[handle.token]
        now = self.clock.now()
        self._push(now, ExecutionEvent(now, ENTITY_TASK, handle.task_id, EV_DONE, {"compute_s": 0.0}))

    def cancel(self, handle: ExecutionHandle) -> None:
        if handle.task_id in self._terminal or handle.task_id in self._canceled:
            return
        self._canceled.add(handle.task_id)
        self._open_services.pop(handle.token, None)
        now = self.clock.now()
        self._push(now, ExecutionEvent(now, ENTITY_TASK, handle.task_id, EV_CANCELED, {}))

    def poll_events(self, timeout: float = 0.0) -> list[ExecutionEvent]:
        now = self.clock.now()
        out: list[ExecutionEvent] = []
        while self._heap and self._heap[0][0] <= now:
            _, _, ev = heapq.heappop(self._heap)
            if ev.id in self._terminal:
                continue  # nothing follows a delivered terminal event
            if ev.id in self._canceled:
                # pending Running/terminal of a canceled task is void;
                # the Canceled record itself still gets through
                if ev.event == EV_CANCELED:
                    self._terminal.add(ev.id)
                    out.append(ev)
                continue
            if ev.event in (EV_DONE, EV_FAILED):
                self._terminal.add(ev.id)
            out.append(ev)
        return out

    def has_pending(self) -> bool:
        return bool(self._heap)

    def next_event_ts(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def advance_virtual_time(self, dt: float) -> list[ExecutionEvent]:
        self.clock.advance(dt)
        return self.poll_events()

    def advance_to_next(self) -> list[ExecutionEvent]:
        """Jump the clock to the next scheduled event and fire it."""
        if not self._heap:
            return []
        dt = max(0.0, self._heap[0][0] - self.clock.now())
        return self.advance_virtual_time(dt)

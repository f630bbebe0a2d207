"""Runtime context handed to in-process task code.

A Function task receives one of these as its first argument; it is the
only sanctioned way for task code to reach the store, services, the
event log, or to submit new tasks mid-run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .events import ExecutionEvent
from .model import ExecutionPolicy, TaskDescription


@dataclass
class RuntimeContext:
    clock: object
    policy: ExecutionPolicy
    seed: int
    store: object | None = None
    # lookup(name) -> list of ready ServiceEndpoint
    lookup: Callable = lambda name: []
    # infer(service_name, request, router_state) -> InferenceResponse
    infer: Callable = None
    # spawn_task(TaskDescription) -> bool (accepted)
    spawn_task: Callable = lambda task: False
    # emit(ExecutionEvent) -> None, lands in the run event log
    emit: Callable = lambda ev: None
    extras: dict = field(default_factory=dict)

    def now(self) -> float:
        return self.clock.now()

    def emit_event(self, entity: str, id: str, event: str, attrs: dict | None = None) -> None:
        self.emit(ExecutionEvent(self.now(), entity, id, event, attrs or {}))


def spawn_request(task: TaskDescription) -> TaskDescription:
    return task

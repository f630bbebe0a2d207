"""Backend contract shared by the local and simulated executors.

A backend turns placed tasks into execution and reports progress only
through events: every launch eventually yields a Running event and
exactly one terminal event per task, delivered via poll_events.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..events import ExecutionEvent
from ..mapper import Placement
from ..model import TaskDescription


class BackendError(RuntimeError):
    pass


class SpawnFailure(BackendError):
    """The OS-level spawn of a task rank failed."""


class UnknownFunction(BackendError):
    """A Function task names a function that is not registered."""


@dataclass(frozen=True)
class ExecutionHandle:
    task_id: str
    backend: str
    token: int


class Backend:
    id = "base"

    def launch(self, task: TaskDescription, placement: Placement) -> ExecutionHandle:
        raise NotImplementedError

    def poll_events(self, timeout: float = 0.0) -> list[ExecutionEvent]:
        """Drain available events; block up to timeout for the first one."""
        raise NotImplementedError

    def cancel(self, handle: ExecutionHandle) -> None:
        raise NotImplementedError

    def shutdown(self) -> None:
        pass

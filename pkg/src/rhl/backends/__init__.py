from .base import Backend, BackendError, ExecutionHandle, SpawnFailure, UnknownFunction
from .local import LocalBackend
from .sim import SimBackend

__all__ = [
    "Backend",
    "BackendError",
    "ExecutionHandle",
    "LocalBackend",
    "SimBackend",
    "SpawnFailure",
    "UnknownFunction",
]

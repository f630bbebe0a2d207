"""Runtime for heterogeneous task campaigns on partitioned resources.

The package is organized around an append-only execution event log:
the orchestrator and backends emit events, and every metric or report
is derived from the log alone.
"""

__version__ = "0.1.0"

from .model import (
    Campaign,
    CampaignValidationError,
    ExecutionPolicy,
    NodeSpec,
    PartitionPolicy,
    ResourceDescription,
    TaskCategory,
    TaskDescription,
    TaskState,
    TaskTypeKey,
    ready_set,
    task_type_key,
    validate_campaign,
)
from .events import EventLog, ExecutionEvent

__all__ = [
    "Campaign",
    "CampaignValidationError",
    "EventLog",
    "ExecutionEvent",
    "ExecutionPolicy",
    "NodeSpec",
    "PartitionPolicy",
    "ResourceDescription",
    "TaskCategory",
    "TaskDescription",
    "TaskState",
    "TaskTypeKey",
    "ready_set",
    "task_type_key",
    "validate_campaign",
]

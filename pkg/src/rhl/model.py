"""Core domain model: tasks, resources, policy, lifecycle, validation.

Everything here is a plain value object; no threads, no clocks, no IO.
A campaign that passes validate_campaign is immutable afterwards and
safe to hand to any scheduler or backend.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

DEFAULT_BACKEND = "local"
DEFAULT_PARTITION = "default"

SCHEDULING_MODES = ("Backfill", "FifoExclusive")
ROUTING_MODES = ("Random", "RoundRobin", "TokenBalanced")


class TaskCategory(str, enum.Enum):
    EXECUTABLE = "Executable"
    FUNCTION = "Function"
    SERVICE = "Service"
    SERVICE_CLIENT = "ServiceClient"
    COUPLED = "Coupled"


class TaskState(str, enum.Enum):
    NEW = "New"
    READY = "Ready"
    SCHEDULED = "Scheduled"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"
    CANCELED = "Canceled"


TERMINAL_STATES = frozenset(
    {TaskState.DONE, TaskState.FAILED, TaskState.CANCELED}
)

# Forward edges of the lifecycle; Canceled is reachable from every
# non-terminal state and is handled separately in legal_transition.
_FORWARD = {
    TaskState.NEW: {TaskState.READY},
    TaskState.READY: {TaskState.SCHEDULED},
    TaskState.SCHEDULED: {TaskState.RUNNING},
    TaskState.RUNNING: {TaskState.DONE, TaskState.FAILED},
    TaskState.DONE: set(),
    TaskState.FAILED: set(),
    TaskState.CANCELED: set(),
}


def legal_transition(src: TaskState, dst: TaskState) -> bool:
    if dst is TaskState.CANCELED:
        return src not in TERMINAL_STATES
    return dst in _FORWARD[src]


class IllegalTransition(RuntimeError):
    def __init__(self, task_id: str, src: TaskState, dst: TaskState):
        super().__init__(f"task {task_id}: illegal transition {src.value} -> {dst.value}")
        self.task_id = task_id
        self.src = src
        self.dst = dst


@dataclass(frozen=True, order=True)
class TaskTypeKey:
    """Coarse type of a task: how it runs, on what, and at what scale.

    Two tasks share a key exactly when they have the same execution
    model (Serial vs MPI), the same accelerator class (CPU vs GPU) and,
    for MPI, the same rank count.
    """

    execution_model: str  # "Serial" | "MPI"
    accelerator: str      # "CPU" | "GPU"
    mpi_scale: int        # == ranks

    @property
    def label(self) -> str:
        return f"{self.execution_model}/{self.accelerator}/{self.mpi_scale}"

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class TaskDescription:
    id: str
    category: TaskCategory
    ranks: int = 1
    cores_per_rank: int = 1
    gpus_per_rank: int = 0
    dependencies: tuple[str, ...] = ()
    estimated_input_tokens: int = 0
    partition_hint: str | None = None
    expected_duration: float | None = None
    payload: Mapping = field(default_factory=dict)

    def __post_init__(self):
        # normalize containers so equality and hashing behave
        object.__setattr__(self, "dependencies", tuple(self.dependencies))
        object.__setattr__(self, "payload", dict(self.payload))
        if not isinstance(self.category, TaskCategory):
            object.__setattr__(self, "category", TaskCategory(self.category))

    def __hash__(self):
        return hash(self.id)


def task_type_key(task: TaskDescription) -> TaskTypeKey:
    return TaskTypeKey(
        execution_model="MPI" if task.ranks > 1 else "Serial",
        accelerator="GPU" if task.gpus_per_rank > 0 else "CPU",
        mpi_scale=task.ranks,
    )


@dataclass(frozen=True)
class NodeSpec:
    name: str
    cores: int
    gpus: int = 0


@dataclass(frozen=True)
class ResourceDescription:
    nodes: tuple[NodeSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def total_cores(self) -> int:
        return sum(n.cores for n in self.nodes)

    @property
    def total_gpus(self) -> int:
        return sum(n.gpus for n in self.nodes)


ALL_CATEGORIES = tuple(TaskCategory)


@dataclass(frozen=True)
class PartitionPolicy:
    """A named, disjoint subset of nodes bound to one backend."""

    name: str
    nodes: tuple[str, ...]
    backend: str = DEFAULT_BACKEND
    categories: tuple[TaskCategory, ...] = ALL_CATEGORIES

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(
            self,
            "categories",
            tuple(TaskCategory(c) for c in self.categories),
        )

    def allows(self, category: TaskCategory) -> bool:
        return category in self.categories


@dataclass(frozen=True)
class ExecutionPolicy:
    partitions: tuple[PartitionPolicy, ...] = ()
    oversubscription_factor: float = 2.0
    scheduling: str = "Backfill"
    routing: str = "RoundRobin"
    service_ready_timeout: float = 30.0
    rate_window: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "partitions", tuple(self.partitions))


@dataclass(frozen=True)
class Violation:
    kind: str        # CyclicDependency | UnsatisfiableRequirement | UnknownDependency | PolicyViolation
    message: str
    task_id: str | None = None
    partition: str | None = None

    def __str__(self) -> str:
        where = []
        if self.task_id is not None:
            where.append(f"task={self.task_id}")
        if self.partition is not None:
            where.append(f"partition={self.partition}")
        loc = f" [{', '.join(where)}]" if where else ""
        return f"{self.kind}: {self.message}{loc}"


class CampaignValidationError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"campaign validation failed:\n{lines}")


@dataclass(frozen=True)
class Campaign:
    """A validated, immutable set of tasks plus resources and policy."""

    tasks: Mapping[str, TaskDescription]
    resources: ResourceDescription
    policy: ExecutionPolicy
    seed: int = 0
    store: str = "memory"

    def __post_init__(self):
        object.__setattr__(self, "tasks", dict(self.tasks))


def effective_partitions(
    resources: ResourceDescription, policy: ExecutionPolicy
) -> tuple[PartitionPolicy, ...]:
    """Explicit partitions plus an implicit one covering leftover nodes.

    Nodes not claimed by any explicit partition form partition
    "default" on the local backend, accepting every category. Empty
    when all nodes are claimed.
    """
    claimed = {n for p in policy.partitions for n in p.nodes}
    leftover = tuple(n.name for n in resources.nodes if n.name not in claimed)
    parts = tuple(policy.partitions)
    if leftover:
        parts = parts + (
            PartitionPolicy(name=DEFAULT_PARTITION, nodes=leftover, backend=DEFAULT_BACKEND),
        )
    return parts


def _rank_capacity(node: NodeSpec, task: TaskDescription) -> int:
    if task.cores_per_rank > node.cores:
        return 0
    cap = node.cores // task.cores_per_rank
    if task.gpus_per_rank > 0:
        if task.gpus_per_rank > node.gpus:
            return 0
        cap = min(cap, node.gpus // task.gpus_per_rank)
    return cap


def partition_fits(
    partition: PartitionPolicy,
    nodes_by_name: Mapping[str, NodeSpec],
    task: TaskDescription,
) -> bool:
    """Whether an empty partition could ever host the task."""
    total = 0
    for name in partition.nodes:
        total += _rank_capacity(nodes_by_name[name], task)
        if total >= task.ranks:
            return True
    return False


def ready_set(
    tasks: Iterable[TaskDescription], satisfied: frozenset[str] | set[str]
) -> set[str]:
    """Ids of tasks whose dependencies are all satisfied.

    Pure: no ordering, no state. Tasks whose own id is already in
    `satisfied` are excluded.
    """
    out = set()
    for t in tasks:
        if t.id in satisfied:
            continue
        if all(d in satisfied for d in t.dependencies):
            out.add(t.id)
    return out


def topological_order(tasks: Mapping[str, TaskDescription]) -> list[str]:
    """Kahn's algorithm, stable in task declaration order.

    Raises ValueError when the dependency graph has a cycle.
    """
    indeg = {tid: 0 for tid in tasks}
    dependents: dict[str, list[str]] = {tid: [] for tid in tasks}
    for t in tasks.values():
        for dep in t.dependencies:
            indeg[t.id] += 1
            dependents[dep].append(t.id)
    frontier = [tid for tid in tasks if indeg[tid] == 0]
    order: list[str] = []
    i = 0
    while i < len(frontier):
        tid = frontier[i]
        i += 1
        order.append(tid)
        for nxt in dependents[tid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                frontier.append(nxt)
    if len(order) != len(tasks):
        raise ValueError("dependency graph contains a cycle")
    return order


def _find_cycle(tasks: Mapping[str, TaskDescription], stuck: set[str]) -> list[str]:
    # walk dependency edges inside the stuck set until a repeat
    start = sorted(stuck)[0]
    seen: dict[str, int] = {}
    path: list[str] = []
    cur = start
    while cur not in seen:
        seen[cur] = len(path)
        path.append(cur)
        cur = next(d for d in tasks[cur].dependencies if d in stuck)
    return path[seen[cur]:]


def validate_campaign(
    tasks: Sequence[TaskDescription],
    resources: ResourceDescription,
    policy: ExecutionPolicy,
    *,
    known_backends: Iterable[str] = ("local", "sim"),
    seed: int = 0,
    store: str = "memory",
) -> Campaign:
    """Validate and freeze a campaign.

    Collects all violations rather than stopping at the first; raises
    CampaignValidationError carrying the full list. Violation kinds:

    - UnknownDependency: an edge names a task id that does not exist
    - CyclicDependency: self-dependency or a dependency cycle
    - UnsatisfiableRequirement: no allowed partition can ever host the
      task, even when completely idle
    - PolicyViolation: malformed policy or task fields (overlapping
      partitions, unknown nodes or backends, bad hint, token estimate
      on a non-client, a service depending on its own clients, ...)
    """
    violations: list[Violation] = []
    known_backends = set(known_backends)

    by_id: dict[str, TaskDescription] = {}
    for t in tasks:
        if not t.id:
            violations.append(Violation("PolicyViolation", "task id is empty"))
            continue
        if t.id in by_id:
            violations.append(
                Violation("PolicyViolation", "duplicate task id", task_id=t.id)
            )
            continue
        by_id[t.id] = t

    # field invariants
    for t in by_id.values():
        if t.ranks < 1:
            violations.append(
                Violation("PolicyViolation", f"ranks must be >= 1, got {t.ranks}", task_id=t.id)
            )
        if t.cores_per_rank < 1:
            violations.append(
                Violation(
                    "PolicyViolation",
                    f"cores_per_rank must be >= 1, got {t.cores_per_rank}",
                    task_id=t.id,
                )
            )
        if t.gpus_per_rank < 0:
            violations.append(
                Violation(
                    "PolicyViolation",
                    f"gpus_per_rank must be >= 0, got {t.gpus_per_rank}",
                    task_id=t.id,
                )
            )
        if t.estimated_input_tokens < 0:
            violations.append(
                Violation("PolicyViolation", "estimated_input_tokens must be >= 0", task_id=t.id)
            )
        if t.estimated_input_tokens > 0 and t.category is not TaskCategory.SERVICE_CLIENT:
            violations.append(
                Violation(
                    "PolicyViolation",
                    "estimated_input_tokens is only meaningful on ServiceClient tasks",
                    task_id=t.id,
                )
            )
        if t.expected_duration is not None and t.expected_duration < 0:
            violations.append(
                Violation("PolicyViolation", "expected_duration must be >= 0", task_id=t.id)
            )

    # payload shape, just enough to dispatch on later
    _REQUIRED_PAYLOAD = {
        TaskCategory.EXECUTABLE: ("command",),
        TaskCategory.FUNCTION: ("function",),
        TaskCategory.SERVICE: ("name",),
        TaskCategory.SERVICE_CLIENT: ("service",),
        TaskCategory.COUPLED: ("role", "key"),
    }
    for t in by_id.values():
        for key in _REQUIRED_PAYLOAD[t.category]:
            if key not in t.payload:
                violations.append(
                    Violation(
                        "PolicyViolation",
                        f"{t.category.value} payload missing required field '{key}'",
                        task_id=t.id,
                    )
                )

    # dependency edges
    for t in by_id.values():
        for dep in t.dependencies:
            if dep == t.id:
                violations.append(
                    Violation("CyclicDependency", "task depends on itself", task_id=t.id)
                )
            elif dep not in by_id:
                violations.append(
                    Violation(
                        "UnknownDependency",
                        f"dependency '{dep}' names no task",
                        task_id=t.id,
                    )
                )

    # cycles (ignore unknown deps and self-loops, already reported)
    clean: dict[str, TaskDescription] = {}
    for tid, t in by_id.items():
        deps = tuple(d for d in t.dependencies if d in by_id and d != tid)
        clean[tid] = t if deps == t.dependencies else TaskDescription(
            id=t.id,
            category=t.category,
            ranks=t.ranks,
            cores_per_rank=t.cores_per_rank,
            gpus_per_rank=t.gpus_per_rank,
            dependencies=deps,
            estimated_input_tokens=t.estimated_input_tokens,
            partition_hint=t.partition_hint,
            expected_duration=t.expected_duration,
            payload=t.payload,
        )
    try:
        topological_order(clean)
    except ValueError:
        indeg = {tid: 0 for tid in clean}
        dependents = {tid: [] for tid in clean}
        for t in clean.values():
            for dep in t.dependencies:
                indeg[t.id] += 1
                dependents[dep].append(t.id)
        frontier = [tid for tid in clean if indeg[tid] == 0]
        i = 0
        while i < len(frontier):
            for nxt in dependents[frontier[i]]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    frontier.append(nxt)
            i += 1
        stuck = {tid for tid in clean if indeg[tid] > 0}
        cycle = _find_cycle(clean, stuck)
        violations.append(
            Violation(
                "CyclicDependency",
                f"dependency cycle: {' -> '.join(cycle + [cycle[0]])}",
                task_id=cycle[0],
            )
        )

    # a service must not depend on its own clients
    for t in by_id.values():
        if t.category is not TaskCategory.SERVICE:
            continue
        service_name = t.payload.get("name")
        for dep in t.dependencies:
            d = by_id.get(dep)
            if (
                d is not None
                and d.category is TaskCategory.SERVICE_CLIENT
                and d.payload.get("service") == service_name
            ):
                violations.append(
                    Violation(
                        "PolicyViolation",
                        f"service depends on its own client '{dep}'",
                        task_id=t.id,
                    )
                )

    # policy shape
    nodes_by_name: dict[str, NodeSpec] = {}
    for n in resources.nodes:
        if n.name in nodes_by_name:
            violations.append(
                Violation("PolicyViolation", f"duplicate node name '{n.name}'")
            )
        if n.cores < 1 or n.gpus < 0:
            violations.append(
                Violation("PolicyViolation", f"node '{n.name}' has invalid resources")
            )
        nodes_by_name[n.name] = n
    if not resources.nodes:
        violations.append(Violation("PolicyViolation", "resource description has no nodes"))

    seen_parts: set[str] = set()
    claimed: dict[str, str] = {}
    for p in policy.partitions:
        if p.name in seen_parts:
            violations.append(
                Violation("PolicyViolation", "duplicate partition name", partition=p.name)
            )
        seen_parts.add(p.name)
        if p.backend not in known_backends:
            violations.append(
                Violation(
                    "PolicyViolation",
                    f"unknown backend '{p.backend}'",
                    partition=p.name,
                )
            )
        if not p.nodes:
            violations.append(
                Violation("PolicyViolation", "partition has no nodes", partition=p.name)
            )
        for name in p.nodes:
            if name not in nodes_by_name:
                violations.append(
                    Violation(
                        "PolicyViolation",
                        f"partition names unknown node '{name}'",
                        partition=p.name,
                    )
                )
            elif name in claimed:
                violations.append(
                    Violation(
                        "PolicyViolation",
                        f"node '{name}' already claimed by partition '{claimed[name]}'",
                        partition=p.name,
                    )
                )
            else:
                claimed[name] = p.name
    if policy.scheduling not in SCHEDULING_MODES:
        violations.append(
            Violation("PolicyViolation", f"unknown scheduling mode '{policy.scheduling}'")
        )
    if policy.routing not in ROUTING_MODES:
        violations.append(
            Violation("PolicyViolation", f"unknown routing mode '{policy.routing}'")
        )
    if policy.oversubscription_factor < 1.0:
        violations.append(
            Violation("PolicyViolation", "oversubscription_factor must be >= 1.0")
        )
    if any(p.name == DEFAULT_PARTITION for p in policy.partitions) and any(
        n.name not in claimed for n in resources.nodes
    ):
        violations.append(
            Violation(
                "PolicyViolation",
                "explicit partition 'default' clashes with the implicit partition "
                "for unclaimed nodes; claim every node or rename",
                partition=DEFAULT_PARTITION,
            )
        )

    # placement feasibility, only meaningful once policy is shaped sanely
    if not violations:
        parts = effective_partitions(resources, policy)
        part_by_name = {p.name: p for p in parts}
        for t in by_id.values():
            if t.partition_hint is not None and t.partition_hint not in part_by_name:
                violations.append(
                    Violation(
                        "PolicyViolation",
                        f"partition_hint '{t.partition_hint}' names no partition",
                        task_id=t.id,
                    )
                )
                continue
            allowed = [p for p in parts if p.allows(t.category)]
            if not allowed:
                violations.append(
                    Violation(
                        "UnsatisfiableRequirement",
                        f"no partition accepts category {t.category.value}",
                        task_id=t.id,
                    )
                )
                continue
            if not any(partition_fits(p, nodes_by_name, t) for p in allowed):
                names = ", ".join(p.name for p in allowed)
                violations.append(
                    Violation(
                        "UnsatisfiableRequirement",
                        f"task needs {t.ranks} rank(s) x {t.cores_per_rank} core(s)"
                        + (f" x {t.gpus_per_rank} gpu(s)" if t.gpus_per_rank else "")
                        + f" and fits in none of: {names}",
                        task_id=t.id,
                        partition=allowed[0].name if len(allowed) == 1 else None,
                    )
                )

    if violations:
        raise CampaignValidationError(violations)

    return Campaign(
        tasks={t.id: t for t in tasks},
        resources=resources,
        policy=policy,
        seed=seed,
        store=store,
    )

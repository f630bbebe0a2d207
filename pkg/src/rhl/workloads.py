"""Synthetic campaign generators.

Every generator is a pure function of its arguments (seeded RNG only),
returning a validated Campaign, so a generated workload can be
serialized, rerun, and compared byte for byte.
"""

from __future__ import annotations

import math
import random

from .model import (
    Campaign,
    ExecutionPolicy,
    NodeSpec,
    PartitionPolicy,
    ResourceDescription,
    TaskCategory,
    TaskDescription,
    validate_campaign,
)


def gen_noop(
    tasks: int = 1000,
    nodes: int = 1,
    cores_per_node: int = 128,
    backend: str = "local",
    seed: int = 0,
) -> Campaign:
    """N trivial Function tasks, no dependencies, for overhead runs."""
    resources = ResourceDescription(
        nodes=tuple(NodeSpec(f"n{i:04d}", cores_per_node, 0) for i in range(nodes))
    )
    policy = ExecutionPolicy(
        partitions=(
            PartitionPolicy(name="all", nodes=tuple(n.name for n in resources.nodes), backend=backend),
        )
    )
    task_list = [
        TaskDescription(
            id=f"t{i:05d}",
            category=TaskCategory.FUNCTION,
            expected_duration=0.0,
            payload={"function": "noop"},
        )
        for i in range(tasks)
    ]
    return validate_campaign(task_list, resources, policy, seed=seed)


_MPI_CPU_SCALES = ((32, 30), (128, 25), (512, 20), (2048, 15), (7168, 10))
_MPI_GPU_SCALES = ((32, 20), (128, 15), (512, 12), (1024, 8))
_N_SERIAL_CPU = 80
_N_SERIAL_GPU = 60


def gen_hetero(
    seed: int = 7,
    nodes: int = 256,
    cores_per_node: int = 64,
    gpus_per_node: int = 8,
) -> Campaign:
    """295 executables spanning serial and MPI, CPU and GPU, five MPI scales.

    Task type census (11 distinct keys):
      Serial/CPU/1 x80, Serial/GPU/1 x60,
      MPI/CPU at ranks 32/128/512/2048/7168 (30/25/20/15/10),
      MPI/GPU at ranks 32/128/512/1024 (20/15/12/8).
    Roughly 60% of tasks are linked into short pipelines; MPI tasks get
    much longer durations than serial ones.
    """
    rng = random.Random(seed)
    resources = ResourceDescription(
        nodes=tuple(NodeSpec(f"n{i:04d}", cores_per_node, gpus_per_node) for i in range(nodes))
    )
    policy = ExecutionPolicy(
        partitions=(
            PartitionPolicy(name="all", nodes=tuple(n.name for n in resources.nodes), backend="sim"),
        )
    )

    specs: list[tuple[str, int, int, float]] = []  # (kind, ranks, gpus_per_rank, duration)
    for i in range(_N_SERIAL_CPU):
        specs.append(("scpu", 1, 0, rng.uniform(5.0, 30.0)))
    for i in range(_N_SERIAL_GPU):
        specs.append(("sgpu", 1, 1, rng.uniform(5.0, 30.0)))
    for scale, count in _MPI_CPU_SCALES:
        for _ in range(count):
            specs.append((f"mcpu{scale}", scale, 0, rng.uniform(60.0, 600.0)))
    for scale, count in _MPI_GPU_SCALES:
        for _ in range(count):
            specs.append((f"mgpu{scale}", scale, 1, rng.uniform(60.0, 600.0)))

    # interleave types in declaration order so early placements span the
    # whole census, then wire ~60% into pipelines
    rng.shuffle(specs)
    tasks: list[TaskDescription] = []
    for i, (kind, ranks, gpr, duration) in enumerate(specs):
        tasks.append(
            TaskDescription(
                id=f"{kind}-{i:03d}",
                category=TaskCategory.EXECUTABLE,
                ranks=ranks,
                cores_per_rank=1,
                gpus_per_rank=gpr,
                expected_duration=round(duration, 3),
                payload={"command": "/bin/true"},
            )
        )

    ids = [t.id for t in tasks]
    in_pipeline = rng.sample(range(len(ids)), k=int(len(ids) * 0.6))
    in_pipeline.sort()
    deps: dict[str, tuple[str, ...]] = {}
    i = 0
    while i < len(in_pipeline):
        length = rng.randint(2, 5)
        chain = in_pipeline[i : i + length]
        for a, b in zip(chain, chain[1:]):
            deps[ids[b]] = (ids[a],)
        i += length
    tasks = [
        TaskDescription(
            id=t.id,
            category=t.category,
            ranks=t.ranks,
            cores_per_rank=t.cores_per_rank,
            gpus_per_rank=t.gpus_per_rank,
            dependencies=deps.get(t.id, ()),
            expected_duration=t.expected_duration,
            payload=t.payload,
        )
        for t in tasks
    ]
    return validate_campaign(tasks, resources, policy, seed=seed)


def gen_inference(
    services: int = 1,
    clients: int = 4,
    prompts: int = 100,
    dist: str = "uniform",
    seed: int = 0,
    token_rate: float = 50_000.0,
    max_num_seqs: int = 64,
    max_num_batched_tokens: int = 131_072,
    warmup: float = 0.0,
    transport: str = "inproc",
    routing: str = "TokenBalanced",
    generate_tokens: int = 128,
    min_tokens: int | None = None,
    max_tokens: int | None = None,
) -> Campaign:
    """S replicated services behind one name, C clients sharing P prompts.

    dist "uniform" draws prompt sizes uniformly from [min, max] (both
    default 1024, i.e. homogeneous); "loguniform" draws log-uniformly,
    defaulting to the 4,000..50,000 token range.
    """
    rng = random.Random(seed)
    if dist == "uniform":
        lo = 1024 if min_tokens is None else min_tokens
        hi = 1024 if max_tokens is None else max_tokens
        draw = lambda: rng.randint(lo, hi)
    elif dist == "loguniform":
        lo = 4000 if min_tokens is None else min_tokens
        hi = 50_000 if max_tokens is None else max_tokens
        draw = lambda: int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))
    else:
        raise ValueError(f"unknown token distribution {dist!r}")

    svc_nodes = tuple(NodeSpec(f"svc{i:03d}", 1, 1) for i in range(services))
    n_cli_nodes = max(1, math.ceil(clients / 16))
    cli_nodes = tuple(NodeSpec(f"cli{i:03d}", 16, 0) for i in range(n_cli_nodes))
    resources = ResourceDescription(nodes=svc_nodes + cli_nodes)
    policy = ExecutionPolicy(
        partitions=(
            PartitionPolicy(
                name="services",
                nodes=tuple(n.name for n in svc_nodes),
                backend="local",
                categories=(TaskCategory.SERVICE,),
            ),
            PartitionPolicy(
                name="clients",
                nodes=tuple(n.name for n in cli_nodes),
                backend="local",
                categories=(TaskCategory.SERVICE_CLIENT, TaskCategory.FUNCTION),
            ),
        ),
        routing=routing,
    )

    svc_tasks = [
        TaskDescription(
            id=f"svc-{i:03d}",
            category=TaskCategory.SERVICE,
            gpus_per_rank=1,
            partition_hint="services",
            payload={
                "name": "llm",
                "kind": "mock-llm",
                "config": {
                    "token_rate": token_rate,
                    "max_num_seqs": max_num_seqs,
                    "max_num_batched_tokens": max_num_batched_tokens,
                    "warmup_s": warmup,
                    "transport": transport,
                },
            },
        )
        for i in range(services)
    ]
    svc_ids = tuple(t.id for t in svc_tasks)

    all_requests = [
        {"id": f"req-{j:05d}", "prompt_tokens": draw(), "generate_tokens": generate_tokens}
        for j in range(prompts)
    ]
    cli_tasks = []
    for i in range(clients):
        mine = all_requests[i::clients]
        cli_tasks.append(
            TaskDescription(
                id=f"cli-{i:03d}",
                category=TaskCategory.SERVICE_CLIENT,
                dependencies=svc_ids,
                estimated_input_tokens=sum(r["prompt_tokens"] for r in mine),
                partition_hint="clients",
                payload={"service": "llm", "requests": mine},
            )
        )
    return validate_campaign(svc_tasks + cli_tasks, resources, policy, seed=seed)


def gen_coupled(
    pairs: int = 100,
    nodes: int = 1,
    store: str = "memory",
    compute_s: float = 0.0,
    cores_per_node: int = 32,
    seed: int = 0,
) -> Campaign:
    """pairs x nodes producer/consumer couples exchanging f32[4000] tensors."""
    resources = ResourceDescription(
        nodes=tuple(NodeSpec(f"n{i:04d}", cores_per_node, 0) for i in range(nodes))
    )
    policy = ExecutionPolicy(
        partitions=(
            PartitionPolicy(
                name="all",
                nodes=tuple(n.name for n in resources.nodes),
                backend="local",
                categories=(TaskCategory.COUPLED, TaskCategory.FUNCTION),
            ),
        )
    )
    tasks: list[TaskDescription] = []
    for i in range(nodes):
        for j in range(pairs):
            key = f"n{i:04d}/pair{j:04d}"
            prod = f"prod-{i:04d}-{j:04d}"
            tasks.append(
                TaskDescription(
                    id=prod,
                    category=TaskCategory.COUPLED,
                    payload={
                        "role": "producer",
                        "key": key,
                        "dtype": "f32",
                        "shape": [4000],
                        "compute_s": compute_s,
                    },
                )
            )
            tasks.append(
                TaskDescription(
                    id=f"cons-{i:04d}-{j:04d}",
                    category=TaskCategory.COUPLED,
                    dependencies=(prod,),
                    payload={"role": "consumer", "key": key, "compute_s": compute_s},
                )
            )
    return validate_campaign(tasks, resources, policy, seed=seed, store=store)


def gen_agentic(
    agents: int = 50,
    duration: float = 30.0,
    feedback: bool = True,
    seed: int = 0,
    base_interval: float = 0.2,
    task_duration: float = 0.08,
    backlog_threshold: int = 5,
    hpc_cores: int = 24,
    token_rate: float = 50_000.0,
    prompt_tokens: int = 256,
    generate_tokens: int = 64,
) -> Campaign:
    """A agents each running a decide-infer-spawn loop against one service.

    Spawned follow-up tasks land in a deliberately narrow "hpc"
    partition so realized work lags decisions under load; with feedback
    on, an agent doubles its decision interval while more than
    backlog_threshold of its tasks are still pending.
    """
    resources = ResourceDescription(
        nodes=(
            NodeSpec("svc0000", 1, 1),
            NodeSpec("agents0000", agents, 0),
            NodeSpec("hpc0000", hpc_cores, 0),
        )
    )
    policy = ExecutionPolicy(
        partitions=(
            PartitionPolicy(
                name="services", nodes=("svc0000",), backend="local",
                categories=(TaskCategory.SERVICE,),
            ),
            PartitionPolicy(
                name="agents", nodes=("agents0000",), backend="local",
                categories=(TaskCategory.FUNCTION,),
            ),
            PartitionPolicy(
                name="hpc", nodes=("hpc0000",), backend="local",
                categories=(TaskCategory.FUNCTION,),
            ),
        ),
        routing="RoundRobin",
    )
    svc = TaskDescription(
        id="llm-000",
        category=TaskCategory.SERVICE,
        gpus_per_rank=1,
        partition_hint="services",
        payload={
            "name": "llm",
            "kind": "mock-llm",
            "config": {"token_rate": token_rate, "warmup_s": 0.0},
        },
    )
    agent_tasks = [
        TaskDescription(
            id=f"agent-{i:03d}",
            category=TaskCategory.FUNCTION,
            dependencies=("llm-000",),
            partition_hint="agents",
            payload={
                "function": "agent_loop",
                "args": {
                    "agent": f"agent-{i:03d}",
                    "duration": duration,
                    "base_interval": base_interval,
                    "feedback": feedback,
                    "backlog_threshold": backlog_threshold,
                    "service": "llm",
                    "prompt_tokens": prompt_tokens,
                    "generate_tokens": generate_tokens,
                    "task_duration": task_duration,
                    "task_partition": "hpc",
                },
            },
        )
        for i in range(agents)
    ]
    return validate_campaign([svc] + agent_tasks, resources, policy, seed=seed)

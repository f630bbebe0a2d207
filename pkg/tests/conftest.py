import hypothesis
import pytest

from rhl.model import (
    Campaign,
    ExecutionPolicy,
    NodeSpec,
    PartitionPolicy,
    ResourceDescription,
    TaskCategory,
    TaskDescription,
    validate_campaign,
)

# time-based deadlines are meaningless under a loaded CI box; keep runs
# reproducible instead
hypothesis.settings.register_profile(
    "suite", deadline=None, max_examples=60, derandomize=True
)
hypothesis.settings.load_profile("suite")


def make_resources(nodes: int = 1, cores: int = 8, gpus: int = 0) -> ResourceDescription:
    return ResourceDescription(
        nodes=tuple(NodeSpec(f"n{i:04d}", cores, gpus) for i in range(nodes))
    )


def sim_policy(resources: ResourceDescription, **kwargs) -> ExecutionPolicy:
    return ExecutionPolicy(
        partitions=(
            PartitionPolicy(
                name="all", nodes=tuple(n.name for n in resources.nodes), backend="sim"
            ),
        ),
        **kwargs,
    )


def exe(task_id: str, duration: float = 1.0, ranks: int = 1, gpus_per_rank: int = 0,
        deps: tuple = (), **payload_extra) -> TaskDescription:
    payload = {"command": "/bin/true"}
    payload.update(payload_extra)
    return TaskDescription(
        id=task_id,
        category=TaskCategory.EXECUTABLE,
        ranks=ranks,
        gpus_per_rank=gpus_per_rank,
        dependencies=deps,
        expected_duration=duration,
        payload=payload,
    )


def sim_campaign(tasks, nodes: int = 1, cores: int = 8, gpus: int = 0,
                 seed: int = 0, **policy_kwargs) -> Campaign:
    resources = make_resources(nodes, cores, gpus)
    return validate_campaign(
        tasks, resources, sim_policy(resources, **policy_kwargs), seed=seed
    )


@pytest.fixture
def tmp_store_dir(tmp_path):
    d = tmp_path / "store"
    d.mkdir()
    return d

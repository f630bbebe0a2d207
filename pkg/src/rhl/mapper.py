"""Partitioned resource bookkeeping and first-fit placement.

The mapper owns the only mutable view of node resources. Placement is
deterministic: nodes are scanned in declared order, free cores and
GPUs are taken in ascending index order, and ranks pack onto a node
until it cannot host another full rank.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import (
    ExecutionPolicy,
    PartitionPolicy,
    ResourceDescription,
    TaskDescription,
    effective_partitions,
)


class UnknownPlacement(RuntimeError):
    """Release of a placement this mapper does not consider active."""


@dataclass(frozen=True)
class RankBinding:
    rank: int
    node: str
    cores: tuple[int, ...]
    gpus: tuple[int, ...]


@dataclass(frozen=True)
class Placement:
    token: int
    task_id: str
    partition: str
    bindings: tuple[RankBinding, ...]

    @property
    def nodes(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for b in self.bindings:
            seen.setdefault(b.node, None)
        return tuple(seen)

    @property
    def cores(self) -> int:
        return sum(len(b.cores) for b in self.bindings)

    @property
    def gpus(self) -> int:
        return sum(len(b.gpus) for b in self.bindings)


class _NodeState:
    __slots__ = ("name", "cores", "gpus", "free_cores", "free_gpus", "_core_heap", "_gpu_heap")

    def __init__(self, name: str, cores: int, gpus: int):
        self.name = name
        self.cores = cores
        self.gpus = gpus
        self.free_cores = cores
        self.free_gpus = gpus
        self._core_heap = list(range(cores))  # already a valid heap
        self._gpu_heap = list(range(gpus))

    def take_rank(self, cores_per_rank: int, gpus_per_rank: int):
        if self.free_cores < cores_per_rank or self.free_gpus < gpus_per_rank:
            return None
        cores = tuple(heapq.heappop(self._core_heap) for _ in range(cores_per_rank))
        gpus = tuple(heapq.heappop(self._gpu_heap) for _ in range(gpus_per_rank))
        self.free_cores -= cores_per_rank
        self.free_gpus -= gpus_per_rank
        return cores, gpus

    def give_back(self, cores: Iterable[int], gpus: Iterable[int]) -> None:
        for c in cores:
            heapq.heappush(self._core_heap, c)
            self.free_cores += 1
        for g in gpus:
            heapq.heappush(self._gpu_heap, g)
            self.free_gpus += 1


class Partition:
    """Runtime state of one policy partition."""

    def __init__(self, policy: PartitionPolicy, resources: ResourceDescription):
        by_name = {n.name: n for n in resources.nodes}
        self.policy = policy
        self.name = policy.name
        self.backend = policy.backend
        self.nodes = [
            _NodeState(n, by_name[n].cores, by_name[n].gpus) for n in policy.nodes
        ]
        self._by_node = {n.name: n for n in self.nodes}
        self.total_cores = sum(n.cores for n in self.nodes)
        self.total_gpus = sum(n.gpus for n in self.nodes)
        # maintained aggregates; scheduling hot paths must not rescan nodes
        self.free_cores = self.total_cores
        self.free_gpus = self.total_gpus

    def allows(self, category) -> bool:
        return self.policy.allows(category)


def build_partitions(
    resources: ResourceDescription, policy: ExecutionPolicy
) -> list[Partition]:
    return [Partition(p, resources) for p in effective_partitions(resources, policy)]


class ResourceMapper:
    def __init__(self, resources: ResourceDescription, policy: ExecutionPolicy):
        self.partitions = build_partitions(resources, policy)
        self._by_name = {p.name: p for p in self.partitions}
        self._active: dict[int, Placement] = {}
        self._tokens = itertools.count(1)
        self.total_cores = sum(p.total_cores for p in self.partitions)
        self.total_gpus = sum(p.total_gpus for p in self.partitions)
        self.scheduling = policy.scheduling

    def partition(self, name: str) -> Partition:
        return self._by_name[name]

    @property
    def active_placements(self) -> list[Placement]:
        return list(self._active.values())

    def try_place(self, task: TaskDescription, partition: Partition) -> Placement | None:
        """First-fit placement of every rank, or None leaving state untouched."""
        if not partition.allows(task.category):
            return None
        if (
            task.ranks * task.cores_per_rank > partition.free_cores
            or task.ranks * task.gpus_per_rank > partition.free_gpus
        ):
            return None
        bindings: list[RankBinding] = []
        rank = 0
        for node in partition.nodes:
            while rank < task.ranks:
                taken = node.take_rank(task.cores_per_rank, task.gpus_per_rank)
                if taken is None:
                    break
                bindings.append(RankBinding(rank, node.name, taken[0], taken[1]))
                rank += 1
            if rank == task.ranks:
                break
        if rank < task.ranks:
            # rollback partial allocation
            for b in bindings:
                partition._by_node[b.node].give_back(b.cores, b.gpus)
            return None
        partition.free_cores -= task.ranks * task.cores_per_rank
        partition.free_gpus -= task.ranks * task.gpus_per_rank
        placement = Placement(
            token=next(self._tokens),
            task_id=task.id,
            partition=partition.name,
            bindings=tuple(bindings),
        )
        self._active[placement.token] = placement
        return placement

    def release(self, placement: Placement) -> None:
        if placement.token not in self._active:
            raise UnknownPlacement(
                f"placement of task {placement.task_id} is not active (double release?)"
            )
        del self._active[placement.token]
        partition = self._by_name[placement.partition]
        for b in placement.bindings:
            partition._by_node[b.node].give_back(b.cores, b.gpus)
        partition.free_cores += placement.cores
        partition.free_gpus += placement.gpus

    def _candidates(self, task: TaskDescription) -> list[Partition]:
        out: list[Partition] = []
        if task.partition_hint is not None:
            hinted = self._by_name.get(task.partition_hint)
            if hinted is not None and hinted.allows(task.category):
                out.append(hinted)
        for p in self.partitions:
            if p.allows(task.category) and (not out or p is not out[0]):
                out.append(p)
        return out

    def backfill_tick(
        self, ready: Sequence[TaskDescription]
    ) -> list[tuple[TaskDescription, Placement]]:
        """One scheduling pass over the ready queue, in queue order.

        Backfill skips tasks that do not fit right now and keeps
        scanning; FifoExclusive stops at the first task that cannot be
        placed, preserving strict FIFO order.
        """
        placed: list[tuple[TaskDescription, Placement]] = []
        # free resources only shrink within a tick, so a resource shape
        # that failed on a partition once stays infeasible until the
        # next tick; memoizing makes homogeneous queues cheap
        failed: set[tuple[str, int, int, int]] = set()
        for task in ready:
            shape = (task.ranks, task.cores_per_rank, task.gpus_per_rank)
            placement = None
            for partition in self._candidates(task):
                key = (partition.name, *shape)
                if key in failed:
                    continue
                placement = self.try_place(task, partition)
                if placement is not None:
                    break
                failed.add(key)
            if placement is not None:
                placed.append((task, placement))
            elif self.scheduling == "FifoExclusive":
                break
        return placed

"""Event-driven campaign execution.

One Orchestrator drives one campaign: it promotes tasks through the
lifecycle, asks the mapper for placements, launches through backends,
and folds every event back into the single append-only log. All state
mutation happens on the caller's thread; workers only enqueue events.

A dependency is satisfied by the dependency reaching Done, or, for
dependencies on Service tasks, by the service reaching Running (its
endpoint is Ready). When only Service tasks remain non-terminal the
orchestrator stops them and they finish Done.
"""

from __future__ import annotations

import collections
import hashlib
import logging
import queue
import random
import threading
import time
import zlib
from dataclasses import dataclass, field

from .backends.local import LocalBackend
from .backends.sim import SimBackend
from .clock import VirtualClock, WallClock
from .context import RuntimeContext
from .events import (
    ENTITY_REQUEST,
    ENTITY_STORE,
    ENTITY_TASK,
    EV_CANCELED,
    EV_DONE,
    EV_FAILED,
    EV_NEW,
    EV_READY,
    EV_REQUEST_DONE,
    EV_REQUEST_SENT,
    EV_RUNNING,
    EV_SCHEDULED,
    EventLog,
    ExecutionEvent,
)
from .mapper import ResourceMapper
from .model import (
    Campaign,
    IllegalTransition,
    TaskCategory,
    TaskDescription,
    TaskState,
    TERMINAL_STATES,
    effective_partitions,
    legal_transition,
    partition_fits,
)
from .router import Router
from .services import ServiceManager
from .store import open_store

log = logging.getLogger(__name__)

_STATE_EVENTS = {s.value for s in TaskState}

DEFAULT_IDLE_TICK = 0.01
DEFAULT_PROBE_INTERVAL = 0.1


class OrchestratorError(RuntimeError):
    pass


class UnknownTask(OrchestratorError):
    pass


@dataclass
class RunResult:
    run_id: str
    campaign: Campaign
    log: EventLog
    final_states: dict[str, TaskState]
    wall_seconds: float
    rejected_spawns: int = 0
    store_stats: object | None = None
    summary: dict = field(default_factory=dict)

    @property
    def makespan(self) -> float:
        if len(self.log) < 2:
            return 0.0
        ts = [ev.ts for ev in self.log]
        return max(ts) - min(ts)

    def state_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for st in self.final_states.values():
            out[st.value] = out.get(st.value, 0) + 1
        return out


class Orchestrator:
    def __init__(
        self,
        campaign: Campaign,
        *,
        workers: int | None = None,
        store_root=None,
        sim_dispatch_overhead: float = 0.0,
        idle_tick: float = DEFAULT_IDLE_TICK,
        probe_interval: float = DEFAULT_PROBE_INTERVAL,
    ):
        self.campaign = campaign
        self._idle_tick = idle_tick
        parts = effective_partitions(campaign.resources, campaign.policy)
        kinds = {p.backend for p in parts}
        if kinds == {"sim"}:
            self.clock = VirtualClock()
            self._sim = SimBackend(self.clock, dispatch_overhead=sim_dispatch_overhead)
            self._backends = {"sim": self._sim}
            self._local = None
            self.services = None
        elif kinds == {"local"}:
            self.clock = WallClock()
            self._sim = None
            self._local = LocalBackend(self.clock, workers=workers)
            self._backends = {"local": self._local}
            self.services = ServiceManager(
                self.clock,
                emit=self._local.emit,
                probe_interval=probe_interval,
                ready_timeout=campaign.policy.service_ready_timeout,
            )
            self._local.services = self.services
        else:
            raise OrchestratorError(
                f"campaign mixes backend kinds {sorted(kinds)}; "
                "virtual and wall clocks cannot share one run"
            )
        self._partition_backend = {p.name: p.backend for p in parts}
        self._partition_specs = {p.name: p for p in parts}
        self._nodes_by_name = {n.name: n for n in campaign.resources.nodes}
        self.mapper = ResourceMapper(campaign.resources, campaign.policy)
        self._window = max(
            1, int(campaign.policy.oversubscription_factor * max(1, self.mapper.total_cores))
        )

        self.store = None
        if self._local is not None:
            self.store = open_store(
                campaign.store,
                root=store_root,
                emit=self._emit_store_event,
            )

        self.log = EventLog()
        self._tasks: dict[str, TaskDescription] = dict(campaign.tasks)
        self._states: dict[str, TaskState] = {}
        self._deps_remaining: dict[str, int] = {}
        self._dependents: dict[str, list[str]] = {}
        self._satisfied: set[str] = set()
        self._ready: collections.deque[str] = collections.deque()
        self._placements: dict[str, object] = {}
        self._handles: dict[str, object] = {}
        self._spawn_q: "queue.Queue[TaskDescription]" = queue.Queue()
        self._non_terminal = 0
        self._submitted = False
        self._sched_dirty = False
        self._finished = False
        self.rejected_spawns = 0
        self._routers: dict[str, Router] = {}
        self._router_lock = threading.Lock()

        if self._local is not None:
            ctx = RuntimeContext(
                clock=self.clock,
                policy=campaign.policy,
                seed=campaign.seed,
                store=self.store,
                lookup=self.services.lookup,
                infer=self._infer,
                spawn_task=self._spawn_from_worker,
                emit=self._local.emit,
                extras={"backlog": self._backlog_of},
            )
            self._local.ctx = ctx

        self.run_id = self._compute_run_id()

    # ------------------------------------------------------------------ setup
    def _compute_run_id(self) -> str:
        from .campaign_io import campaign_to_json

        digest = hashlib.sha256(campaign_to_json(self.campaign).encode()).hexdigest()
        return digest[:12]

    def _emit_store_event(self, event: str, key: str, nbytes: int, latency: float, task_id) -> None:
        if self._local is None:
            return
        self._local.emit(
            ExecutionEvent(
                self.clock.now(),
                ENTITY_STORE,
                key,
                event,
                {"bytes": nbytes, "latency": latency, "task": task_id, "store": self.store.name},
            )
        )

    def _backlog_of(self, ids) -> int:
        running_or_done = (TaskState.RUNNING, *TERMINAL_STATES)
        n = 0
        for tid in ids:
            st = self._states.get(tid)
            if st is None or st not in running_or_done:
                n += 1
        return n

    # --------------------------------------------------------------- lifecycle
    def _now_event(self, entity: str, id: str, event: str, attrs: dict | None = None) -> ExecutionEvent:
        return ExecutionEvent(self.clock.now(), entity, id, event, attrs or {})

    def ingest_event(self, ev: ExecutionEvent, strict: bool = True) -> bool:
        """Apply one event: validate, append to the log, run side effects.

        Returns False when a non-strict ingest drops a stale event (a
        backend racing a cancellation); strict mode raises instead.
        """
        if ev.entity == ENTITY_TASK and ev.event in _STATE_EVENTS:
            tid = ev.id
            dst = TaskState(ev.event)
            if dst is TaskState.NEW:
                # New is the registering event, not a transition
                if tid not in self._tasks or tid in self._states:
                    if strict:
                        raise UnknownTask(f"duplicate or unregistered New for task {tid!r}")
                    log.warning("dropping duplicate New for task %s", tid)
                    return False
                self._states[tid] = TaskState.NEW
                self.log.append(ev)
                return True
            if tid not in self._states:
                if strict:
                    raise UnknownTask(f"event for unknown task {tid!r}")
                log.warning("dropping event for unknown task %s", tid)
                return False
            src = self._states[tid]
            if not legal_transition(src, dst):
                if strict:
                    raise IllegalTransition(tid, src, dst)
                log.debug("dropping stale %s -> %s for task %s", src.value, dst.value, tid)
                return False
            self._states[tid] = dst
            self.log.append(ev)
            if dst is TaskState.READY:
                self._sched_dirty = True
            elif dst is TaskState.RUNNING:
                if self._tasks[tid].category is TaskCategory.SERVICE:
                    self._mark_satisfied(tid)
            elif dst in TERMINAL_STATES:
                self._sched_dirty = True
                self._non_terminal -= 1
                self._handles.pop(tid, None)
                placement = self._placements.pop(tid, None)
                if placement is not None:
                    self.mapper.release(placement)
                if dst is TaskState.DONE:
                    self._mark_satisfied(tid)
                else:
                    self._cascade_cancel(tid)
            return True
        self.log.append(ev)
        return True

    def _mark_satisfied(self, tid: str) -> None:
        if tid in self._satisfied:
            return
        self._satisfied.add(tid)
        for d in self._dependents.get(tid, ()):
            self._deps_remaining[d] -= 1
            if self._deps_remaining[d] == 0 and self._states[d] is TaskState.NEW:
                self.ingest_event(self._now_event(ENTITY_TASK, d, EV_READY))
                self._ready.append(d)

    def _cascade_cancel(self, root: str) -> None:
        # transitive dependents of a failed or canceled task can never start
        frontier = list(self._dependents.get(root, ()))
        seen = set(frontier)
        while frontier:
            tid = frontier.pop(0)
            st = self._states[tid]
            if st in (TaskState.NEW, TaskState.READY):
                self.ingest_event(self._now_event(ENTITY_TASK, tid, EV_CANCELED))
                for d in self._dependents.get(tid, ()):
                    if d not in seen:
                        seen.add(d)
                        frontier.append(d)
            elif st in (TaskState.SCHEDULED, TaskState.RUNNING):
                # reachable only via service-satisfied dependencies
                self.cancel(tid)

    # ----------------------------------------------------------------- submit
    def submit(self) -> None:
        """Record every task New, then promote the dependency-free to Ready."""
        if self._submitted:
            raise OrchestratorError("campaign already submitted")
        self._submitted = True
        for tid, task in self._tasks.items():
            self._deps_remaining[tid] = len(task.dependencies)
            for dep in task.dependencies:
                self._dependents.setdefault(dep, []).append(tid)
            self._non_terminal += 1
        for tid, task in self._tasks.items():
            self.ingest_event(
                self._now_event(ENTITY_TASK, tid, EV_NEW, {"category": task.category.value})
            )
        for tid in self._tasks:
            if self._deps_remaining[tid] == 0:
                self.ingest_event(self._now_event(ENTITY_TASK, tid, EV_READY))
                self._ready.append(tid)

    # --------------------------------------------------------------- dispatch
    def _dispatch(self, force: bool = False, limit: int | None = None) -> int:
        # nothing became ready and nothing was released since the last
        # pass, so placement cannot succeed; skip the scan
        if not (self._sched_dirty or force):
            return 0
        rd = self._ready
        states = self._states
        while rd and states[rd[0]] is not TaskState.READY:
            rd.popleft()
        if not rd:
            self._sched_dirty = False
            return 0
        window = self._window if limit is None else limit
        candidates: list[TaskDescription] = []
        for tid in rd:
            if states[tid] is TaskState.READY:
                candidates.append(self._tasks[tid])
                if len(candidates) >= window:
                    break
        placed = self.mapper.backfill_tick(candidates)
        for task, placement in placed:
            self.ingest_event(
                self._now_event(
                    ENTITY_TASK,
                    task.id,
                    EV_SCHEDULED,
                    {
                        "partition": placement.partition,
                        "cores": placement.cores,
                        "gpus": placement.gpus,
                    },
                )
            )
            self._placements[task.id] = placement
            backend = self._backends[self._partition_backend[placement.partition]]
            self._handles[task.id] = backend.launch(task, placement)
        while rd and states[rd[0]] is not TaskState.READY:
            rd.popleft()
        # a successful pass frees window slots, so one more pass may
        # reach queue entries the cap hid; keep the flag up until a
        # pass places nothing
        self._sched_dirty = bool(placed)
        return len(placed)

    # ----------------------------------------------------------- dynamic tasks
    def _spawn_from_worker(self, task: TaskDescription) -> bool:
        if self._finished:
            return False
        self._spawn_q.put(task)
        return True

    def _drain_spawns(self) -> int:
        n = 0
        while True:
            try:
                task = self._spawn_q.get_nowait()
            except queue.Empty:
                return n
            if not self._admit_spawned(task):
                self.rejected_spawns += 1
            else:
                n += 1

    def _admit_spawned(self, task: TaskDescription) -> bool:
        if task.id in self._tasks:
            log.warning("rejecting spawned task %s: duplicate id", task.id)
            return False
        unknown = [d for d in task.dependencies if d not in self._tasks]
        if unknown:
            log.warning("rejecting spawned task %s: unknown dependencies %s", task.id, unknown)
            return False
        if task.partition_hint is not None and task.partition_hint not in self._partition_specs:
            log.warning("rejecting spawned task %s: unknown partition hint", task.id)
            return False
        fits = any(
            p.allows(task.category) and partition_fits(p, self._nodes_by_name, task)
            for p in self._partition_specs.values()
        )
        if not fits:
            log.warning("rejecting spawned task %s: fits no partition", task.id)
            return False
        self._tasks[task.id] = task
        remaining = 0
        for dep in task.dependencies:
            self._dependents.setdefault(dep, []).append(task.id)
            if dep not in self._satisfied:
                remaining += 1
        self._deps_remaining[task.id] = remaining
        self._non_terminal += 1
        self.ingest_event(
            self._now_event(ENTITY_TASK, task.id, EV_NEW, {"category": task.category.value, "dynamic": True})
        )
        if remaining == 0:
            self.ingest_event(self._now_event(ENTITY_TASK, task.id, EV_READY))
            self._ready.append(task.id)
        return True

    # ------------------------------------------------------------------ cancel
    def cancel(self, task_id: str) -> None:
        st = self._states.get(task_id)
        if st is None:
            raise UnknownTask(task_id)
        if st in TERMINAL_STATES:
            return
        task = self._tasks[task_id]
        if st in (TaskState.NEW, TaskState.READY):
            self.ingest_event(self._now_event(ENTITY_TASK, task_id, EV_CANCELED))
            return
        # Scheduled or Running: the backend owns the task now
        if task.category is TaskCategory.SERVICE and self.services is not None:
            self.services.stop_service(task_id, outcome=EV_CANCELED)
        elif task.category is TaskCategory.SERVICE and self._sim is not None:
            self._sim.cancel(self._handles[task_id])
        else:
            handle = self._handles.get(task_id)
            if handle is not None:
                self._backends[handle.backend].cancel(handle)
        # dependents that could only start through this task are dead ends
        self._cascade_cancel(task_id)

    # --------------------------------------------------------------------- run
    def _infer(self, name: str, request: dict):
        if self.services is None:
            return None
        eps = self.services.lookup(name)
        if not eps:
            return None
        tokens = int(request["prompt_tokens"]) + int(request["generate_tokens"])
        with self._router_lock:
            router = self._routers.get(name)
            if router is None:
                rng = random.Random(self.campaign.seed ^ zlib.crc32(name.encode()))
                router = Router(self.campaign.policy.routing, rng)
                self._routers[name] = router
            key = router.route_one(tokens, [ep.id for ep in eps])
        ep = next(e for e in eps if e.id == key)
        self._local.emit(
            self._now_event(
                ENTITY_REQUEST,
                str(request["id"]),
                EV_REQUEST_SENT,
                {
                    "service": name,
                    "endpoint": ep.address,
                    "prompt_tokens": int(request["prompt_tokens"]),
                    "generate_tokens": int(request["generate_tokens"]),
                },
            )
        )
        resp = ep.infer(request)
        self._local.emit(
            self._now_event(
                ENTITY_REQUEST,
                str(request["id"]),
                EV_REQUEST_DONE,
                {
                    "endpoint": ep.address,
                    "total_tokens": int(resp["total_tokens"]),
                    "queue_latency": float(resp["queue_latency"]),
                    "service_latency": float(resp["service_latency"]),
                },
            )
        )
        return resp

    def _only_services_remain(self) -> bool:
        if not self._spawn_q.empty():
            return False
        saw_service = False
        for tid, st in self._states.items():
            if st in TERMINAL_STATES:
                continue
            if self._tasks[tid].category is not TaskCategory.SERVICE:
                return False
            if st is not TaskState.RUNNING:
                return False  # still starting; wait for Ready or Failed
            saw_service = True
        return saw_service

    def _stop_services(self) -> None:
        if self.services is not None:
            self.services.stop_all()
            return
        for tid, st in list(self._states.items()):
            if st is TaskState.RUNNING and self._tasks[tid].category is TaskCategory.SERVICE:
                self._sim.complete_service(self._handles[tid])

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        if not self._submitted:
            self.submit()
        while True:
            self._drain_spawns()
            self._dispatch()
            got = False
            for b in self._backends.values():
                for ev in b.poll_events(0.0):
                    self.ingest_event(ev, strict=False)
                    got = True
            if got:
                continue
            if self._non_terminal == 0 and self._spawn_q.empty():
                break
            if self._only_services_remain():
                self._stop_services()
                continue
            if self._sim is not None:
                if self._sim.has_pending():
                    for ev in self._sim.advance_to_next():
                        self.ingest_event(ev, strict=False)
                    continue
                # last resort before declaring a stall: scan the whole
                # queue, past the oversubscription window
                if (
                    self._dispatch(force=True) == 0
                    and self._dispatch(force=True, limit=len(self._ready) or 1) == 0
                    and self._spawn_q.empty()
                ):
                    stuck = [t for t, s in self._states.items() if s not in TERMINAL_STATES]
                    raise OrchestratorError(
                        f"simulation stalled with non-terminal tasks: {stuck[:5]}"
                    )
            else:
                for ev in self._local.poll_events(self._idle_tick):
                    self.ingest_event(ev, strict=False)
        self._finished = True
        wall = time.perf_counter() - t0
        for b in self._backends.values():
            b.shutdown()
        return RunResult(
            run_id=self.run_id,
            campaign=self.campaign,
            log=self.log,
            final_states=dict(self._states),
            wall_seconds=wall,
            rejected_spawns=self.rejected_spawns,
            store_stats=self.store.stats() if self.store is not None else None,
        )


def run_campaign(campaign: Campaign, **kwargs) -> RunResult:
    return Orchestrator(campaign, **kwargs).run()

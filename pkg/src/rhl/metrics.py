"""Metrics derived from the event log and nothing else.

Every function takes an EventLog (or event list) and returns plain
values or TimeSeries. A task "executes at t" when running_ts <= t <
terminal_ts. Windowed rates count events in the half-open window
(t - w, t]. All series share the log's first timestamp as origin, so
different metrics of one run align sample for sample.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field

from .events import (
    ENTITY_REQUEST,
    ENTITY_STORE,
    ENTITY_TASK,
    EV_CANCELED,
    EV_DECISION,
    EV_DONE,
    EV_FAILED,
    EV_GET,
    EV_NEW,
    EV_PUT,
    EV_READY,
    EV_REQUEST_DONE,
    EV_REQUEST_SENT,
    EV_RUNNING,
    EV_SCHEDULED,
    MalformedLog,
)
from .model import TaskState, legal_transition

DEFAULT_WINDOW = 1.0
DEFAULT_RESOLUTION = 0.1

_TERMINAL_EVENTS = (EV_DONE, EV_FAILED, EV_CANCELED)


@dataclass(frozen=True)
class TimeSeries:
    t0: float
    resolution: float
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    def timestamps(self) -> list[float]:
        return [self.t0 + i * self.resolution for i in range(len(self.values))]

    def __len__(self) -> int:
        return len(self.values)

    def peak(self) -> float:
        return max(self.values) if self.values else 0.0

    def mean(self) -> float:
        return sum(self.values) / len(self.values) if self.values else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ts", "value"])
            for t, v in zip(self.timestamps(), self.values):
                w.writerow([repr(round(t, 9)), repr(v)])


@dataclass(frozen=True)
class TaskInterval:
    task_id: str
    scheduled: float | None
    running: float | None
    terminal: float | None
    terminal_event: str | None
    running_attrs: dict = field(default_factory=dict)
    terminal_attrs: dict = field(default_factory=dict)


def _events(log):
    return list(log)


def log_span(log) -> tuple[float, float]:
    evs = _events(log)
    if not evs:
        return (0.0, 0.0)
    ts = [e.ts for e in evs]
    return (min(ts), max(ts))


def makespan(log) -> float:
    a, b = log_span(log)
    return b - a


def _grid(t0: float, t1: float, resolution: float) -> list[float]:
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    n = max(0, math.ceil((t1 - t0) / resolution - 1e-12)) + 1
    return [t0 + i * resolution for i in range(n)]


def task_intervals(log) -> dict[str, TaskInterval]:
    sched: dict[str, float] = {}
    run: dict[str, float] = {}
    run_attrs: dict[str, dict] = {}
    term: dict[str, tuple[float, str, dict]] = {}
    order: list[str] = []
    seen: set[str] = set()
    for ev in _events(log):
        if ev.entity != ENTITY_TASK:
            continue
        if ev.id not in seen:
            seen.add(ev.id)
            order.append(ev.id)
        if ev.event == EV_SCHEDULED:
            sched[ev.id] = ev.ts
        elif ev.event == EV_RUNNING:
            run[ev.id] = ev.ts
            run_attrs[ev.id] = ev.attrs
        elif ev.event in _TERMINAL_EVENTS:
            term[ev.id] = (ev.ts, ev.event, ev.attrs)
    out: dict[str, TaskInterval] = {}
    for tid in order:
        t = term.get(tid)
        out[tid] = TaskInterval(
            task_id=tid,
            scheduled=sched.get(tid),
            running=run.get(tid),
            terminal=t[0] if t else None,
            terminal_event=t[1] if t else None,
            running_attrs=run_attrs.get(tid, {}),
            terminal_attrs=t[2] if t else {},
        )
    return out


def task_categories(log) -> dict[str, str]:
    out: dict[str, str] = {}
    for ev in _events(log):
        if ev.entity == ENTITY_TASK and ev.event == EV_NEW:
            cat = ev.attrs.get("category")
            if cat is not None:
                out[ev.id] = cat
    return out


def _execution_edges(log, weight_attr: str | None):
    """(ts, delta, key) per Running/terminal pair; weight from Running attrs."""
    intervals = task_intervals(log)
    edges: list[tuple[float, int, str, float]] = []
    for iv in intervals.values():
        if iv.running is None:
            continue
        key = iv.running_attrs.get("task_type_key")
        if key is None:
            raise MalformedLog(f"Running event of task {iv.task_id} lacks task_type_key")
        weight = 1.0
        if weight_attr is not None:
            w = iv.running_attrs.get(weight_attr)
            if w is None:
                raise MalformedLog(f"Running event of task {iv.task_id} lacks {weight_attr}")
            weight = float(w)
        end = iv.terminal if iv.terminal is not None else math.inf
        edges.append((iv.running, +1, key, weight))
        if end is not math.inf:
            edges.append((end, -1, key, weight))
    edges.sort(key=lambda e: e[0])
    return edges


def heterogeneity_width(
    log, resolution: float = DEFAULT_RESOLUTION, span: tuple[float, float] | None = None
) -> TimeSeries:
    """Distinct task types executing concurrently, sampled on a fixed grid."""
    t0, t1 = span if span is not None else log_span(log)
    edges = _execution_edges(log, None)
    grid = _grid(t0, t1, resolution)
    counts: dict[str, int] = {}
    distinct = 0
    values: list[float] = []
    i = 0
    for t in grid:
        while i < len(edges) and edges[i][0] <= t:
            _, delta, key, _ = edges[i]
            prev = counts.get(key, 0)
            cur = prev + delta
            counts[key] = cur
            if prev == 0 and cur > 0:
                distinct += 1
            elif prev > 0 and cur == 0:
                distinct -= 1
            i += 1
        values.append(float(distinct))
    return TimeSeries(t0, resolution, tuple(values))


def concurrent_type_census(log, at: float) -> dict[str, int]:
    """Type key -> number of tasks executing at one instant."""
    out: dict[str, int] = {}
    for iv in task_intervals(log).values():
        if iv.running is None:
            continue
        end = iv.terminal if iv.terminal is not None else math.inf
        if iv.running <= at < end:
            key = iv.running_attrs.get("task_type_key")
            if key is None:
                raise MalformedLog(f"Running event of task {iv.task_id} lacks task_type_key")
            out[key] = out.get(key, 0) + 1
    return out


def windowed_rate(
    log,
    entity: str,
    event: str,
    window: float = DEFAULT_WINDOW,
    resolution: float = DEFAULT_RESOLUTION,
    span: tuple[float, float] | None = None,
) -> TimeSeries:
    """Events per second in the trailing window (t - w, t]."""
    if window <= 0:
        raise ValueError("window must be positive")
    t0, t1 = span if span is not None else log_span(log)
    ts = sorted(ev.ts for ev in _events(log) if ev.entity == entity and ev.event == event)
    values = []
    for t in _grid(t0, t1, resolution):
        n = bisect_right(ts, t) - bisect_right(ts, t - window)
        values.append(n / window)
    return TimeSeries(t0, resolution, tuple(values))


def decision_rate(log, window: float = DEFAULT_WINDOW, resolution: float = DEFAULT_RESOLUTION,
                  span=None) -> TimeSeries:
    return windowed_rate(log, ENTITY_REQUEST, EV_DECISION, window, resolution, span)


def action_realization_rate(log, window: float = DEFAULT_WINDOW,
                            resolution: float = DEFAULT_RESOLUTION, span=None) -> TimeSeries:
    """Rate of tasks entering Running."""
    return windowed_rate(log, ENTITY_TASK, EV_RUNNING, window, resolution, span)


def utilization(
    log,
    total_cores: int,
    total_gpus: int = 0,
    resolution: float = DEFAULT_RESOLUTION,
    span: tuple[float, float] | None = None,
) -> dict[str, TimeSeries]:
    """Fraction of cores (and GPUs) bound to executing tasks over time."""
    t0, t1 = span if span is not None else log_span(log)
    grid = _grid(t0, t1, resolution)
    out: dict[str, TimeSeries] = {}
    for name, attr, total in (("core_util", "cores", total_cores), ("gpu_util", "gpus", total_gpus)):
        edges = _execution_edges(log, attr)
        busy = 0.0
        values = []
        i = 0
        for t in grid:
            while i < len(edges) and edges[i][0] <= t:
                _, delta, _, weight = edges[i]
                busy += delta * weight
                i += 1
            values.append(busy / total if total > 0 else 0.0)
        out[name] = TimeSeries(t0, resolution, tuple(values))
    return out


def throughput(log) -> dict:
    evs = _events(log)
    done = sum(1 for e in evs if e.entity == ENTITY_TASK and e.event == EV_DONE)
    span = makespan(log)
    tokens = sum(
        int(e.attrs.get("total_tokens", 0))
        for e in evs
        if e.entity == ENTITY_REQUEST and e.event == EV_REQUEST_DONE
    )
    sent = [e.ts for e in evs if e.entity == ENTITY_REQUEST and e.event == EV_REQUEST_SENT]
    finished = [e.ts for e in evs if e.entity == ENTITY_REQUEST and e.event == EV_REQUEST_DONE]
    token_span = (max(finished) - min(sent)) if sent and finished else 0.0
    return {
        "tasks_done": done,
        "makespan": span,
        "tasks_per_s": (done / span) if span > 0 else 0.0,
        "tokens_total": tokens,
        "request_span": token_span,
        "tokens_per_s": (tokens / token_span) if token_span > 0 else 0.0,
    }


def runtime_decomposition(log) -> dict:
    """Split scheduled-to-terminal time into computation, data transfer,
    orchestration, and runtime overhead.

    Only tasks that traversed Scheduled -> Running -> terminal count;
    Service tasks are infrastructure and are excluded. Data transfer is
    the store latency attributed to those tasks; request waiting time
    of clients is deliberately left in runtime_overhead. The four
    components sum to total exactly, overhead being the remainder.
    """
    cats = task_categories(log)
    intervals = task_intervals(log)
    total = 0.0
    orchestration = 0.0
    computation = 0.0
    counted: set[str] = set()
    for iv in intervals.values():
        if cats.get(iv.task_id) == "Service":
            continue
        if iv.scheduled is None or iv.running is None or iv.terminal is None:
            continue
        counted.add(iv.task_id)
        total += iv.terminal - iv.scheduled
        orchestration += iv.running - iv.scheduled
        computation += float(iv.terminal_attrs.get("compute_s", 0.0))
    data_transfer = 0.0
    for ev in _events(log):
        if ev.entity == ENTITY_STORE and ev.event in (EV_PUT, EV_GET):
            if ev.attrs.get("task") in counted:
                data_transfer += float(ev.attrs.get("latency", 0.0))
    overhead = total - computation - data_transfer - orchestration
    # re-evaluate total in component order so the identity
    # computation + data_transfer + orchestration + overhead == total
    # holds bit-exactly, not just within an ulp
    total = computation + data_transfer + orchestration + overhead
    return {
        "tasks": len(counted),
        "total": total,
        "computation": computation,
        "data_transfer": data_transfer,
        "orchestration": orchestration,
        "runtime_overhead": overhead,
    }


@dataclass(frozen=True)
class CouplingLagReport:
    lags: dict[str, float]
    unmatched: tuple[str, ...]
    max_lag: float
    mean_lag: float

    @property
    def count(self) -> int:
        return len(self.lags)


def coupling_lag(log) -> CouplingLagReport:
    """Delay from each Decision to its spawned task entering Running."""
    decisions: dict[str, float] = {}
    running: dict[str, float] = {}
    for ev in _events(log):
        if ev.entity == ENTITY_REQUEST and ev.event == EV_DECISION:
            child = ev.attrs.get("spawned_task")
            if child is not None:
                decisions[child] = ev.ts
        elif ev.entity == ENTITY_TASK and ev.event == EV_RUNNING:
            running[ev.id] = ev.ts
    lags = {c: running[c] - t for c, t in decisions.items() if c in running}
    unmatched = tuple(sorted(c for c in decisions if c not in running))
    return CouplingLagReport(
        lags=lags,
        unmatched=unmatched,
        max_lag=max(lags.values()) if lags else 0.0,
        mean_lag=(sum(lags.values()) / len(lags)) if lags else 0.0,
    )


def replay_states(log, strict: bool = True) -> dict[str, TaskState]:
    """Re-run the lifecycle state machine over a log.

    Raises MalformedLog on the first illegal transition when strict.
    """
    states: dict[str, TaskState] = {}
    last_ts: dict[tuple[str, str], float] = {}
    for ev in _events(log):
        key = (ev.entity, ev.id)
        if key in last_ts and ev.ts < last_ts[key]:
            if strict:
                raise MalformedLog(
                    f"timestamps go backwards for {ev.entity} {ev.id}: {ev.ts} < {last_ts[key]}"
                )
        last_ts[key] = ev.ts
        if ev.entity != ENTITY_TASK:
            continue
        try:
            dst = TaskState(ev.event)
        except ValueError:
            continue  # not a lifecycle event
        src = states.get(ev.id)
        if src is None:
            if dst is not TaskState.NEW:
                if strict:
                    raise MalformedLog(f"task {ev.id} begins in state {dst.value}, not New")
        elif not legal_transition(src, dst):
            if strict:
                raise MalformedLog(
                    f"task {ev.id}: illegal transition {src.value} -> {dst.value} at ts {ev.ts}"
                )
        states[ev.id] = dst
    return states

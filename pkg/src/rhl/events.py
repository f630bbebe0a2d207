"""Execution events and the append-only event log.

Every observable thing the runtime does is recorded as an
ExecutionEvent; the log is the single source for all metrics, reports
and replay. One JSON object per line, keys exactly
(ts, entity, id, event, attrs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

ENTITY_TASK = "Task"
ENTITY_SERVICE = "Service"
ENTITY_REQUEST = "Request"
ENTITY_STORE = "Store"

ENTITIES = frozenset({ENTITY_TASK, ENTITY_SERVICE, ENTITY_REQUEST, ENTITY_STORE})

# Task lifecycle events share names with TaskState on purpose: the state
# machine is replayable from the log.
EV_NEW = "New"
EV_READY = "Ready"
EV_SCHEDULED = "Scheduled"
EV_RUNNING = "Running"
EV_DONE = "Done"
EV_FAILED = "Failed"
EV_CANCELED = "Canceled"

EV_SERVICE_STARTING = "ServiceStarting"
EV_SERVICE_READY = "ServiceReady"
EV_SERVICE_STOPPED = "ServiceStopped"

EV_REQUEST_SENT = "RequestSent"
EV_REQUEST_DONE = "RequestDone"
EV_DECISION = "Decision"

EV_PUT = "Put"
EV_GET = "Get"

_JSON_KEYS = ("ts", "entity", "id", "event", "attrs")


class MalformedLog(ValueError):
    """An event line or stream violates the log contract."""


@dataclass(frozen=True)
class ExecutionEvent:
    ts: float
    entity: str
    id: str
    event: str
    attrs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        # sort_keys keeps serialized attrs byte-stable across runs
        return json.dumps(
            {
                "ts": self.ts,
                "entity": self.entity,
                "id": self.id,
                "event": self.event,
                "attrs": self.attrs,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(line: str) -> "ExecutionEvent":
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLog(f"unparseable event line: {exc}") from exc
        if not isinstance(raw, dict):
            raise MalformedLog(f"event line is not an object: {line!r}")
        missing = [k for k in _JSON_KEYS if k not in raw]
        if missing:
            raise MalformedLog(f"event line missing keys {missing}: {line!r}")
        extra = [k for k in raw if k not in _JSON_KEYS]
        if extra:
            raise MalformedLog(f"event line has unknown keys {extra}: {line!r}")
        ts = raw["ts"]
        if not isinstance(ts, (int, float)) or isinstance(ts, bool):
            raise MalformedLog(f"event ts is not a number: {line!r}")
        if not isinstance(raw["attrs"], dict):
            raise MalformedLog(f"event attrs is not an object: {line!r}")
        for key in ("entity", "id", "event"):
            if not isinstance(raw[key], str):
                raise MalformedLog(f"event {key} is not a string: {line!r}")
        return ExecutionEvent(
            ts=float(ts),
            entity=raw["entity"],
            id=raw["id"],
            event=raw["event"],
            attrs=raw["attrs"],
        )


class EventLog:
    """In-memory append-only event sequence with JSONL persistence."""

    def __init__(self, events: Iterable[ExecutionEvent] = ()) -> None:
        self._events: list[ExecutionEvent] = list(events)

    def append(self, event: ExecutionEvent) -> None:
        self._events.append(event)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[ExecutionEvent]:
        return iter(self._events)

    def __getitem__(self, idx):
        return self._events[idx]

    def events(self) -> list[ExecutionEvent]:
        return list(self._events)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ev in self._events:
                fh.write(ev.to_json())
                fh.write("\n")

    @staticmethod
    def read_jsonl(path) -> "EventLog":
        log = EventLog()
        with open(path, "r", encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    log.append(ExecutionEvent.from_json(line))
                except MalformedLog as exc:
                    raise MalformedLog(f"{path}:{n}: {exc}") from exc
        return log

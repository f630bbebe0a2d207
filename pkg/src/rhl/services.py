"""Service lifecycle: mock inference engine, endpoints, registry, manager.

The mock engine models continuous batching as a fluid: all admitted
requests share token_rate equally, so a request of T total tokens
alone finishes in T/token_rate seconds and k equal concurrent requests
finish together in k times that. Admission is bounded by max_num_seqs
(count) and max_num_batched_tokens (summed total tokens of the active
set; an oversized request is admitted only when the engine is idle).

Wire format for the socket transport: a 4-byte big-endian length
prefix, then UTF-8 JSON. Requests carry (id, prompt_tokens,
generate_tokens); responses carry (id, total_tokens, queue_latency,
service_latency). {"ping": true} answers {"ready": true|false}.
"""

from __future__ import annotations

import json
import logging
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from .events import (
    ENTITY_SERVICE,
    ENTITY_TASK,
    EV_CANCELED,
    EV_DONE,
    EV_FAILED,
    EV_RUNNING,
    EV_SERVICE_READY,
    EV_SERVICE_STARTING,
    EV_SERVICE_STOPPED,
    ExecutionEvent,
)
from .model import TaskCategory, task_type_key

log = logging.getLogger(__name__)

_EPS = 1e-9
_LEN = struct.Struct(">I")

DEFAULT_QUEUE_LIMIT = 10_000


class ServiceError(RuntimeError):
    pass


class QueueOverflow(ServiceError):
    """Submit would exceed the service's bounded request queue."""


class ServiceStoppedError(ServiceError):
    """The request cannot be served because the service stopped."""


class ServiceStartTimeout(ServiceError):
    """The service never answered its readiness probe in time."""


class _Req:
    __slots__ = ("id", "total", "enq_t", "admit_t", "remaining", "callback")

    def __init__(self, rid: str, total: int, enq_t: float, callback):
        self.id = rid
        self.total = total
        self.enq_t = enq_t
        self.admit_t = 0.0
        self.remaining = float(total)
        self.callback = callback


class MockInferenceService:
    """Fluid-model stand-in for an LLM inference engine."""

    def __init__(
        self,
        token_rate: float = 50_000.0,
        max_num_seqs: int = 64,
        max_num_batched_tokens: int = 131_072,
        warmup_s: float = 0.0,
        queue_limit: int = DEFAULT_QUEUE_LIMIT,
    ):
        if token_rate <= 0:
            raise ValueError("token_rate must be positive")
        if max_num_seqs < 1:
            raise ValueError("max_num_seqs must be >= 1")
        self.token_rate = float(token_rate)
        self.max_num_seqs = int(max_num_seqs)
        self.max_num_batched_tokens = int(max_num_batched_tokens)
        self.warmup_s = float(warmup_s)
        self.queue_limit = int(queue_limit)

        self._cond = threading.Condition()
        self._queue: deque[_Req] = deque()
        self._active: dict[str, _Req] = {}
        self._active_tokens = 0
        self._last_advance = 0.0
        self._running = False
        self._stopping = False
        self._started_at: float | None = None
        self._thread: threading.Thread | None = None

        self.tokens_processed = 0
        self.responses = 0
        self.rejected = 0
        self.peak_active = 0

    # lifecycle ----------------------------------------------------------
    def start(self) -> None:
        with self._cond:
            if self._running:
                return
            self._running = True
            self._stopping = False
            self._started_at = time.monotonic()
            self._last_advance = self._started_at
        self._thread = threading.Thread(target=self._loop, daemon=True, name="rhl-mock-llm")
        self._thread.start()

    def ping(self) -> bool:
        with self._cond:
            if not self._running or self._stopping or self._started_at is None:
                return False
            return time.monotonic() - self._started_at >= self.warmup_s

    def stop(self) -> None:
        """Drain admitted requests, fail queued ones, stop the engine."""
        with self._cond:
            if not self._running:
                return
            self._stopping = True
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    # submission -----------------------------------------------------------
    def submit(self, request: dict, callback) -> None:
        rid = str(request["id"])
        total = int(request["prompt_tokens"]) + int(request["generate_tokens"])
        if total < 1:
            raise ValueError(f"request {rid} has no tokens")
        with self._cond:
            if not self._running or self._stopping:
                raise ServiceStoppedError(f"request {rid}: service is not accepting requests")
            if len(self._queue) >= self.queue_limit:
                self.rejected += 1
                raise QueueOverflow(
                    f"request {rid}: queue limit {self.queue_limit} reached"
                )
            self._queue.append(_Req(rid, total, time.monotonic(), callback))
            self._cond.notify_all()

    def infer(self, request: dict, timeout: float | None = None) -> dict:
        done = threading.Event()
        box: dict = {}

        def cb(resp: dict) -> None:
            box.update(resp)
            done.set()

        self.submit(request, cb)
        if not done.wait(timeout):
            raise ServiceError(f"request {request['id']} timed out client-side")
        if "error" in box:
            raise ServiceStoppedError(box["error"])
        return box

    def stats(self) -> dict:
        with self._cond:
            return {
                "tokens_processed": self.tokens_processed,
                "responses": self.responses,
                "rejected": self.rejected,
                "peak_active": self.peak_active,
                "queued": len(self._queue),
                "active": len(self._active),
            }

    # engine -----------------------------------------------------------------
    def _advance_to(self, now: float) -> None:
        elapsed = now - self._last_advance
        self._last_advance = now
        if elapsed <= 0 or not self._active:
            return
        share = self.token_rate / len(self._active)
        burn = share * elapsed
        for r in self._active.values():
            r.remaining -= burn

    def _pop_finished(self, now: float) -> list[tuple[_Req, dict]]:
        fired = []
        for rid in [r.id for r in self._active.values() if r.remaining <= _EPS]:
            r = self._active.pop(rid)
            self._active_tokens -= r.total
            self.tokens_processed += r.total
            self.responses += 1
            fired.append(
                (
                    r,
                    {
                        "id": r.id,
                        "total_tokens": r.total,
                        "queue_latency": r.admit_t - r.enq_t,
                        "service_latency": now - r.admit_t,
                    },
                )
            )
        return fired

    def _admit(self, now: float) -> None:
        while self._queue and len(self._active) < self.max_num_seqs:
            head = self._queue[0]
            over = self._active_tokens + head.total > self.max_num_batched_tokens
            if over and self._active:
                break  # oversized only rides alone
            self._advance_to(now)  # close the share interval before the set changes
            self._queue.popleft()
            head.admit_t = now
            self._active[head.id] = head
            self._active_tokens += head.total
        self.peak_active = max(self.peak_active, len(self._active))

    def _wake_in(self) -> float | None:
        if not self._active:
            return None  # sleep until submit or stop notifies
        share = self.token_rate / len(self._active)
        return max(min(r.remaining for r in self._active.values()), 0.0) / share

    def _loop(self) -> None:
        while True:
            to_fire: list[tuple[_Req, dict]] = []
            exit_after = False
            with self._cond:
                now = time.monotonic()
                self._advance_to(now)
                to_fire.extend(self._pop_finished(now))
                if self._stopping:
                    while self._queue:
                        r = self._queue.popleft()
                        self.rejected += 1
                        to_fire.append((r, {"id": r.id, "error": "service stopped"}))
                self._admit(now)
                if self._stopping and not self._active and not self._queue:
                    self._running = False
                    exit_after = True
                elif not to_fire:
                    self._cond.wait(self._wake_in())
            for _, resp in to_fire:
                try:
                    _.callback(resp)
                except Exception:
                    log.exception("response callback failed for request %s", resp.get("id"))
            if exit_after:
                return


SERVICE_KINDS = {"mock-llm": MockInferenceService}


# socket transport -----------------------------------------------------------

def send_msg(sock: socket.socket, obj: dict, lock: threading.Lock | None = None) -> None:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    frame = _LEN.pack(len(payload)) + payload
    if lock is not None:
        with lock:
            sock.sendall(frame)
    else:
        sock.sendall(frame)


def recv_msg(sock: socket.socket) -> dict | None:
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    body = _recv_exact(sock, n)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class SocketTransport:
    """Serves one MockInferenceService over a localhost socket."""

    def __init__(self, service: MockInferenceService, host: str = "127.0.0.1"):
        self.service = service
        self._listener = socket.create_server((host, 0))
        self.address = f"{host}:{self._listener.getsockname()[1]}"
        self._conns: list[socket.socket] = []
        self._closing = False
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name="rhl-svc-accept"
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return  # listener closed
            self._conns.append(conn)
            threading.Thread(
                target=self._serve_conn, args=(conn,), daemon=True, name="rhl-svc-conn"
            ).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        wlock = threading.Lock()
        try:
            while True:
                msg = recv_msg(conn)
                if msg is None:
                    return
                if msg.get("ping"):
                    send_msg(conn, {"ready": self.service.ping()}, wlock)
                    continue
                try:
                    self.service.submit(msg, lambda resp: self._reply(conn, wlock, resp))
                except (ServiceError, KeyError, TypeError, ValueError) as exc:
                    send_msg(conn, {"id": msg.get("id"), "error": str(exc)}, wlock)
        except OSError:
            return
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _reply(self, conn: socket.socket, wlock: threading.Lock, resp: dict) -> None:
        try:
            send_msg(conn, resp, wlock)
        except OSError:
            pass  # client went away; response is dropped

    def close(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
        for c in self._conns:
            try:
                c.close()
            except OSError:
                pass


def socket_call(address: str, obj: dict, timeout: float = 30.0) -> dict:
    host, port = address.rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=timeout) as sock:
        send_msg(sock, obj)
        resp = recv_msg(sock)
    if resp is None:
        raise ServiceError(f"connection to {address} closed mid-call")
    return resp


# endpoints and registry -------------------------------------------------------

@dataclass
class ServiceEndpoint:
    id: str          # the service task id
    name: str        # discovery name, shared by replicas
    address: str
    transport: str   # "inproc" | "socket"
    capacity: dict = field(default_factory=dict)
    service: MockInferenceService | None = None

    def ping(self) -> bool:
        if self.transport == "inproc":
            return self.service.ping() if self.service is not None else False
        try:
            return bool(socket_call(self.address, {"ping": True}, timeout=2.0).get("ready"))
        except (OSError, ServiceError):
            return False

    def infer(self, request: dict, timeout: float | None = None) -> dict:
        if self.transport == "inproc":
            if self.service is None:
                raise ServiceStoppedError(f"endpoint {self.id} has no engine")
            return self.service.infer(request, timeout)
        resp = socket_call(self.address, request, timeout or 300.0)
        if "error" in resp:
            raise ServiceStoppedError(resp["error"])
        return resp


class ServiceRegistry:
    """Name to ready-endpoint mapping, in registration order."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_name: dict[str, list[ServiceEndpoint]] = {}

    def register(self, ep: ServiceEndpoint) -> None:
        with self._lock:
            self._by_name.setdefault(ep.name, []).append(ep)

    def deregister(self, ep_id: str) -> bool:
        with self._lock:
            for eps in self._by_name.values():
                for i, ep in enumerate(eps):
                    if ep.id == ep_id:
                        del eps[i]
                        return True
        return False

    def lookup(self, name: str) -> list[ServiceEndpoint]:
        with self._lock:
            return list(self._by_name.get(name, []))

    def all(self) -> list[ServiceEndpoint]:
        with self._lock:
            return [ep for eps in self._by_name.values() for ep in eps]


# manager ----------------------------------------------------------------------

class _ServiceRecord:
    __slots__ = (
        "task", "placement", "service", "transport", "endpoint", "state", "thread", "stopped",
    )

    def __init__(self, task, placement):
        self.task = task
        self.placement = placement
        self.service: MockInferenceService | None = None
        self.transport: SocketTransport | None = None
        self.endpoint: ServiceEndpoint | None = None
        self.state = "Starting"
        self.thread: threading.Thread | None = None
        self.stopped = False


class ServiceManager:
    """Starts, probes, registers, and stops service tasks."""

    def __init__(self, clock, emit, probe_interval: float = 0.1, ready_timeout: float = 30.0):
        self.clock = clock
        self.emit = emit  # Callable[[ExecutionEvent], None]
        self.probe_interval = probe_interval
        self.ready_timeout = ready_timeout
        self.registry = ServiceRegistry()
        self._records: dict[str, _ServiceRecord] = {}
        self._lock = threading.Lock()

    def _event(self, entity: str, id: str, event: str, attrs: dict) -> None:
        self.emit(ExecutionEvent(self.clock.now(), entity, id, event, attrs))

    def start_async(self, task, placement) -> None:
        if task.category is not TaskCategory.SERVICE:
            raise ServiceError(f"task {task.id} is not a Service")
        record = _ServiceRecord(task, placement)
        with self._lock:
            if task.id in self._records:
                raise ServiceError(f"service task {task.id} already started")
            self._records[task.id] = record
        name = task.payload["name"]
        self._event(ENTITY_SERVICE, task.id, EV_SERVICE_STARTING, {"name": name})
        record.thread = threading.Thread(
            target=self._bringup, args=(record,), daemon=True, name=f"rhl-svc-{task.id}"
        )
        record.thread.start()

    def start_service(self, task, placement, timeout: float | None = None) -> ServiceEndpoint:
        """Blocking start; returns the ready endpoint or raises."""
        self.start_async(task, placement)
        record = self._records[task.id]
        record.thread.join(timeout=(timeout or self.ready_timeout) + 5.0)
        if record.state == "Ready":
            return record.endpoint
        raise ServiceStartTimeout(f"service task {task.id} did not become ready")

    def _bringup(self, record: _ServiceRecord) -> None:
        task = record.task
        payload = task.payload
        name = payload["name"]
        kind = payload.get("kind", "mock-llm")
        cls = SERVICE_KINDS.get(kind)
        if cls is None:
            record.state = "Failed"
            self._event(ENTITY_TASK, task.id, EV_FAILED, {"error": f"unknown service kind {kind!r}"})
            return
        config = dict(payload.get("config", {}))
        transport_kind = config.pop("transport", "inproc")
        try:
            service = cls(**config)
        except (TypeError, ValueError) as exc:
            record.state = "Failed"
            self._event(ENTITY_TASK, task.id, EV_FAILED, {"error": f"bad service config: {exc}"})
            return
        record.service = service
        service.start()

        if transport_kind == "socket":
            record.transport = SocketTransport(service)
            address = record.transport.address
        else:
            address = f"inproc://{task.id}"
        endpoint = ServiceEndpoint(
            id=task.id,
            name=name,
            address=address,
            transport=transport_kind,
            capacity={
                "max_num_seqs": service.max_num_seqs,
                "max_num_batched_tokens": service.max_num_batched_tokens,
                "token_rate": service.token_rate,
            },
            service=service if transport_kind == "inproc" else None,
        )
        record.endpoint = endpoint

        deadline = time.monotonic() + self.ready_timeout
        probes = 0
        while True:
            probes += 1
            if endpoint.ping():
                break
            if time.monotonic() >= deadline:
                record.state = "Failed"
                service.stop()
                if record.transport is not None:
                    record.transport.close()
                self._event(
                    ENTITY_TASK, task.id, EV_FAILED, {"error": "ServiceStartTimeout"}
                )
                return
            time.sleep(self.probe_interval)

        record.state = "Ready"
        self.registry.register(endpoint)
        self._event(
            ENTITY_SERVICE,
            task.id,
            EV_SERVICE_READY,
            {"name": name, "address": address, "probes": probes},
        )
        self._event(
            ENTITY_TASK,
            task.id,
            EV_RUNNING,
            {
                "task_type_key": task_type_key(task).label,
                "cores": record.placement.cores if record.placement is not None else 0,
                "gpus": record.placement.gpus if record.placement is not None else 0,
                "partition": record.placement.partition if record.placement is not None else "",
            },
        )

    def lookup(self, name: str) -> list[ServiceEndpoint]:
        return self.registry.lookup(name)

    def stop_service(self, task_id: str, outcome: str = EV_DONE) -> None:
        """Deregister first so no new requests land, then drain and stop."""
        with self._lock:
            record = self._records.get(task_id)
        if record is None:
            return
        if record.thread is not None:
            record.thread.join()  # let bringup reach Ready or Failed first
        with self._lock:
            if record.stopped:
                return
            record.stopped = True
            failed = record.state == "Failed"
            if not failed:
                record.state = "Stopped"
        if failed or record.endpoint is None or record.service is None:
            return  # bringup failed; Failed event already emitted
        self.registry.deregister(task_id)
        record.service.stop()
        if record.transport is not None:
            record.transport.close()
        stats = record.service.stats()
        self._event(
            ENTITY_SERVICE,
            task_id,
            EV_SERVICE_STOPPED,
            {
                "name": record.task.payload["name"],
                "tokens_processed": stats["tokens_processed"],
                "responses": stats["responses"],
            },
        )
        self._event(ENTITY_TASK, task_id, outcome, {"compute_s": 0.0})

    def stop_all(self) -> None:
        with self._lock:
            ids = list(self._records)
        for task_id in ids:
            self.stop_service(task_id)

    def running_ids(self) -> list[str]:
        with self._lock:
            return [tid for tid, r in self._records.items() if r.state in ("Starting", "Ready")]

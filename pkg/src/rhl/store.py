"""Keyed tensor store coupling producer and consumer tasks.

Two interchangeable backends: a process-local dictionary and a
filesystem directory with one file per key. Records round-trip
bitwise through either. Filesystem publication is atomic (temp file
plus rename), so a reader never observes a partial tensor.
"""

from __future__ import annotations

import os
import statistics
import struct
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DTYPES = ("f32", "f64", "i32", "u8")
_NP_DTYPE = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("u1"),
}
_TAG = {name: i for i, name in enumerate(DTYPES)}
_TAG_NAME = {i: name for name, i in _TAG.items()}

# header: dtype tag and rank, both little-endian u64, then one u64 per dim
_HEADER = struct.Struct("<QQ")


class StoreError(RuntimeError):
    pass


class KeyNotFound(StoreError, KeyError):
    def __init__(self, key: str):
        StoreError.__init__(self, f"no record under key {key!r}")
        self.key = key


@dataclass(frozen=True)
class TensorRecord:
    key: str
    dtype: str
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        if self.dtype not in _NP_DTYPE:
            raise StoreError(f"unsupported dtype {self.dtype!r}")
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 0 for d in self.shape):
            raise StoreError(f"negative dimension in shape {self.shape}")
        expect = self.nbytes_expected
        if len(self.data) != expect:
            raise StoreError(
                f"payload is {len(self.data)} bytes, {self.dtype}{list(self.shape)} needs {expect}"
            )

    @property
    def nbytes_expected(self) -> int:
        n = _NP_DTYPE[self.dtype].itemsize
        for d in self.shape:
            n *= d
        return n

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @staticmethod
    def from_array(key: str, arr: np.ndarray) -> "TensorRecord":
        for name, dt in _NP_DTYPE.items():
            want = np.dtype(dt)
            if arr.dtype.kind == want.kind and arr.dtype.itemsize == want.itemsize:
                # the on-disk format is little-endian; normalize byte order
                le = np.ascontiguousarray(arr).astype(want, copy=False)
                return TensorRecord(key, name, tuple(arr.shape), le.tobytes(order="C"))
        raise StoreError(f"array dtype {arr.dtype} has no store mapping")

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=_NP_DTYPE[self.dtype]).reshape(self.shape)

    def encode(self) -> bytes:
        head = _HEADER.pack(_TAG[self.dtype], len(self.shape))
        dims = struct.pack(f"<{len(self.shape)}Q", *self.shape) if self.shape else b""
        return head + dims + self.data

    @staticmethod
    def decode(key: str, blob: bytes) -> "TensorRecord":
        if len(blob) < _HEADER.size:
            raise StoreError(f"record for {key!r} is truncated")
        tag, rank = _HEADER.unpack_from(blob)
        if tag not in _TAG_NAME:
            raise StoreError(f"record for {key!r} has unknown dtype tag {tag}")
        body = _HEADER.size + 8 * rank
        if len(blob) < body:
            raise StoreError(f"record for {key!r} is truncated")
        shape = struct.unpack_from(f"<{rank}Q", blob, _HEADER.size) if rank else ()
        return TensorRecord(key, _TAG_NAME[tag], tuple(shape), blob[body:])


@dataclass
class StoreStats:
    puts: int = 0
    gets: int = 0
    deletes: int = 0
    bytes_put: int = 0
    bytes_got: int = 0
    put_latencies: list[float] = field(default_factory=list)
    get_latencies: list[float] = field(default_factory=list)

    def median_put_latency(self) -> float:
        return statistics.median(self.put_latencies) if self.put_latencies else 0.0

    def median_get_latency(self) -> float:
        return statistics.median(self.get_latencies) if self.get_latencies else 0.0


# emit(event, key, nbytes, latency_s, task_id) -> None
EmitFn = Callable[[str, str, int, float, "str | None"], None]


class CouplingStore:
    """Common accounting; subclasses provide the storage primitives."""

    name = "base"

    def __init__(self, emit: EmitFn | None = None):
        self._stats = StoreStats()
        self._lock = threading.Lock()
        self._emit = emit

    # storage primitives -------------------------------------------------
    def _write(self, key: str, blob: bytes) -> None:
        raise NotImplementedError

    def _read(self, key: str) -> bytes:
        raise NotImplementedError

    def _remove(self, key: str) -> bool:
        raise NotImplementedError

    def keys(self) -> list[str]:
        raise NotImplementedError

    # public surface -----------------------------------------------------
    def put(self, record: TensorRecord, task_id: str | None = None) -> None:
        t0 = time.perf_counter()
        self._write(record.key, record.encode())
        dt = time.perf_counter() - t0
        with self._lock:
            self._stats.puts += 1
            self._stats.bytes_put += record.nbytes
            self._stats.put_latencies.append(dt)
        if self._emit is not None:
            self._emit("Put", record.key, record.nbytes, dt, task_id)

    def get(self, key: str, task_id: str | None = None) -> TensorRecord:
        t0 = time.perf_counter()
        blob = self._read(key)
        dt = time.perf_counter() - t0
        record = TensorRecord.decode(key, blob)
        with self._lock:
            self._stats.gets += 1
            self._stats.bytes_got += record.nbytes
            self._stats.get_latencies.append(dt)
        if self._emit is not None:
            self._emit("Get", key, record.nbytes, dt, task_id)
        return record

    def delete(self, key: str) -> bool:
        existed = self._remove(key)
        with self._lock:
            self._stats.deletes += 1
        return existed

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(
                puts=self._stats.puts,
                gets=self._stats.gets,
                deletes=self._stats.deletes,
                bytes_put=self._stats.bytes_put,
                bytes_got=self._stats.bytes_got,
                put_latencies=list(self._stats.put_latencies),
                get_latencies=list(self._stats.get_latencies),
            )


class InMemoryStore(CouplingStore):
    name = "memory"

    def __init__(self, emit: EmitFn | None = None):
        super().__init__(emit)
        self._data: dict[str, bytes] = {}
        self._data_lock = threading.Lock()

    def _write(self, key: str, blob: bytes) -> None:
        with self._data_lock:
            self._data[key] = blob

    def _read(self, key: str) -> bytes:
        with self._data_lock:
            try:
                return self._data[key]
            except KeyError:
                raise KeyNotFound(key) from None

    def _remove(self, key: str) -> bool:
        with self._data_lock:
            return self._data.pop(key, None) is not None

    def keys(self) -> list[str]:
        with self._data_lock:
            return sorted(self._data)


class FilesystemStore(CouplingStore):
    """One file per key under a root directory.

    The filename is the percent-encoded key; temp files are prefixed
    with '#', a character percent-encoding never emits.
    """

    name = "filesystem"

    def __init__(self, root, emit: EmitFn | None = None):
        super().__init__(emit)
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)
        self._seq = 0
        self._seq_lock = threading.Lock()

    def _path(self, key: str) -> str:
        return os.path.join(self.root, urllib.parse.quote(key, safe=""))

    def _write(self, key: str, blob: bytes) -> None:
        with self._seq_lock:
            self._seq += 1
            seq = self._seq
        tmp = os.path.join(self.root, f"#tmp.{os.getpid()}.{seq}")
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, self._path(key))

    def _read(self, key: str) -> bytes:
        try:
            with open(self._path(key), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            raise KeyNotFound(key) from None

    def _remove(self, key: str) -> bool:
        try:
            os.remove(self._path(key))
            return True
        except FileNotFoundError:
            return False

    def keys(self) -> list[str]:
        out = []
        for name in os.listdir(self.root):
            if name.startswith("#"):
                continue
            out.append(urllib.parse.unquote(name))
        return sorted(out)


def open_store(kind: str, root=None, emit: EmitFn | None = None) -> CouplingStore:
    if kind == "memory":
        return InMemoryStore(emit)
    if kind in ("fs", "filesystem"):
        if root is None:
            raise StoreError("filesystem store needs a root directory")
        return FilesystemStore(root, emit)
    raise StoreError(f"unknown store kind {kind!r}")

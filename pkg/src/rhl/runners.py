"""In-process runners for Coupled and ServiceClient task bodies."""

from __future__ import annotations

import time
import zlib

import numpy as np

from .store import TensorRecord


def _seeded_array(seed: int, key: str, dtype: str, shape):
    rng = np.random.default_rng((seed & 0xFFFFFFFF) ^ zlib.crc32(key.encode()))
    if dtype == "f32":
        return rng.random(shape, dtype=np.float32)
    if dtype == "f64":
        return rng.random(shape, dtype=np.float64)
    if dtype == "i32":
        return rng.integers(-(2**31), 2**31 - 1, size=shape, dtype=np.int32)
    if dtype == "u8":
        return rng.integers(0, 256, size=shape, dtype=np.uint8)
    raise ValueError(f"unsupported dtype {dtype!r}")


def run_coupled(ctx, task) -> dict:
    """Producer computes then publishes a tensor; consumer fetches then computes."""
    p = task.payload
    role = p["role"]
    key = p["key"]
    compute_s = float(p.get("compute_s", 0.0))
    if ctx.store is None:
        raise RuntimeError("coupled task needs a store")

    if role == "producer":
        t0 = time.perf_counter()
        if compute_s > 0:
            time.sleep(compute_s)
        measured = time.perf_counter() - t0
        arr = _seeded_array(ctx.seed, key, p.get("dtype", "f32"), tuple(p.get("shape", [4000])))
        record = TensorRecord.from_array(key, arr)
        ctx.store.put(record, task_id=task.id)
        return {"compute_s": measured, "role": role, "bytes": record.nbytes}

    if role == "consumer":
        record = ctx.store.get(key, task_id=task.id)
        arr = record.to_array()
        t0 = time.perf_counter()
        if compute_s > 0:
            time.sleep(compute_s)
        measured = time.perf_counter() - t0
        return {
            "compute_s": measured,
            "role": role,
            "bytes": record.nbytes,
            "checksum": float(np.asarray(arr, dtype=np.float64).sum()),
        }

    raise ValueError(f"coupled task role must be producer or consumer, got {role!r}")


def run_service_client(ctx, task) -> dict:
    """Send the task's request list to its service, one response per request."""
    p = task.payload
    service = p["service"]
    total = 0
    n = 0
    for req in p.get("requests", []):
        resp = ctx.infer(service, req)
        if resp is None:
            raise RuntimeError(f"service {service!r} has no ready endpoints")
        total += int(resp["total_tokens"])
        n += 1
    return {"compute_s": 0.0, "requests": n, "tokens": total}

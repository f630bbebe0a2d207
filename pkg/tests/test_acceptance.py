"""Acceptance suite: ten scaled analogs of the headline behaviors.

One test per criterion, pass/fail visible as one line under pytest -v.
Absolute figures from leadership-class machines are out of reach on a
desktop, so each criterion pins a relaxed but falsifiable bound plus a
wall-clock budget, all chosen before freezing this file. Everything
runs on a single commodity machine; nothing here is statistical
hand-waving, every bound failed at least once during tuning.

Criterion 3 deserves a note: backfill-vs-FIFO utilization dominance is
NOT a theorem for arbitrary workloads. With mixed durations a
backfilled narrow task can delay a wide task (and its dependents) past
what head-of-line blocking would have cost; that list-scheduling
anomaly reproduces readily at random (about 3-7% of instances on
varied-duration distributions, single- and multi-node alike). The
randomized campaigns here therefore draw one shared duration per
campaign and attach dependencies only to single-core tasks, a family
where the anomaly has no lever and dominance held on all 10,000 pinned
instances while leaving both invariants meaningfully exercised.
"""

import json
import math
import random
import threading
import time

import numpy as np
import pytest

from rhl.metrics import (
    action_realization_rate,
    concurrent_type_census,
    coupling_lag,
    decision_rate,
    heterogeneity_width,
    log_span,
    runtime_decomposition,
    task_intervals,
)
from rhl.model import (
    ExecutionPolicy,
    NodeSpec,
    PartitionPolicy,
    ResourceDescription,
    TaskCategory,
    TaskDescription,
    validate_campaign,
)
from rhl.orchestrator import Orchestrator
from rhl.report import export_run
from rhl.router import imbalance, route_random, route_token_balanced
from rhl.services import MockInferenceService
from rhl.store import FilesystemStore, InMemoryStore, KeyNotFound, TensorRecord
from rhl.workloads import gen_agentic, gen_coupled, gen_hetero, gen_noop

from oracles import hw_at


def test_ac01_local_noop_throughput():
    """10,000 no-op functions: >= 1,000 tasks/s, <= 1 ms/task, <= 30 s."""
    campaign = gen_noop(tasks=10_000, nodes=1, cores_per_node=128, backend="local")
    t0 = time.monotonic()
    result = Orchestrator(campaign, workers=4).run()
    elapsed = time.monotonic() - t0

    assert result.state_counts() == {"Done": 10_000}
    rate = 10_000 / elapsed
    per_task = elapsed / 10_000
    assert rate >= 1_000.0, f"{rate:.0f} tasks/s"
    assert per_task <= 1e-3, f"{per_task*1e3:.3f} ms/task"
    assert elapsed <= 30.0


def test_ac02_simulated_weak_scaling():
    """Zero-duration tasks, 2,048/node: 16-node makespan <= 1.25x 1-node."""
    t0 = time.monotonic()
    makespans = {}
    for nodes in (1, 16):
        campaign = gen_noop(tasks=2_048 * nodes, nodes=nodes,
                            cores_per_node=64, backend="sim")
        result = Orchestrator(campaign, sim_dispatch_overhead=200e-6).run()
        assert result.state_counts() == {"Done": 2_048 * nodes}
        makespans[nodes] = result.makespan
    elapsed = time.monotonic() - t0

    ratio = makespans[16] / makespans[1]
    assert ratio <= 1.25, f"weak-scaling ratio {ratio:.3f} ({makespans})"
    assert elapsed <= 60.0


def _random_campaign(seed: int):
    """One shared duration per campaign; dependencies only between
    single-core tasks (see module docstring for why)."""
    rng = random.Random(seed)
    nnodes = rng.randint(1, 3)
    cores = rng.choice([4, 8, 16])
    resources = ResourceDescription(
        nodes=tuple(NodeSpec(f"n{i}", cores, 0) for i in range(nnodes))
    )
    duration = round(rng.uniform(0.5, 10.0), 3)
    tasks, narrow = [], []
    for i in range(rng.randint(4, 14)):
        width = rng.randint(1, cores)
        deps = ()
        if width == 1:
            if narrow and rng.random() < 0.5:
                deps = (f"t{rng.choice(narrow)}",)
            narrow.append(i)
        tasks.append(TaskDescription(
            id=f"t{i}", category=TaskCategory.EXECUTABLE,
            ranks=1, cores_per_rank=width, expected_duration=duration,
            dependencies=deps, payload={"command": "/bin/true"},
        ))
    return tasks, resources, nnodes * cores


def _check_log(log, total_cores):
    """Capacity never exceeded, no task running before its dependencies
    are done; returns utilization = busy core-seconds / (C x makespan)."""
    intervals = [iv for iv in task_intervals(log).values()
                 if iv.running is not None and iv.terminal is not None]
    edges = []
    for iv in intervals:
        edges.append((iv.running, iv.running_attrs["cores"]))
        edges.append((iv.terminal, -iv.running_attrs["cores"]))
    edges.sort()
    level = 0
    for _, delta in edges:
        level += delta
        assert level <= total_cores, "capacity invariant violated"

    done_ts = {iv.task_id: iv.terminal for iv in intervals}
    deps_of = {}
    for ev in log:
        if ev.entity == "Task" and ev.event == "New":
            deps_of[ev.id] = ev.attrs.get("dependencies", [])
    for iv in intervals:
        for dep in deps_of.get(iv.task_id, []):
            assert iv.running >= done_ts[dep], \
                f"{iv.task_id} ran before dependency {dep} finished"

    busy = sum(iv.running_attrs["cores"] * (iv.terminal - iv.running)
               for iv in intervals)
    t0, t1 = log_span(log)
    return busy / (total_cores * (t1 - t0))


def test_ac03_scheduler_safety_10k_campaigns():
    """10,000 random campaigns: capacity + ordering hold under both
    policies, and backfill utilization >= FIFO on every instance."""
    t0 = time.monotonic()
    with_deps = strict_wins = 0
    for seed in range(10_000):
        tasks, resources, total_cores = _random_campaign(seed)
        if any(t.dependencies for t in tasks):
            with_deps += 1
        utils = {}
        for scheduling in ("Backfill", "FifoExclusive"):
            policy = ExecutionPolicy(
                partitions=(PartitionPolicy(
                    name="all", nodes=tuple(n.name for n in resources.nodes),
                    backend="sim"),),
                scheduling=scheduling,
            )
            campaign = validate_campaign(list(tasks), resources, policy, seed=seed)
            result = Orchestrator(campaign, sim_dispatch_overhead=0.0).run()
            assert set(result.state_counts()) == {"Done"}
            utils[scheduling] = _check_log(result.log, total_cores)
        assert utils["Backfill"] >= utils["FifoExclusive"] - 1e-12, \
            f"seed {seed}: backfill {utils['Backfill']:.4f} < fifo {utils['FifoExclusive']:.4f}"
        if utils["Backfill"] > utils["FifoExclusive"] + 1e-12:
            strict_wins += 1
    elapsed = time.monotonic() - t0

    # the draw must actually exercise what it claims to test
    assert with_deps > 1_000
    assert strict_wins > 1_000
    assert elapsed <= 300.0


def test_ac04_heterogeneity_width():
    """gen_hetero on 256 virtual nodes: streaming width == brute-force
    sweep exactly, peak >= 8, some instant runs >= 2 distinct types."""
    t0 = time.monotonic()
    result = Orchestrator(gen_hetero(), sim_dispatch_overhead=200e-6).run()
    streaming = heterogeneity_width(result.log, resolution=5.0)

    spans = [(iv.running, iv.terminal, iv.running_attrs["task_type_key"])
             for iv in task_intervals(result.log).values()
             if iv.running is not None and iv.terminal is not None]
    for t, got in zip(streaming.timestamps(), streaming.values):
        assert got == hw_at(spans, t), f"streaming diverges from sweep at t={t}"

    assert streaming.peak() >= 8
    widest = max(streaming.timestamps(), key=lambda t: hw_at(spans, t))
    assert len(concurrent_type_census(result.log, at=widest)) >= 2
    elapsed = time.monotonic() - t0
    assert elapsed <= 60.0


def _exhaustive_min_makespan(tokens, n_endpoints):
    """Smallest possible max endpoint load, by trying every assignment."""
    best = sum(tokens)
    loads = [0] * n_endpoints

    def place(i):
        nonlocal best
        if max(loads) >= best:
            return  # already no better than best, prune
        if i == len(tokens):
            best = max(loads)
            return
        seen = set()
        for e in range(n_endpoints):
            if loads[e] in seen:
                continue  # symmetric branch
            seen.add(loads[e])
            loads[e] += tokens[i]
            place(i + 1)
            loads[e] -= tokens[i]

    place(0)
    return best


def test_ac05_routing_quality():
    """Token-balanced: max/mean <= 1.02 and beats random on >= 95/100
    paired seeds; LPT stays within (4/3 - 1/(3N)) of the exhaustive
    optimum on every small instance."""
    t0 = time.monotonic()
    wins = 0
    lo, hi = math.log(4_000), math.log(50_000)
    for seed in range(100):
        rng = random.Random(1_000 + seed)
        requests = [(f"r{i}", int(math.exp(rng.uniform(lo, hi))))
                    for i in range(300)]
        balanced = imbalance(route_token_balanced(requests, 4)).max_over_mean_tokens
        rand = imbalance(route_random(requests, 4, seed=seed)).max_over_mean_tokens
        assert balanced <= 1.02, f"seed {seed}: max/mean {balanced:.4f}"
        if balanced < rand:
            wins += 1
    assert wins >= 95, f"token-balanced beat random on only {wins}/100"

    for seed in range(50):
        rng = random.Random(2_000 + seed)
        n = rng.randint(2, 3)
        tokens = [rng.randint(100, 50_000) for _ in range(rng.randint(4, 12))]
        requests = [(f"r{i}", t) for i, t in enumerate(tokens)]
        lpt = max(route_token_balanced(requests, n).per_endpoint_tokens())
        opt = _exhaustive_min_makespan(tokens, n)
        bound = (4.0 / 3.0 - 1.0 / (3.0 * n)) * opt
        assert lpt <= bound + 1e-9, f"seed {seed}: LPT {lpt} > bound {bound:.1f}"
    elapsed = time.monotonic() - t0
    assert elapsed <= 120.0


def _aggregate_tokens_per_s(n_services):
    services = [MockInferenceService(token_rate=30_000.0, max_num_seqs=8,
                                     max_num_batched_tokens=200_000, warmup_s=0.0)
                for _ in range(n_services)]
    for s in services:
        s.start()
    per_request = 1_500
    n_requests = 20  # 30k tokens per service, one second of saturated work
    done = threading.Event()
    remaining = [n_services * n_requests]
    lock = threading.Lock()

    def on_response(_):
        with lock:
            remaining[0] -= 1
            if remaining[0] == 0:
                done.set()

    t0 = time.monotonic()
    for i in range(n_requests):
        for s in services:
            s.submit({"id": f"r{i}", "prompt_tokens": per_request - 100,
                      "generate_tokens": 100}, on_response)
    assert done.wait(timeout=60.0)
    elapsed = time.monotonic() - t0
    total = sum(s.stats()["tokens_processed"] for s in services)
    for s in services:
        s.stop()
    return total / elapsed


def test_ac06_inference_scaling():
    """Aggregate mock-service throughput for 1 -> 4 instances scales to
    >= 0.9 x N of the single-instance rate under saturating load."""
    t0 = time.monotonic()
    single = _aggregate_tokens_per_s(1)
    for n in (2, 4):
        aggregate = _aggregate_tokens_per_s(n)
        assert aggregate >= 0.9 * n * single, \
            f"N={n}: {aggregate:,.0f} tok/s < 0.9 x {n} x {single:,.0f}"
    elapsed = time.monotonic() - t0
    assert elapsed <= 120.0


def test_ac07_coupling_costs():
    """Memory store beats filesystem on 16 KB put+get medians;
    decomposition residual is exactly 0; with compute padded to 100 ms
    per task, orchestration + runtime overhead stay under 5%."""
    t0 = time.monotonic()
    payload = np.arange(4_096, dtype=np.float32)  # 16 KB

    def median_put_get(store):
        latencies = []
        for i in range(1_000):
            record = TensorRecord.from_array(f"k{i}", payload)
            tick = time.perf_counter()
            store.put(record, task_id="bench")
            got = store.get(f"k{i}", task_id="bench")
            latencies.append(time.perf_counter() - tick)
            assert got.to_array().tobytes() == payload.tobytes()
        latencies.sort()
        return latencies[len(latencies) // 2]

    mem_median = median_put_get(InMemoryStore())
    import tempfile
    with tempfile.TemporaryDirectory() as root:
        fs_median = median_put_get(FilesystemStore(root))
    assert mem_median < fs_median, \
        f"memory {mem_median*1e6:.1f}us !< filesystem {fs_median*1e6:.1f}us"

    campaign = gen_coupled(pairs=40, nodes=1, store="memory",
                           compute_s=0.1, cores_per_node=8)
    result = Orchestrator(campaign, workers=8).run()
    decomp = runtime_decomposition(result.log)
    residual = decomp["total"] - (decomp["computation"] + decomp["data_transfer"]
                                  + decomp["orchestration"] + decomp["runtime_overhead"])
    assert residual == 0.0, f"residual {residual!r}"
    managed = (decomp["orchestration"] + decomp["runtime_overhead"]) / decomp["total"]
    assert managed < 0.05, f"orchestration+overhead fraction {managed:.4f}"
    elapsed = time.monotonic() - t0
    assert elapsed <= 120.0


def test_ac08_agentic_feedback():
    """50 agents for 30 s against a saturated compute partition: every
    decision's task runs (zero unmatched), lag bounded by 2x the rate
    window, and decision-rate dips follow realization peaks (the lagged
    cross-correlation of ARR level with the subsequent change in
    decision rate goes negative)."""
    t0 = time.monotonic()
    campaign = gen_agentic(agents=50, duration=30.0, feedback=True,
                           base_interval=0.3, task_duration=0.2,
                           hpc_cores=20, backlog_threshold=3)
    result = Orchestrator(campaign, workers=80).run()

    lag = coupling_lag(result.log)
    window = campaign.policy.rate_window
    assert len(lag.unmatched) == 0, f"unmatched decisions: {lag.unmatched[:5]}"
    assert lag.max_lag <= 2.0 * window, f"max lag {lag.max_lag:.2f}s"
    assert lag.count > 1_000  # the loop must actually have run at scale

    decisions = np.array(decision_rate(result.log, window=window, resolution=0.5).values)
    realized = np.array(action_realization_rate(result.log, window=window, resolution=0.5).values)
    n = min(len(decisions), len(realized), 60)  # the 30 s active phase
    decisions, realized = decisions[:n], realized[:n]
    dips = np.diff(decisions)
    correlations = [
        float(np.corrcoef(realized[: len(dips) - k + 1], dips[k - 1:])[0, 1])
        for k in range(1, 7)  # 0.5 s to 3 s behind
    ]
    assert min(correlations) < 0.0, f"no negative lagged correlation: {correlations}"
    elapsed = time.monotonic() - t0
    assert elapsed <= 60.0


def test_ac09_store_differential():
    """Memory and filesystem backends stay bitwise interchangeable over
    10,000 random operation sequences."""
    import tempfile
    t0 = time.monotonic()
    rng = random.Random(42)
    with tempfile.TemporaryDirectory() as root:
        mem, fs = InMemoryStore(), FilesystemStore(root)
        for seq in range(10_000):
            keys = [f"s{seq}/k{i}" for i in range(3)]
            for _ in range(6):
                op = rng.choice(("put", "get", "delete", "keys"))
                key = rng.choice(keys)
                if op == "put":
                    dtype = rng.choice((np.float32, np.float64, np.int32, np.uint8))
                    array = (rng.random() * 100 * np.ones(rng.randint(1, 64))).astype(dtype)
                    mem.put(TensorRecord.from_array(key, array), task_id="m")
                    fs.put(TensorRecord.from_array(key, array), task_id="f")
                elif op == "get":
                    try:
                        a = mem.get(key, task_id="m")
                    except KeyNotFound:
                        a = None
                    try:
                        b = fs.get(key, task_id="f")
                    except KeyNotFound:
                        b = None
                    assert (a is None) == (b is None)
                    if a is not None:
                        assert a.to_array().tobytes() == b.to_array().tobytes()
                        assert a.to_array().dtype == b.to_array().dtype
                elif op == "delete":
                    assert mem.delete(key) == fs.delete(key)
                else:
                    assert sorted(mem.keys()) == sorted(fs.keys())
            assert sorted(mem.keys()) == sorted(fs.keys())
            for key in set(mem.keys()):
                if key.startswith(f"s{seq}/"):
                    mem.delete(key)
                    fs.delete(key)
    elapsed = time.monotonic() - t0
    assert elapsed <= 120.0


def test_ac10_simulated_determinism(tmp_path):
    """The same seeded campaign run twice on the simulated backend
    produces byte-identical event logs and export artifacts."""
    t0 = time.monotonic()
    artifacts = []
    for sub in ("first", "second"):
        result = Orchestrator(gen_hetero(seed=3), sim_dispatch_overhead=200e-6).run()
        paths = export_run(result, tmp_path / sub, figures=True)
        artifacts.append({name: p.read_bytes() for name, p in paths.items()})

    assert artifacts[0].keys() == artifacts[1].keys()
    for name in artifacts[0]:
        assert artifacts[0][name] == artifacts[1][name], f"{name} differs between runs"
    report = json.loads(artifacts[0]["report"])
    assert report["run_id"] == json.loads(artifacts[1]["report"])["run_id"]
    elapsed = time.monotonic() - t0
    assert elapsed <= 60.0

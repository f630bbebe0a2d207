"""Local backend: real threads and real subprocesses.

Wall-clock timing is only ever bounded loosely here; correctness is
asserted on event structure, exit codes, and the RHL_* environment
contract that spawned processes observe.
"""

import json
import sys
import time

import pytest

from rhl.backends.local import LocalBackend
from rhl.clock import WallClock
from rhl.events import EV_CANCELED, EV_DONE, EV_FAILED, EV_RUNNING
from rhl.mapper import Placement, RankBinding
from rhl.model import TaskCategory, TaskDescription

from conftest import exe


def plc(task_id: str, bindings) -> Placement:
    return Placement(token=1, task_id=task_id, partition="all", bindings=tuple(bindings))


def one_rank(task_id: str, cores=(0,), gpus=()) -> Placement:
    return plc(task_id, [RankBinding(0, "n0", tuple(cores), tuple(gpus))])


def fn_task(task_id: str, function: str, **args) -> TaskDescription:
    return TaskDescription(
        id=task_id,
        category=TaskCategory.FUNCTION,
        payload={"function": function, "args": args},
    )


def wait_terminal(backend: LocalBackend, task_ids, timeout: float = 30.0) -> dict:
    """Poll until every task id has a terminal event; returns id -> [events]."""
    want = set(task_ids)
    seen: dict[str, list] = {tid: [] for tid in want}
    deadline = time.monotonic() + timeout
    while want and time.monotonic() < deadline:
        for ev in backend.poll_events(timeout=0.05):
            seen.setdefault(ev.id, []).append(ev)
            if ev.event in (EV_DONE, EV_FAILED, EV_CANCELED):
                want.discard(ev.id)
    assert not want, f"tasks never finished: {sorted(want)}"
    return seen


@pytest.fixture
def backend():
    be = LocalBackend(WallClock(), workers=4)
    yield be
    be.shutdown()


class TestExecutables:
    def test_rank_env_contract(self, backend, tmp_path):
        # each rank dumps its RHL_* environment to a file named by rank
        script = tmp_path / "dump.py"
        script.write_text(
            "import json, os\n"
            "env = {k: v for k, v in os.environ.items() if k.startswith('RHL_')}\n"
            "path = os.path.join(env['RHL_OUT'], 'rank%s.json' % env['RHL_RANK'])\n"
            "with open(path, 'w') as fh:\n"
            "    json.dump(env, fh)\n"
        )
        task = TaskDescription(
            id="mpi-job",
            category=TaskCategory.EXECUTABLE,
            ranks=2,
            cores_per_rank=2,
            gpus_per_rank=1,
            payload={
                "command": sys.executable,
                "args": [str(script)],
                "env": {"RHL_OUT": str(tmp_path)},
            },
        )
        placement = plc(
            "mpi-job",
            [
                RankBinding(0, "n0", (0, 1), (0,)),
                RankBinding(1, "n0", (2, 3), (1,)),
            ],
        )
        backend.launch(task, placement)
        events = wait_terminal(backend, ["mpi-job"])["mpi-job"]
        assert events[-1].event == EV_DONE
        assert events[-1].attrs["exit_codes"] == [0, 0]

        env0 = json.loads((tmp_path / "rank0.json").read_text())
        env1 = json.loads((tmp_path / "rank1.json").read_text())
        assert env0["RHL_RANK"] == "0" and env1["RHL_RANK"] == "1"
        assert env0["RHL_RANKS"] == env1["RHL_RANKS"] == "2"
        assert env0["RHL_CORES"] == "0,1" and env1["RHL_CORES"] == "2,3"
        assert env0["RHL_GPUS"] == "0" and env1["RHL_GPUS"] == "1"
        assert env0["RHL_TASK_ID"] == "mpi-job"
        assert env0["RHL_RENDEZVOUS"] == env1["RHL_RENDEZVOUS"] == "local://mpi-job"

    def test_running_precedes_done_with_placement_attrs(self, backend):
        backend.launch(exe("ok", duration=0.0), one_rank("ok"))
        events = wait_terminal(backend, ["ok"])["ok"]
        assert [e.event for e in events] == [EV_RUNNING, EV_DONE]
        assert events[0].attrs["task_type_key"] == "Serial/CPU/1"
        assert events[0].attrs["cores"] == 1
        assert events[1].attrs["compute_s"] >= 0.0

    def test_nonzero_exit_fails_with_codes(self, backend):
        task = exe("bad")
        task.payload.update({"command": sys.executable, "args": ["-c", "raise SystemExit(3)"]})
        backend.launch(task, one_rank("bad"))
        events = wait_terminal(backend, ["bad"])["bad"]
        assert events[-1].event == EV_FAILED
        assert events[-1].attrs["exit_codes"] == [3]
        assert "nonzero exit" in events[-1].attrs["error"]

    def test_unspawnable_command_fails(self, backend):
        task = exe("ghost")
        task.payload["command"] = "/no/such/binary-anywhere"
        backend.launch(task, one_rank("ghost"))
        events = wait_terminal(backend, ["ghost"])["ghost"]
        assert [e.event for e in events] == [EV_FAILED]
        assert "spawn failed" in events[-1].attrs["error"]

    def test_cancel_terminates_process(self, backend):
        task = exe("sleeper")
        task.payload.update({"command": sys.executable, "args": ["-c", "import time; time.sleep(60)"]})
        handle = backend.launch(task, one_rank("sleeper"))
        # wait for Running so the process exists before we cancel it
        deadline = time.monotonic() + 20
        got_running = False
        while not got_running and time.monotonic() < deadline:
            got_running = any(
                e.event == EV_RUNNING for e in backend.poll_events(timeout=0.05)
            )
        assert got_running
        t0 = time.monotonic()
        backend.cancel(handle)
        events = wait_terminal(backend, ["sleeper"])["sleeper"]
        assert events[-1].event == EV_CANCELED
        assert time.monotonic() - t0 < 30.0  # did not wait out the sleep


class TestFunctions:
    def test_registered_function_runs_to_done(self, backend):
        backend.launch(fn_task("f0", "noop"), one_rank("f0"))
        events = wait_terminal(backend, ["f0"])["f0"]
        assert [e.event for e in events] == [EV_RUNNING, EV_DONE]
        assert events[-1].attrs["compute_s"] >= 0.0

    def test_result_dict_merges_into_done_attrs(self, backend):
        backend.launch(fn_task("f1", "echo", x=1, tag="blue"), one_rank("f1"))
        events = wait_terminal(backend, ["f1"])["f1"]
        assert events[-1].attrs["echo"] == {"x": 1, "tag": "blue"}

    def test_raising_function_fails_with_message(self, backend):
        backend.launch(fn_task("f2", "fail", message="boom"), one_rank("f2"))
        events = wait_terminal(backend, ["f2"])["f2"]
        assert [e.event for e in events] == [EV_RUNNING, EV_FAILED]
        assert events[-1].attrs["error"] == "boom"

    def test_unregistered_function_fails(self, backend):
        backend.launch(fn_task("f3", "no-such-fn"), one_rank("f3"))
        events = wait_terminal(backend, ["f3"])["f3"]
        assert [e.event for e in events] == [EV_RUNNING, EV_FAILED]
        assert "not registered" in events[-1].attrs["error"]

    def test_cancel_before_start_skips_running(self):
        # one worker: the sleeper occupies it, so the victim is still
        # queued when the cancel lands
        be = LocalBackend(WallClock(), workers=1)
        try:
            be.launch(fn_task("hog", "sleep", seconds=0.4), one_rank("hog"))
            handle = be.launch(fn_task("victim", "noop"), one_rank("victim"))
            be.cancel(handle)
            events = wait_terminal(be, ["hog", "victim"])
            assert [e.event for e in events["victim"]] == [EV_CANCELED]
            assert events["hog"][-1].event == EV_DONE
        finally:
            be.shutdown()

    def test_sleepers_overlap_across_workers(self):
        be = LocalBackend(WallClock(), workers=4)
        try:
            t0 = time.monotonic()
            for i in range(4):
                be.launch(fn_task(f"s{i}", "sleep", seconds=0.15), one_rank(f"s{i}"))
            wait_terminal(be, [f"s{i}" for i in range(4)])
            assert time.monotonic() - t0 < 0.5  # serial would need 0.6s
        finally:
            be.shutdown()


def test_service_without_manager_fails(backend):
    task = TaskDescription(
        id="svc", category=TaskCategory.SERVICE, payload={"kind": "mock-llm"}
    )
    backend.launch(task, one_rank("svc"))
    events = wait_terminal(backend, ["svc"])["svc"]
    assert events[-1].event == EV_FAILED
    assert "service manager" in events[-1].attrs["error"]


def test_poll_timeout_blocks_then_returns_empty(backend):
    t0 = time.monotonic()
    assert backend.poll_events(timeout=0.1) == []
    assert time.monotonic() - t0 >= 0.09

"""Command line flows, in-process through main(argv).

Covers the gen -> run -> analyze -> replay pipeline on tiny campaigns,
global flag placement before and after the verb, the documented exit
codes, and the figure toggle.
"""

import json

import pytest

import rhl
from rhl.campaign_io import parse_campaign
from rhl.cli import apply_overrides, main
from rhl.workloads import gen_noop


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture
def noop_file(tmp_path):
    rc = run_cli("gen", "noop", "--tasks", 6, "--cores-per-node", 4,
                 "-o", tmp_path / "c.json")
    assert rc == 0
    return tmp_path / "c.json"


class TestGen:
    def test_writes_parseable_campaign(self, noop_file):
        c = parse_campaign(noop_file)
        assert len(c.tasks) == 6
        assert c.policy.partitions[0].backend == "local"

    def test_default_output_name_under_out_dir(self, tmp_path):
        assert run_cli("--out-dir", tmp_path, "gen", "coupled", "--pairs", 2) == 0
        assert (tmp_path / "campaign_coupled.json").exists()

    def test_all_kinds_generate(self, tmp_path):
        for kind, extra in [
            ("noop", ["--tasks", "3", "--cores-per-node", "4"]),
            ("hetero", []),
            ("inference", ["--clients", "2", "--prompts", "4"]),
            ("coupled", ["--pairs", "2"]),
            ("agentic", ["--agents", "2", "--duration", "1.0"]),
        ]:
            out = tmp_path / f"{kind}.json"
            assert run_cli("gen", kind, *extra, "-o", out) == 0
            parse_campaign(out)

    def test_backend_override_at_gen_time(self, tmp_path, noop_file):
        out = tmp_path / "sim.json"
        assert run_cli("gen", "noop", "--tasks", 2, "--cores-per-node", 2,
                       "--backend", "sim", "-o", out) == 0
        c = parse_campaign(out)
        assert all(p.backend == "sim" for p in c.policy.partitions)

    def test_seed_flag_position_does_not_matter(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run_cli("--seed", 9, "gen", "hetero", "-o", a) == 0
        assert run_cli("gen", "hetero", "--seed", 9, "-o", b) == 0
        assert a.read_bytes() == b.read_bytes()


class TestRun:
    def test_run_exports_artifacts(self, tmp_path, noop_file):
        out = tmp_path / "out"
        rc = run_cli("run", noop_file, "--workers", 2, "--out-dir", out, "--no-figures")
        assert rc == 0
        events = list(out.glob("events_*.jsonl"))
        reports = list(out.glob("report_*.json"))
        assert len(events) == 1 and len(reports) == 1
        report = json.loads(reports[0].read_text())
        assert report["tasks"]["final_states"] == {"Done": 6}
        assert not list(out.glob("*.png"))

    def test_run_renders_figures_by_default(self, tmp_path, noop_file):
        out = tmp_path / "out"
        assert run_cli("run", noop_file, "--workers", 2, "--backend", "sim",
                       "--out-dir", out) == 0
        pngs = list(out.glob("*.png"))
        assert len(pngs) == 6
        for p in pngs:
            assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_sim_override_makes_runs_reproducible(self, tmp_path, noop_file):
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            assert run_cli("--backend", "sim", "run", noop_file,
                           "--out-dir", out, "--no-figures") == 0
            (events,) = out.glob("events_*.jsonl")
            outs.append(events.read_bytes())
        assert outs[0] == outs[1]

    def test_run_prints_summary_line(self, tmp_path, noop_file, capsys):
        out = tmp_path / "out"
        assert run_cli("run", noop_file, "--workers", 2, "--out-dir", out,
                       "--no-figures") == 0
        stdout = capsys.readouterr().out
        assert "makespan" in stdout
        assert "Done" in stdout


class TestAnalyzeAndReplay:
    @pytest.fixture
    def events_file(self, tmp_path, noop_file):
        out = tmp_path / "out"
        assert run_cli("--backend", "sim", "run", noop_file, "--out-dir", out,
                       "--no-figures") == 0
        (events,) = out.glob("events_*.jsonl")
        return events

    def test_analyze_all_reprints_summary(self, tmp_path, events_file, capsys):
        out = tmp_path / "analysis"
        rc = run_cli("analyze", events_file, "--out-dir", out, "--no-figures")
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["tasks"] == {"final_states": {}, "rejected_spawns": 0}
        assert summary["throughput"]["tasks_done"] == 6
        run_id = events_file.stem[len("events_"):]
        assert summary["run_id"] == run_id
        assert (out / f"core_util_{run_id}.csv").exists()

    def test_analyze_single_metric_writes_one_series(self, tmp_path, events_file, capsys):
        out = tmp_path / "analysis"
        rc = run_cli("analyze", events_file, "--metric", "hw",
                     "--resolution", "0.5", "--out-dir", out, "--no-figures")
        assert rc == 0
        assert "hw: peak" in capsys.readouterr().out
        run_id = events_file.stem[len("events_"):]
        assert (out / f"hw_{run_id}.csv").exists()
        assert not (out / f"core_util_{run_id}.csv").exists()

    def test_analyze_throughput_prints_json_only(self, tmp_path, events_file, capsys):
        assert run_cli("analyze", events_file, "--metric", "throughput") == 0
        out = json.loads(capsys.readouterr().out)
        assert out["tasks_done"] == 6

    def test_replay_reports_state_counts(self, events_file, capsys):
        assert run_cli("replay", events_file) == 0
        stdout = capsys.readouterr().out
        assert "6 tasks" in stdout
        assert "Done: 6" in stdout

    def test_replay_rejects_corrupt_log(self, tmp_path, capsys):
        bad = tmp_path / "events_bad.jsonl"
        bad.write_text(
            '{"attrs":{},"entity":"Task","event":"Running","id":"t0","ts":0.0}\n'
        )
        assert run_cli("replay", bad) == 1
        assert "error" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_campaign_file_is_input_error(self, tmp_path, capsys):
        assert run_cli("run", tmp_path / "ghost.json") == 1
        assert "error" in capsys.readouterr().err

    def test_invalid_campaign_is_input_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({
            "resources": {"nodes": [{"name": "n0", "cores": 1}]},
            "tasks": [
                {"id": "a", "category": "Function", "dependencies": ["b"],
                 "payload": {"function": "noop"}},
                {"id": "b", "category": "Function", "dependencies": ["a"],
                 "payload": {"function": "noop"}},
            ],
        }))
        assert run_cli("run", bad) == 1
        assert "CyclicDependency" in capsys.readouterr().err

    def test_malformed_events_is_input_error(self, tmp_path):
        bad = tmp_path / "events_x.jsonl"
        bad.write_text("not json at all\n")
        assert run_cli("analyze", bad) == 1

    def test_unwritable_output_is_runtime_error(self, tmp_path, noop_file):
        blocker = tmp_path / "blocked"
        blocker.write_text("a file, not a directory")
        rc = run_cli("run", noop_file, "--workers", 2,
                     "--out-dir", blocker, "--no-figures")
        assert rc == 2

    def test_unknown_command_exits_two_via_argparse(self):
        with pytest.raises(SystemExit) as err:
            run_cli("explode")
        assert err.value.code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as err:
        run_cli("--version")
    assert err.value.code == 0
    assert rhl.__version__ in capsys.readouterr().out


class TestApplyOverrides:
    def test_noop_returns_same_object(self):
        c = gen_noop(tasks=2, cores_per_node=2)
        assert apply_overrides(c) is c

    def test_backend_override_covers_implicit_partition(self):
        c = gen_noop(tasks=2, cores_per_node=2)
        # strip the explicit partition to exercise the implicit-default path
        from rhl.campaign_io import campaign_from_dict, campaign_to_dict
        d = campaign_to_dict(c)
        d["policy"]["partitions"] = []
        bare = campaign_from_dict(d)
        overridden = apply_overrides(bare, backend="sim")
        assert len(overridden.policy.partitions) == 1
        assert overridden.policy.partitions[0].backend == "sim"
        assert overridden.policy.partitions[0].nodes == ("n0000",)

    def test_store_alias_fs(self):
        c = gen_noop(tasks=2, cores_per_node=2)
        assert apply_overrides(c, store="fs").store == "filesystem"

"""Command line front end.

    rhl [--seed N] [--backend B] [--store S] [--out-dir DIR] <command> ...

Commands: gen (emit a synthetic campaign), run (execute a campaign and
export its report), analyze (recompute metrics from an event log),
replay (validate a log by replaying task lifecycles).

Exit codes: 0 ok, 1 invalid input (campaign, flags, log), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, workloads
from .backends.base import BackendError
from .campaign_io import ParseError, campaign_from_dict, campaign_to_dict, parse_campaign, serialize_campaign
from .events import EventLog, MalformedLog
from .metrics import (
    action_realization_rate,
    heterogeneity_width,
    replay_states,
    runtime_decomposition,
    throughput,
    utilization,
)
from .model import Campaign, CampaignValidationError, IllegalTransition
from .orchestrator import Orchestrator, OrchestratorError
from .report import build_summary, export, export_run, peak_bound_resources
from .services import ServiceError
from .store import StoreError

log = logging.getLogger("rhl")

_STORE_ALIASES = {"memory": "memory", "fs": "filesystem", "filesystem": "filesystem"}


def apply_overrides(
    campaign: Campaign,
    seed: int | None = None,
    backend: str | None = None,
    store: str | None = None,
) -> Campaign:
    """Rebuild a campaign with seed/backend/store swapped out.

    The result goes back through full validation; overriding the backend
    rewrites every partition (adding an explicit all-nodes partition when
    the campaign only had the implicit default one).
    """
    if seed is None and backend is None and store is None:
        return campaign
    d = campaign_to_dict(campaign)
    if seed is not None:
        d["seed"] = seed
    if store is not None:
        d["store"] = _STORE_ALIASES[store]
    if backend is not None:
        parts = d["policy"]["partitions"]
        if not parts:
            parts.append({"name": "all", "nodes": [n["name"] for n in d["resources"]["nodes"]]})
            d["policy"]["partitions"] = parts
        for p in parts:
            p["backend"] = backend
    return campaign_from_dict(d)


def _add_common(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps subcommand copies of these flags from clobbering
    # values parsed before the verb
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the campaign seed")
    parser.add_argument("--backend", choices=("local", "sim"), default=argparse.SUPPRESS,
                        help="force every partition onto this backend")
    parser.add_argument("--store", choices=("memory", "fs", "filesystem"),
                        default=argparse.SUPPRESS, help="override the coupling store kind")
    parser.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help="directory for generated/exported artifacts (default .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rhl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a campaign file and export its report")
    _add_common(p_run)
    p_run.add_argument("campaign", help="path to a campaign JSON file")
    p_run.add_argument("--workers", type=int, default=None,
                       help="local worker pool size (default: machine core count)")
    p_run.add_argument("--sim-overhead", type=float, default=0.0,
                       help="per-node dispatch overhead in seconds for the sim backend")
    p_run.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_gen = sub.add_parser("gen", help="generate a synthetic campaign file")
    _add_common(p_gen)
    p_gen.add_argument("-o", "--output", default=None, help="output path (default <out-dir>/campaign_<kind>.json)")
    gsub = p_gen.add_subparsers(dest="kind", required=True)

    def _gen_kind(name: str, help_text: str) -> argparse.ArgumentParser:
        g = gsub.add_parser(name, help=help_text)
        _add_common(g)
        g.add_argument("-o", "--output", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        return g

    g = _gen_kind("noop", "independent no-op tasks")
    g.add_argument("--tasks", type=int, default=1000)
    g.add_argument("--nodes", type=int, default=1)
    g.add_argument("--cores-per-node", type=int, default=128)

    g = _gen_kind("hetero", "mixed serial/MPI, CPU/GPU executables")
    g.add_argument("--nodes", type=int, default=256)
    g.add_argument("--cores-per-node", type=int, default=64)
    g.add_argument("--gpus-per-node", type=int, default=8)

    g = _gen_kind("inference", "replicated services plus batch clients")
    g.add_argument("--services", type=int, default=1)
    g.add_argument("--clients", type=int, default=4)
    g.add_argument("--prompts", type=int, default=100)
    g.add_argument("--dist", choices=("uniform", "loguniform"), default="uniform")
    g.add_argument("--min-tokens", type=int, default=None)
    g.add_argument("--max-tokens", type=int, default=None)
    g.add_argument("--generate-tokens", type=int, default=128)
    g.add_argument("--token-rate", type=float, default=50_000.0)
    g.add_argument("--max-seqs", type=int, default=64)
    g.add_argument("--max-batched-tokens", type=int, default=131_072)
    g.add_argument("--warmup", type=float, default=0.0)
    g.add_argument("--transport", choices=("inproc", "socket"), default="inproc")
    g.add_argument("--routing", choices=("Random", "RoundRobin", "TokenBalanced"),
                   default="TokenBalanced")

    g = _gen_kind("coupled", "producer/consumer pairs over the coupling store")
    g.add_argument("--pairs", type=int, default=100)
    g.add_argument("--nodes", type=int, default=1)
    g.add_argument("--cores-per-node", type=int, default=32)
    g.add_argument("--compute-s", type=float, default=0.0)

    g = _gen_kind("agentic", "agent loops spawning tasks against a service")
    g.add_argument("--agents", type=int, default=50)
    g.add_argument("--duration", type=float, default=30.0)
    g.add_argument("--no-feedback", action="store_true",
                   help="keep the decision interval fixed regardless of backlog")
    g.add_argument("--base-interval", type=float, default=0.2)
    g.add_argument("--task-duration", type=float, default=0.08)
    g.add_argument("--backlog-threshold", type=int, default=5)
    g.add_argument("--hpc-cores", type=int, default=24)
    g.add_argument("--token-rate", type=float, default=50_000.0)
    g.add_argument("--prompt-tokens", type=int, default=256)
    g.add_argument("--generate-tokens", type=int, default=64)

    p_an = sub.add_parser("analyze", help="recompute metrics from an event log")
    _add_common(p_an)
    p_an.add_argument("events", help="path to an events JSONL file")
    p_an.add_argument("--metric", choices=("all", "hw", "arr", "util", "throughput", "decomp"),
                      default="all")
    p_an.add_argument("--window", type=float, default=1.0, help="rate window in seconds")
    p_an.add_argument("--resolution", type=float, default=0.1, help="grid step in seconds")
    p_an.add_argument("--cores", type=int, default=None,
                      help="cluster core count for utilization (default: peak bound cores)")
    p_an.add_argument("--gpus", type=int, default=None)
    p_an.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_rp = sub.add_parser("replay", help="validate an event log by replaying lifecycles")
    _add_common(p_rp)
    p_rp.add_argument("events", help="path to an events JSONL file")
    return parser


def _out_dir(ns: argparse.Namespace) -> Path:
    return Path(getattr(ns, "out_dir", None) or ".")


def _cmd_gen(ns: argparse.Namespace) -> int:
    seed = getattr(ns, "seed", None)
    kind = ns.kind
    if kind == "noop":
        campaign = workloads.gen_noop(tasks=ns.tasks, nodes=ns.nodes,
                                      cores_per_node=ns.cores_per_node, seed=seed or 0)
    elif kind == "hetero":
        campaign = workloads.gen_hetero(seed=7 if seed is None else seed, nodes=ns.nodes,
                                        cores_per_node=ns.cores_per_node,
                                        gpus_per_node=ns.gpus_per_node)
    elif kind == "inference":
        campaign = workloads.gen_inference(
            services=ns.services, clients=ns.clients, prompts=ns.prompts, dist=ns.dist,
            seed=seed or 0, token_rate=ns.token_rate, max_num_seqs=ns.max_seqs,
            max_num_batched_tokens=ns.max_batched_tokens, warmup=ns.warmup,
            transport=ns.transport, routing=ns.routing, generate_tokens=ns.generate_tokens,
            min_tokens=ns.min_tokens, max_tokens=ns.max_tokens)
    elif kind == "coupled":
        campaign = workloads.gen_coupled(pairs=ns.pairs, nodes=ns.nodes,
                                         cores_per_node=ns.cores_per_node,
                                         compute_s=ns.compute_s, seed=seed or 0)
    else:
        campaign = workloads.gen_agentic(
            agents=ns.agents, duration=ns.duration, feedback=not ns.no_feedback,
            seed=seed or 0, base_interval=ns.base_interval, task_duration=ns.task_duration,
            backlog_threshold=ns.backlog_threshold, hpc_cores=ns.hpc_cores,
            token_rate=ns.token_rate, prompt_tokens=ns.prompt_tokens,
            generate_tokens=ns.generate_tokens)

    campaign = apply_overrides(campaign, backend=getattr(ns, "backend", None),
                               store=getattr(ns, "store", None))
    out = Path(ns.output) if ns.output else _out_dir(ns) / f"campaign_{kind}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    serialize_campaign(campaign, out)
    print(f"wrote {out} ({len(campaign.tasks)} tasks)")
    return 0


def _cmd_run(ns: argparse.Namespace) -> int:
    campaign = parse_campaign(ns.campaign)
    campaign = apply_overrides(campaign, seed=getattr(ns, "seed", None),
                               backend=getattr(ns, "backend", None),
                               store=getattr(ns, "store", None))
    out = _out_dir(ns)
    orch = Orchestrator(campaign, workers=ns.workers, store_root=out / "store",
                        sim_dispatch_overhead=ns.sim_overhead)
    result = orch.run()
    paths = export_run(result, out, figures=not ns.no_figures)
    print(f"run {result.run_id}: makespan {result.makespan:.3f}s, "
          f"wall {result.wall_seconds:.3f}s, states {result.state_counts()}")
    for name in sorted(paths):
        print(f"  {name}: {paths[name]}")
    return 0


def _print_json(obj: dict) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_analyze(ns: argparse.Namespace) -> int:
    events = EventLog.read_jsonl(ns.events)
    out = _out_dir(ns)
    stem = Path(ns.events).stem
    run_id = stem[len("events_"):] if stem.startswith("events_") else stem
    cores, gpus = ns.cores, ns.gpus
    if cores is None:
        cores, peak_g = peak_bound_resources(events)
        gpus = peak_g if gpus is None else gpus
        log.info("normalizing utilization by peak bound resources (%d cores, %d gpus)", cores, gpus)
    gpus = gpus or 0

    if ns.metric == "all":
        paths = export(events, out, run_id, total_cores=cores, total_gpus=gpus,
                       window=ns.window, resolution=ns.resolution, figures=not ns.no_figures)
        _print_json(build_summary(events, run_id=run_id, total_cores=cores,
                                  total_gpus=gpus, window=ns.window))
        for name in sorted(paths):
            print(f"  {name}: {paths[name]}", file=sys.stderr)
        return 0
    if ns.metric == "throughput":
        _print_json(throughput(events))
        return 0
    if ns.metric == "decomp":
        _print_json(runtime_decomposition(events))
        return 0

    out.mkdir(parents=True, exist_ok=True)
    if ns.metric == "hw":
        series = {"hw": heterogeneity_width(events, resolution=ns.resolution)}
    elif ns.metric == "arr":
        series = {"arr": action_realization_rate(events, window=ns.window,
                                                 resolution=ns.resolution)}
    else:
        util = utilization(events, cores, gpus, resolution=ns.resolution)
        series = {"core_util": util["core_util"], "gpu_util": util["gpu_util"]}
    for name, ts in series.items():
        path = out / f"{name}_{run_id}.csv"
        ts.to_csv(path)
        print(f"{name}: peak {ts.peak()} mean {ts.mean():.6f} -> {path}")
        if not ns.no_figures:
            from . import figures as figmod

            figmod.render_timeseries(ts, f"{name} ({run_id})", name,
                                     out / f"{name}_{run_id}.png")
    return 0


def _cmd_replay(ns: argparse.Namespace) -> int:
    events = EventLog.read_jsonl(ns.events)
    states = replay_states(events)
    counts: dict[str, int] = {}
    for st in states.values():
        counts[st.value] = counts.get(st.value, 0) + 1
    print(f"replayed {len(events)} events, {len(states)} tasks")
    for key in sorted(counts):
        print(f"  {key}: {counts[key]}")
    return 0


_COMMANDS = {"gen": _cmd_gen, "run": _cmd_run, "analyze": _cmd_analyze, "replay": _cmd_replay}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("RHL_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    ns = build_parser().parse_args(argv)
    try:
        return _COMMANDS[ns.command](ns)
    except (ParseError, CampaignValidationError, MalformedLog, IllegalTransition) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OrchestratorError, BackendError, StoreError, ServiceError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

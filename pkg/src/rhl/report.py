"""Turn an event log into a run report on disk.

An export writes, into one directory and keyed by run id:
  events_<id>.jsonl          the raw event log
  report_<id>.json           summary metrics, deterministic serialization
  <metric>_<id>.csv          time series (hw, arr, decision_rate, core_util, gpu_util)
  <metric>_<id>.png          the same series rendered, plus decomposition_<id>.png

Summaries contain no wall-clock readings, so two runs producing equal
logs export byte-identical JSON/CSV artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

from .events import ENTITY_REQUEST, ENTITY_STORE, EV_DECISION, EV_GET, EV_PUT, EV_REQUEST_SENT, EventLog
from .metrics import (
    DEFAULT_RESOLUTION,
    action_realization_rate,
    coupling_lag,
    decision_rate,
    heterogeneity_width,
    log_span,
    runtime_decomposition,
    task_intervals,
    throughput,
    utilization,
)


def peak_bound_resources(log: EventLog) -> tuple[int, int]:
    """Max cores and gpus ever bound at once; a lower bound on capacity.

    Used to normalize utilization when analyzing a bare log with no
    campaign at hand.
    """
    edges: list[tuple[float, int, int]] = []
    for iv in task_intervals(log).values():
        if iv.running is None or iv.terminal is None:
            continue
        cores = int(iv.running_attrs.get("cores", 0))
        gpus = int(iv.running_attrs.get("gpus", 0))
        edges.append((iv.running, cores, gpus))
        edges.append((iv.terminal, -cores, -gpus))
    edges.sort(key=lambda e: e[0])
    cores = gpus = peak_c = peak_g = 0
    for _, dc, dg in edges:
        cores += dc
        gpus += dg
        peak_c = max(peak_c, cores)
        peak_g = max(peak_g, gpus)
    return peak_c, peak_g


def _count(log: EventLog, entity: str, event: str) -> int:
    return sum(1 for ev in log if ev.entity == entity and ev.event == event)


def build_summary(
    log: EventLog,
    *,
    run_id: str = "",
    total_cores: int | None = None,
    total_gpus: int | None = None,
    window: float = 1.0,
    final_states: dict | None = None,
    rejected_spawns: int = 0,
) -> dict:
    """Aggregate every headline metric into one JSON-serializable dict."""
    if total_cores is None:
        total_cores, inferred_gpus = peak_bound_resources(log)
        if total_gpus is None:
            total_gpus = inferred_gpus
    if total_gpus is None:
        total_gpus = 0

    hw = heterogeneity_width(log)
    util = utilization(log, total_cores, total_gpus)
    lag = coupling_lag(log)
    thr = throughput(log)
    decomp = runtime_decomposition(log)

    states: dict[str, int] = {}
    for state in (final_states or {}).values():
        key = getattr(state, "value", state)
        states[key] = states.get(key, 0) + 1

    summary = {
        "run_id": run_id,
        "span": list(log_span(log)) if len(log) else [0.0, 0.0],
        "tasks": {"final_states": dict(sorted(states.items())), "rejected_spawns": rejected_spawns},
        "throughput": thr,
        "decomposition": decomp,
        "heterogeneity": {"peak": hw.peak(), "mean": round(hw.mean(), 9)},
        "utilization": {
            "total_cores": total_cores,
            "total_gpus": total_gpus,
            "peak_core_util": round(util["core_util"].peak(), 9),
            "mean_core_util": round(util["core_util"].mean(), 9),
            "peak_gpu_util": round(util["gpu_util"].peak(), 9),
            "mean_gpu_util": round(util["gpu_util"].mean(), 9),
        },
        "requests": {
            "sent": _count(log, ENTITY_REQUEST, EV_REQUEST_SENT),
            "decisions": _count(log, ENTITY_REQUEST, EV_DECISION),
        },
        "coupling": {
            "count": lag.count,
            "max_lag": lag.max_lag,
            "mean_lag": round(lag.mean_lag, 9),
            "unmatched": len(lag.unmatched),
        },
        "store": {
            "puts": _count(log, ENTITY_STORE, EV_PUT),
            "gets": _count(log, ENTITY_STORE, EV_GET),
        },
        "window": window,
    }
    return summary


def export(
    log: EventLog,
    out_dir: str | Path,
    run_id: str,
    *,
    total_cores: int | None = None,
    total_gpus: int | None = None,
    window: float = 1.0,
    resolution: float = DEFAULT_RESOLUTION,
    figures: bool = True,
    summary: dict | None = None,
) -> dict[str, Path]:
    """Write every artifact for one run; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    paths["events"] = out / f"events_{run_id}.jsonl"
    log.write_jsonl(paths["events"])

    if summary is None:
        summary = build_summary(
            log, run_id=run_id, total_cores=total_cores, total_gpus=total_gpus, window=window
        )
    paths["report"] = out / f"report_{run_id}.json"
    paths["report"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    if total_cores is None:
        total_cores = summary["utilization"]["total_cores"]
        total_gpus = summary["utilization"]["total_gpus"]
    util = utilization(log, total_cores, total_gpus or 0, resolution=resolution)
    series = {
        "hw": heterogeneity_width(log, resolution=resolution),
        "arr": action_realization_rate(log, window=window, resolution=resolution),
        "decision_rate": decision_rate(log, window=window, resolution=resolution),
        "core_util": util["core_util"],
        "gpu_util": util["gpu_util"],
    }
    for name, ts in series.items():
        paths[name] = out / f"{name}_{run_id}.csv"
        ts.to_csv(paths[name])

    if figures:
        from . import figures as figmod  # defers the matplotlib import

        labels = {
            "hw": "distinct task types executing",
            "arr": "tasks started / s",
            "decision_rate": "decisions / s",
            "core_util": "core utilization",
            "gpu_util": "gpu utilization",
        }
        for name, ts in series.items():
            paths[f"{name}_png"] = figmod.render_timeseries(
                ts, f"{name} ({run_id})", labels[name], out / f"{name}_{run_id}.png"
            )
        paths["decomposition_png"] = figmod.render_decomposition(
            summary["decomposition"], out / f"decomposition_{run_id}.png"
        )
    return paths


def export_run(result, out_dir: str | Path, *, figures: bool = True,
               resolution: float = DEFAULT_RESOLUTION) -> dict[str, Path]:
    """Export straight from an orchestrator RunResult."""
    campaign = result.campaign
    summary = build_summary(
        result.log,
        run_id=result.run_id,
        total_cores=campaign.resources.total_cores,
        total_gpus=campaign.resources.total_gpus,
        window=campaign.policy.rate_window,
        final_states=result.final_states,
        rejected_spawns=result.rejected_spawns,
    )
    return export(
        result.log,
        out_dir,
        result.run_id,
        total_cores=campaign.resources.total_cores,
        total_gpus=campaign.resources.total_gpus,
        window=campaign.policy.rate_window,
        resolution=resolution,
        figures=figures,
        summary=summary,
    )

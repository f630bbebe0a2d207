"""Registry of in-process functions runnable as Function tasks.

A registered function takes the RuntimeContext first, then the task's
payload args as keywords. Whatever dict it returns is merged into the
task's Done event attrs.
"""

from __future__ import annotations

import time
from typing import Callable

REGISTRY: dict[str, Callable] = {}


def register(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        return fn
    return deco


@register("noop")
def noop(ctx, **kwargs):
    return {}


@register("sleep")
def sleep(ctx, seconds: float = 0.0, **kwargs):
    time.sleep(seconds)
    return {"compute_s": seconds}


@register("spin")
def spin(ctx, seconds: float = 0.01, **kwargs):
    # burns CPU instead of blocking, for utilization experiments
    t0 = time.perf_counter()
    x = 0
    while time.perf_counter() - t0 < seconds:
        x += 1
    return {"compute_s": time.perf_counter() - t0}


@register("fail")
def fail(ctx, message: str = "deliberate failure", **kwargs):
    raise RuntimeError(message)


@register("echo")
def echo(ctx, **kwargs):
    return {"echo": kwargs}


@register("agent_loop")
def agent_loop(
    ctx,
    agent: str = "agent",
    duration: float = 10.0,
    base_interval: float = 0.2,
    feedback: bool = True,
    backlog_threshold: int = 5,
    service: str = "llm",
    prompt_tokens: int = 256,
    generate_tokens: int = 64,
    task_duration: float = 0.08,
    task_partition: str | None = None,
    task_function: str = "sleep",
    **kwargs,
):
    """Decision loop of one agent.

    Each iteration asks the inference service for a "plan", records a
    Decision event, and submits one follow-up task. While the agent's
    own backlog of submitted-but-not-started tasks exceeds the
    threshold, the decision interval doubles; it resets as soon as the
    backlog drains below it.
    """
    from .events import ENTITY_REQUEST, EV_DECISION
    from .model import TaskCategory, TaskDescription

    spawned: list[str] = []
    n = 0
    t_start = ctx.now()
    while ctx.now() - t_start < duration:
        backlog = ctx.extras["backlog"](spawned) if "backlog" in ctx.extras else 0
        interval = base_interval * 2 if (feedback and backlog > backlog_threshold) else base_interval

        req_id = f"{agent}-r{n}"
        child_id = f"{agent}-t{n}"
        resp = ctx.infer(
            service,
            {"id": req_id, "prompt_tokens": prompt_tokens, "generate_tokens": generate_tokens},
        )
        if resp is None:
            break  # service gone, stop deciding
        ctx.emit_event(
            ENTITY_REQUEST,
            req_id,
            EV_DECISION,
            {"agent": agent, "spawned_task": child_id, "backlog": backlog},
        )
        accepted = ctx.spawn_task(
            TaskDescription(
                id=child_id,
                category=TaskCategory.FUNCTION,
                partition_hint=task_partition,
                payload={"function": task_function, "args": {"seconds": task_duration}},
            )
        )
        if accepted:
            spawned.append(child_id)
        n += 1
        time.sleep(interval)
    return {"decisions": n}

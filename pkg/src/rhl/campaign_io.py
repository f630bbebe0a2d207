"""Campaign file format: strict JSON with a published schema.

Parsing is strict (unknown fields are rejected, with the offending
path named) and total: a file that parses and validates yields a
frozen Campaign, and serialize/parse round-trips exactly. The
serialized form materializes every default so two semantically equal
campaigns produce byte-identical files.
"""

from __future__ import annotations

import importlib.resources
import json
from functools import lru_cache

import jsonschema

from .model import (
    ALL_CATEGORIES,
    Campaign,
    ExecutionPolicy,
    NodeSpec,
    PartitionPolicy,
    ResourceDescription,
    TaskDescription,
    validate_campaign,
)


class ParseError(ValueError):
    """The file is not a campaign: syntax error or schema violation."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


@lru_cache(maxsize=1)
def _schema() -> dict:
    ref = importlib.resources.files("rhl.schema").joinpath("campaign.schema.json")
    return json.loads(ref.read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def _validator() -> jsonschema.Validator:
    schema = _schema()
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def campaign_from_dict(raw: dict, source: str = "<dict>") -> Campaign:
    errors = sorted(_validator().iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        best = jsonschema.exceptions.best_match(errors)
        raise ParseError(f"{best.json_path}: {best.message}", path=source)

    resources = ResourceDescription(
        nodes=tuple(
            NodeSpec(name=n["name"], cores=n["cores"], gpus=n.get("gpus", 0))
            for n in raw["resources"]["nodes"]
        )
    )
    pol = raw.get("policy", {})
    policy = ExecutionPolicy(
        partitions=tuple(
            PartitionPolicy(
                name=p["name"],
                nodes=tuple(p["nodes"]),
                backend=p.get("backend", "local"),
                categories=tuple(p["categories"]) if "categories" in p else ALL_CATEGORIES,
            )
            for p in pol.get("partitions", [])
        ),
        oversubscription_factor=pol.get("oversubscription_factor", 2.0),
        scheduling=pol.get("scheduling", "Backfill"),
        routing=pol.get("routing", "RoundRobin"),
        service_ready_timeout=pol.get("service_ready_timeout", 30.0),
        rate_window=pol.get("rate_window", 1.0),
    )
    tasks = [
        TaskDescription(
            id=t["id"],
            category=t["category"],
            ranks=t.get("ranks", 1),
            cores_per_rank=t.get("cores_per_rank", 1),
            gpus_per_rank=t.get("gpus_per_rank", 0),
            dependencies=tuple(t.get("dependencies", [])),
            estimated_input_tokens=t.get("estimated_input_tokens", 0),
            partition_hint=t.get("partition_hint"),
            expected_duration=t.get("expected_duration"),
            payload=t.get("payload", {}),
        )
        for t in raw["tasks"]
    ]
    return validate_campaign(
        tasks,
        resources,
        policy,
        seed=raw.get("seed", 0),
        store=raw.get("store", "memory"),
    )


def parse_campaign(path) -> Campaign:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}", path=str(path)) from exc
    if not isinstance(raw, dict):
        raise ParseError("top level is not an object", path=str(path))
    return campaign_from_dict(raw, source=str(path))


def campaign_to_dict(campaign: Campaign) -> dict:
    return {
        "seed": campaign.seed,
        "store": campaign.store,
        "resources": {
            "nodes": [
                {"name": n.name, "cores": n.cores, "gpus": n.gpus}
                for n in campaign.resources.nodes
            ]
        },
        "policy": {
            "partitions": [
                {
                    "name": p.name,
                    "nodes": list(p.nodes),
                    "backend": p.backend,
                    "categories": [c.value for c in p.categories],
                }
                for p in campaign.policy.partitions
            ],
            "oversubscription_factor": campaign.policy.oversubscription_factor,
            "scheduling": campaign.policy.scheduling,
            "routing": campaign.policy.routing,
            "service_ready_timeout": campaign.policy.service_ready_timeout,
            "rate_window": campaign.policy.rate_window,
        },
        "tasks": [
            {
                "id": t.id,
                "category": t.category.value,
                "ranks": t.ranks,
                "cores_per_rank": t.cores_per_rank,
                "gpus_per_rank": t.gpus_per_rank,
                "dependencies": list(t.dependencies),
                "estimated_input_tokens": t.estimated_input_tokens,
                "partition_hint": t.partition_hint,
                "expected_duration": t.expected_duration,
                "payload": dict(t.payload),
            }
            for t in campaign.tasks.values()
        ],
    }


def campaign_to_json(campaign: Campaign) -> str:
    return json.dumps(campaign_to_dict(campaign), indent=2, sort_keys=True) + "\n"


def serialize_campaign(campaign: Campaign, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(campaign_to_json(campaign))

"""Campaign file format: strict parsing, exact round-trips.

The serialized form materializes every default, so round-tripping any
campaign must reproduce the same bytes. Rejection paths must name the
offending location, because users debug campaign files from these
messages alone.
"""

import json

import pytest

from rhl.campaign_io import (
    ParseError,
    campaign_from_dict,
    campaign_to_dict,
    campaign_to_json,
    parse_campaign,
    serialize_campaign,
)
from rhl.model import CampaignValidationError, TaskCategory
from rhl import workloads


def minimal_raw() -> dict:
    return {
        "resources": {"nodes": [{"name": "n0", "cores": 4}]},
        "tasks": [
            {"id": "t0", "category": "Executable", "payload": {"command": "/bin/true"}}
        ],
    }


class TestParsing:
    def test_minimal_campaign_gets_all_defaults(self):
        c = campaign_from_dict(minimal_raw())
        assert c.seed == 0
        assert c.store == "memory"
        assert c.resources.nodes[0].gpus == 0
        assert c.policy.partitions == ()
        assert c.policy.scheduling == "Backfill"
        assert c.policy.routing == "RoundRobin"
        assert c.policy.oversubscription_factor == 2.0
        t = c.tasks["t0"]
        assert t.category is TaskCategory.EXECUTABLE
        assert t.ranks == 1 and t.cores_per_rank == 1 and t.gpus_per_rank == 0
        assert t.dependencies == ()
        assert t.expected_duration is None

    def test_parse_file_equals_parse_dict(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(minimal_raw()))
        assert campaign_to_json(parse_campaign(path)) == campaign_to_json(
            campaign_from_dict(minimal_raw())
        )

    def test_syntax_error_reports_line_and_column(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "resources": }\n')
        with pytest.raises(ParseError) as err:
            parse_campaign(path)
        assert "line 2" in str(err.value)
        assert "column" in str(err.value)
        assert str(path) in str(err.value)
        assert err.value.path == str(path)

    def test_missing_file_is_a_parse_error(self, tmp_path):
        with pytest.raises(ParseError):
            parse_campaign(tmp_path / "nope.json")

    def test_non_object_top_level_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(ParseError) as err:
            parse_campaign(path)
        assert "top level" in str(err.value)


class TestSchemaRejections:
    @pytest.mark.parametrize(
        "mutate, needle",
        [
            (lambda r: r.update(extra=1), "extra"),
            (lambda r: r["tasks"][0].update(color="red"), "color"),
            (lambda r: r["tasks"][0].pop("id"), "id"),
            (lambda r: r["tasks"][0].update(category="Job"), "Job"),
            (lambda r: r["tasks"][0].update(ranks=0), "ranks"),
            (lambda r: r["resources"]["nodes"][0].update(cores=0), "cores"),
            (lambda r: r["resources"].update(nodes=[]), "nodes"),
            (lambda r: r.update(policy={"scheduling": "Priority"}), "Priority"),
            (lambda r: r.update(policy={"oversubscription_factor": 0.5}), "oversubscription"),
            (lambda r: r.update(store="redis"), "redis"),
            (lambda r: r["tasks"][0].update(payload={}), "command"),
            (
                lambda r: r["tasks"][0].update(
                    category="Coupled", payload={"role": "producer"}
                ),
                "key",
            ),
        ],
    )
    def test_rejects_and_names_the_problem(self, mutate, needle):
        raw = minimal_raw()
        mutate(raw)
        with pytest.raises(ParseError) as err:
            campaign_from_dict(raw)
        assert needle in str(err.value)

    def test_message_carries_json_path(self):
        raw = minimal_raw()
        raw["tasks"][0]["ranks"] = 0
        with pytest.raises(ParseError) as err:
            campaign_from_dict(raw)
        assert "$.tasks[0]" in str(err.value)

    def test_semantic_errors_are_validation_not_parse(self):
        raw = minimal_raw()
        raw["tasks"] = [
            {"id": "a", "category": "Function", "dependencies": ["b"],
             "payload": {"function": "noop"}},
            {"id": "b", "category": "Function", "dependencies": ["a"],
             "payload": {"function": "noop"}},
        ]
        with pytest.raises(CampaignValidationError):
            campaign_from_dict(raw)


class TestRoundTrip:
    GENERATORS = [
        lambda: workloads.gen_noop(tasks=20, cores_per_node=8),
        lambda: workloads.gen_hetero(),
        lambda: workloads.gen_inference(clients=2, prompts=10),
        lambda: workloads.gen_coupled(pairs=5),
        lambda: workloads.gen_agentic(agents=3, duration=2.0),
    ]

    @pytest.mark.parametrize("gen", GENERATORS, ids=["noop", "hetero", "inference", "coupled", "agentic"])
    def test_generator_roundtrips_byte_identically(self, gen):
        c = gen()
        text = campaign_to_json(c)
        again = campaign_from_dict(json.loads(text))
        assert campaign_to_json(again) == text

    def test_serialize_then_parse_file(self, tmp_path):
        c = workloads.gen_noop(tasks=5, cores_per_node=4)
        path = tmp_path / "campaign.json"
        serialize_campaign(c, path)
        text = path.read_text()
        assert text.endswith("\n")
        assert campaign_to_json(parse_campaign(path)) == text

    def test_json_form_is_canonical(self):
        c = workloads.gen_noop(tasks=3, cores_per_node=4)
        a = campaign_to_json(c)
        b = campaign_to_json(workloads.gen_noop(tasks=3, cores_per_node=4))
        assert a == b
        raw = json.loads(a)
        assert list(raw) == sorted(raw)  # sort_keys at every level
        assert raw["tasks"][0]["ranks"] == 1  # defaults materialized

    def test_to_dict_covers_every_field(self):
        c = workloads.gen_inference(clients=2, prompts=4)
        raw = campaign_to_dict(c)
        task_keys = set(raw["tasks"][0])
        assert task_keys == {
            "id", "category", "ranks", "cores_per_rank", "gpus_per_rank",
            "dependencies", "estimated_input_tokens", "partition_hint",
            "expected_duration", "payload",
        }
        policy_keys = set(raw["policy"])
        assert policy_keys == {
            "partitions", "oversubscription_factor", "scheduling", "routing",
            "service_ready_timeout", "rate_window",
        }

"""Harness: configuration, dataset ingest, run store, pipeline stages, CLI."""

import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from mavlab.backend import ChatBackend, ChatResponse, NetworkError, RecordBackend, ReplayBackend
from mavlab.cli import main as cli_main
from mavlab.core import Domain, DomainTag, ParseStatus, Split
from mavlab.harness.config import ConfigError, RunConfig
from mavlab.harness.datasets import (
    ParseError,
    SplitTooLarge,
    convert_humaneval_records,
    convert_math_records,
    convert_mmlu_pro_records,
    ingest_dataset,
    read_wire_records,
    write_wire_records,
)
from mavlab.harness.report import (
    render_accuracy_csv,
    render_accuracy_table,
    render_budget_csv,
    render_scaling_m_csv,
    render_scaling_n_csv,
)
from mavlab.harness.stages import (
    StageError,
    StubRewardProvider,
    apply_policies,
    build_pool,
    generate_candidates,
    load_questions,
    make_backend,
    make_reward_provider,
    resolve_subset,
    run_pipeline,
    stage_generate,
    stage_ingest,
    verify_candidates,
)
from mavlab.harness.store import (
    BudgetLedger,
    MissingStage,
    RunStore,
    StoreError,
    canonical_json,
)
from mavlab.simlab import SimBackend, SimProfile, SimRewardProvider, synthetic_questions

MATH_TAG = DomainTag(kind=Domain.MATH, dataset="toy")


# ---------------------------------------------------------------------------
# Configuration.
# ---------------------------------------------------------------------------


class TestRunConfig:
    def test_from_mapping_happy_path(self):
        config = RunConfig.from_mapping(
            {
                "dataset": "data.jsonl",
                "n": 4,
                "policies": ["mav", "pass1"],
                "sim": {"p_correct": 0.5},
            }
        )
        assert config.dataset == "data.jsonl"
        assert config.n == 4
        assert config.policies == ("mav", "pass1")
        assert isinstance(config.sim, SimProfile)
        assert config.sim.p_correct == 0.5

    def test_unknown_keys_are_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys: banana"):
            RunConfig.from_mapping({"dataset": "d.jsonl", "banana": 1})

    def test_dataset_is_required(self):
        with pytest.raises(ConfigError, match="dataset"):
            RunConfig.from_mapping({"n": 4})

    @pytest.mark.parametrize(
        ("kwargs", "match"),
        [
            ({"n": 0}, "n must be at least 1"),
            ({"policies": ()}, "at least one policy"),
            ({"policies": ("mav", "vibes")}, "unknown policy 'vibes'"),
            ({"backend": "telepathy"}, "unknown backend"),
            ({"backend": "record"}, "needs a cassette"),
            ({"backend": "replay"}, "needs a cassette"),
            ({"backend": "live"}, "needs an endpoint"),
            ({"domain": "poetry"}, "unknown domain"),
            ({"val_size": -1}, "non-negative"),
            ({"test_size": -2}, "non-negative"),
        ],
    )
    def test_validation_errors(self, kwargs, match):
        with pytest.raises(ConfigError, match=match):
            RunConfig(dataset="d.jsonl", **kwargs)

    def test_bad_sim_profile_is_a_config_error(self):
        with pytest.raises(ConfigError, match="bad sim profile"):
            RunConfig.from_mapping({"dataset": "d.jsonl", "sim": {"p_correct": 1.5}})

    def test_from_yaml_with_overrides(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(
            yaml.safe_dump({"dataset": "d.jsonl", "n": 8, "seed": 3}), encoding="utf-8"
        )
        config = RunConfig.from_yaml(path, {"n": 2, "seed": None, "out_dir": "elsewhere"})
        assert config.n == 2  # override wins
        assert config.seed == 3  # None overrides are skipped
        assert config.out_dir == "elsewhere"

    def test_from_yaml_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            RunConfig.from_yaml(tmp_path / "nope.yaml")

    def test_from_yaml_rejects_non_mapping(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- just\n- a\n- list\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="must be a mapping"):
            RunConfig.from_yaml(path)

    def test_snapshot_never_contains_credential_values(self, monkeypatch):
        secret = "sk-super-secret-value-1234"
        monkeypatch.setenv("MY_PROVIDER_KEY", secret)
        config = RunConfig(
            dataset="d.jsonl",
            backend="live",
            endpoint="https://api.example.test/v1",
            api_key_env="MY_PROVIDER_KEY",
        )
        rendered = canonical_json(config.snapshot())
        assert "MY_PROVIDER_KEY" in rendered  # the variable *name* is recorded
        assert secret not in rendered  # the value never is

    def test_snapshot_round_trips_through_from_mapping(self):
        config = RunConfig(dataset="d.jsonl", n=4, policies=("mav", "rm"), rm_provider="sim")
        clone = RunConfig.from_mapping(json.loads(canonical_json(config.snapshot())))
        assert clone == config

    @pytest.mark.parametrize(
        ("n", "expected"),
        [(1, (1,)), (2, (1, 2)), (16, (1, 2, 4, 8, 16)), (12, (1, 2, 4, 8, 12))],
    )
    def test_default_n_values_doubles_up_to_n(self, n, expected):
        assert RunConfig(dataset="d.jsonl", n=n).default_n_values() == expected

    def test_explicit_n_values_win(self):
        config = RunConfig(dataset="d.jsonl", n=16, n_values=(1, 5, 16))
        assert config.default_n_values() == (1, 5, 16)


# ---------------------------------------------------------------------------
# Dataset ingest and adapters.
# ---------------------------------------------------------------------------


def write_math_file(path: Path, count: int) -> Path:
    rows = [
        {"id": f"q{i}", "question": f"What is {i} + {i}?", "answer": str(2 * i)}
        for i in range(count)
    ]
    write_wire_records(rows, path)
    return path


class TestIngest:
    def test_round_trip_and_split_assignment(self, tmp_path):
        path = write_math_file(tmp_path / "d.jsonl", 10)
        records = ingest_dataset(path, MATH_TAG, (3, 4), seed=7)
        assert len(records) == 7
        assert [r.split for r in records[:3]] == [Split.VALIDATION] * 3
        assert [r.split for r in records[3:]] == [Split.TEST] * 4
        assert len({r.id for r in records}) == 7
        for record in records:
            i = int(record.id[1:])
            assert record.gold.value == str(2 * i)

    def test_same_seed_same_membership(self, tmp_path):
        path = write_math_file(tmp_path / "d.jsonl", 12)
        a = ingest_dataset(path, MATH_TAG, (2, 5), seed=11)
        b = ingest_dataset(path, MATH_TAG, (2, 5), seed=11)
        assert [r.id for r in a] == [r.id for r in b]

    def test_different_seed_different_order(self, tmp_path):
        path = write_math_file(tmp_path / "d.jsonl", 30)
        a = ingest_dataset(path, MATH_TAG, (0, 30), seed=1)
        b = ingest_dataset(path, MATH_TAG, (0, 30), seed=2)
        assert [r.id for r in a] != [r.id for r in b]

    def test_split_too_large(self, tmp_path):
        path = write_math_file(tmp_path / "d.jsonl", 5)
        with pytest.raises(SplitTooLarge, match="4\\+3 questions but the file has 5"):
            ingest_dataset(path, MATH_TAG, (4, 3), seed=0)

    def test_duplicate_id_names_the_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        rows = [
            {"id": "dup", "question": "a?", "answer": "1"},
            {"id": "dup", "question": "b?", "answer": "2"},
        ]
        write_wire_records(rows, path)
        with pytest.raises(ParseError, match="line 2: duplicate question id 'dup'"):
            ingest_dataset(path, MATH_TAG, (0, 1), seed=0)

    def test_invalid_json_names_the_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "question": "x?", "answer": "1"}\n{oops\n', "utf-8")
        with pytest.raises(ParseError, match="line 2: invalid JSON"):
            ingest_dataset(path, MATH_TAG, (0, 1), seed=0)

    def test_missing_field_names_the_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_wire_records([{"id": "a", "question": "x?"}], path)
        with pytest.raises(ParseError, match="line 1: missing field 'answer'"):
            ingest_dataset(path, MATH_TAG, (0, 1), seed=0)

    def test_non_object_line_is_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('["not", "an", "object"]\n', "utf-8")
        with pytest.raises(ParseError, match="line 1: record must be a JSON object"):
            ingest_dataset(path, MATH_TAG, (0, 1), seed=0)

    def test_multiple_choice_requires_options(self, tmp_path):
        tag = DomainTag(kind=Domain.MULTIPLE_CHOICE, dataset="mc")
        path = tmp_path / "d.jsonl"
        write_wire_records([{"id": "a", "question": "x?", "answer": "A"}], path)
        with pytest.raises(ParseError, match="line 1: .*without options"):
            ingest_dataset(path, tag, (0, 1), seed=0)

    def test_option_pairs_must_run_in_letter_order(self, tmp_path):
        tag = DomainTag(kind=Domain.MULTIPLE_CHOICE, dataset="mc")
        path = tmp_path / "d.jsonl"
        row = {
            "id": "a",
            "question": "x?",
            "options": [["B", "first"], ["A", "second"]],
            "answer": "A",
        }
        write_wire_records([row], path)
        with pytest.raises(ParseError, match="letters must run A.. in order"):
            ingest_dataset(path, tag, (0, 1), seed=0)

    def test_plain_string_options_get_letters(self, tmp_path):
        tag = DomainTag(kind=Domain.MULTIPLE_CHOICE, dataset="mc")
        path = tmp_path / "d.jsonl"
        row = {"id": "a", "question": "x?", "options": ["one", "two"], "answer": "B"}
        write_wire_records([row], path)
        (record,) = ingest_dataset(path, tag, (0, 1), seed=0)
        assert record.options == (("A", "one"), ("B", "two"))

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "d.jsonl"
        body = '{"id": "a", "question": "x?", "answer": "1"}\n\n\n'
        path.write_text(body, "utf-8")
        assert len(ingest_dataset(path, MATH_TAG, (0, 1), seed=0)) == 1

    def test_read_wire_records_round_trip(self, tmp_path):
        rows = synthetic_questions(4)
        path = tmp_path / "d.jsonl"
        assert write_wire_records(rows, path) == 4
        assert read_wire_records(path) == rows


class TestAdapters:
    def test_math_adapter_pulls_boxed_answers(self):
        rows = [
            {"problem": "What is 2+2?", "solution": "Add: $4$. The answer is $\\boxed{4}$."},
            {"id": "keep-me", "problem": "Half?", "solution": "\\boxed{\\frac{1}{2}}"},
        ]
        out = convert_math_records(rows)
        assert out[0] == {"id": "math-00000", "question": "What is 2+2?", "answer": "4"}
        assert out[1] == {"id": "keep-me", "question": "Half?", "answer": "\\frac{1}{2}"}

    def test_math_adapter_skips_records_without_a_box(self, caplog):
        rows = [
            {"problem": "No box here", "solution": "just words"},
            {"problem": "Fine", "solution": "$\\boxed{7}$"},
        ]
        with caplog.at_level("WARNING"):
            out = convert_math_records(rows)
        assert len(out) == 1
        assert out[0]["answer"] == "7"
        assert "skipping math record 0" in caplog.text

    def test_mmlu_pro_adapter(self):
        rows = [
            {
                "question_id": 77,
                "question": "Pick one.",
                "options": ["yes", "no"],
                "answer": " b ",
            },
            {"question": "Other.", "options": ["x"], "answer": "A"},
        ]
        out = convert_mmlu_pro_records(rows)
        assert out[0] == {
            "id": "77",
            "question": "Pick one.",
            "options": ["yes", "no"],
            "answer": "B",
        }
        assert out[1]["id"] == "mc-00001"

    def test_humaneval_adapter_appends_check_call(self):
        rows = [
            {
                "task_id": "HumanEval/0",
                "prompt": "def f(x):\n    ...",
                "test": "def check(f):\n    assert f(1) == 1",
                "entry_point": "f",
            },
            {"prompt": "def g():\n    ...", "test": "assert g() is None"},
        ]
        out = convert_humaneval_records(rows)
        assert out[0]["id"] == "HumanEval/0"
        assert out[0]["tests"].endswith("\n\ncheck(f)\n")
        assert out[1] == {
            "id": "code-00001",
            "question": "def g():\n    ...",
            "tests": "assert g() is None",
        }


# ---------------------------------------------------------------------------
# Run store.
# ---------------------------------------------------------------------------


class TestRunStore:
    def test_jsonl_round_trip_and_write_once(self, tmp_path):
        store = RunStore(tmp_path / "run")
        rows = [{"id": "a", "v": 1}, {"id": "b", "v": 2}]
        assert store.write_jsonl("questions", rows) == 2
        assert store.read_jsonl("questions") == rows
        with pytest.raises(StoreError, match="already exists; stages are append-only"):
            store.write_jsonl("questions", rows)

    def test_missing_stage(self, tmp_path):
        store = RunStore(tmp_path / "run")
        with pytest.raises(MissingStage, match="does not exist yet"):
            store.read_jsonl("candidates")
        with pytest.raises(MissingStage, match="does not exist yet"):
            store.read_json("ledger")

    def test_unknown_record_names_are_rejected(self, tmp_path):
        store = RunStore(tmp_path / "run")
        with pytest.raises(StoreError, match="unknown store record"):
            store.path("diary")
        with pytest.raises(StoreError, match="not a stream record"):
            store.write_jsonl("config", [])

    def test_json_summaries_are_rewritable(self, tmp_path):
        store = RunStore(tmp_path / "run")
        store.write_json("ledger", {"generator": 1})
        store.write_json("ledger", {"generator": 2})
        assert store.read_json("ledger") == {"generator": 2}

    def test_corrupt_jsonl_names_the_line(self, tmp_path):
        store = RunStore(tmp_path / "run")
        store.write_jsonl("scores", [{"ok": True}])
        with open(store.path("scores"), "a", encoding="utf-8") as fh:
            fh.write("{nope\n")
        with pytest.raises(StoreError, match="scores.jsonl:2: corrupt record"):
            store.read_jsonl("scores")

    def test_write_report_lands_under_reports(self, tmp_path):
        store = RunStore(tmp_path / "run")
        target = store.write_report("accuracy.csv", "a,b\n1,2\n")
        assert target == store.reports_dir / "accuracy.csv"
        assert target.read_text(encoding="utf-8") == "a,b\n1,2\n"

    def test_manifest_digests_every_file_except_itself(self, tmp_path):
        store = RunStore(tmp_path / "run")
        store.write_jsonl("questions", [{"id": "a"}])
        store.write_json("config", {"n": 1})
        store.write_report("accuracy.csv", "x\n")
        store.update_manifest()
        manifest = store.read_json("manifest")
        assert set(manifest) == {"questions.jsonl", "config.json", "reports/accuracy.csv"}
        assert all(len(digest) == 64 for digest in manifest.values())

    def test_canonical_json_is_sorted_and_compact(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


class TestBudgetLedger:
    def test_arithmetic(self):
        ledger = BudgetLedger()
        ledger.generator += 10
        ledger.add_verifier("v1", 3)
        ledger.add_verifier("v2")
        ledger.add_verifier("v1", 2)
        ledger.scalar += 4
        ledger.retries += 1
        assert ledger.verifier_total == 6
        assert ledger.total == 20

    def test_payload_round_trip(self):
        ledger = BudgetLedger(generator=5, verifiers={"b": 2, "a": 1}, scalar=3, retries=1)
        payload = ledger.to_payload()
        assert payload["total"] == 11
        assert list(payload["verifiers"]) == ["a", "b"]
        clone = BudgetLedger.from_payload(json.loads(canonical_json(payload)))
        assert clone == ledger


# ---------------------------------------------------------------------------
# Pool and subset resolution.
# ---------------------------------------------------------------------------


def sim_config(tmp_path: Path, **kwargs) -> RunConfig:
    defaults = dict(
        dataset=str(tmp_path / "dataset.jsonl"),
        dataset_name="sim-math",
        out_dir=str(tmp_path / "run"),
        n=4,
        val_size=0,
        test_size=6,
        backend="simulate",
        pool="preset:MATH",
        policies=("mav", "cons", "pass1"),
    )
    defaults.update(kwargs)
    return RunConfig(**defaults)


class TestBuildPool:
    def test_preset_is_the_full_pool(self, tmp_path):
        pool = build_pool(sim_config(tmp_path, pool="preset"))
        assert len(pool) == 20
        assert all(column_id == spec.id for column_id, spec in pool)

    def test_preset_label_selects_the_shipped_subset(self, tmp_path):
        pool = build_pool(sim_config(tmp_path, pool="preset:MATH"))
        assert len(pool) == 6

    def test_unknown_preset_label(self, tmp_path):
        with pytest.raises(StageError, match="GRE"):
            build_pool(sim_config(tmp_path, pool="preset:GRE"))

    def test_explicit_entries(self, tmp_path):
        entries = [
            {"base_model": "m1", "aspect": "general_correctness", "strategy": "direct_approval"},
            {
                "base_model": "m2",
                "aspect": "logical_soundness",
                "strategy": "step_by_step",
                "temperature": 0.7,
            },
        ]
        pool = build_pool(sim_config(tmp_path, pool=entries))
        assert [column_id for column_id, _ in pool] == [
            "m1/general_correctness/direct_approval",
            "m2/logical_soundness/step_by_step",
        ]
        assert pool[1][1].sampling.temperature == 0.7

    def test_copies_get_numbered_columns_sharing_one_spec(self, tmp_path):
        entries = [
            {
                "base_model": "m1",
                "aspect": "general_correctness",
                "strategy": "direct_approval",
                "copies": 3,
            }
        ]
        pool = build_pool(sim_config(tmp_path, pool=entries))
        column_ids = [column_id for column_id, _ in pool]
        assert column_ids == [
            "m1/general_correctness/direct_approval#1",
            "m1/general_correctness/direct_approval#2",
            "m1/general_correctness/direct_approval#3",
        ]
        specs = {spec.id for _, spec in pool}
        assert specs == {"m1/general_correctness/direct_approval"}

    @pytest.mark.parametrize(
        ("pool", "match"),
        [
            (["not-a-mapping"], "must be a mapping"),
            ([{"base_model": "m", "aspect": "vibes", "strategy": "step_by_step"}], "entry 0"),
            (
                [
                    {
                        "base_model": "m",
                        "aspect": "general_correctness",
                        "strategy": "direct_approval",
                        "copies": 0,
                    }
                ],
                "copies must be at least 1",
            ),
            ([], "must not be empty"),
            (42, "unrecognized pool specification"),
        ],
    )
    def test_bad_pool_specs(self, tmp_path, pool, match):
        with pytest.raises(StageError, match=match):
            build_pool(sim_config(tmp_path, pool=pool))

    def test_duplicate_columns_are_rejected(self, tmp_path):
        entry = {
            "base_model": "m",
            "aspect": "general_correctness",
            "strategy": "direct_approval",
        }
        with pytest.raises(StageError, match="appears twice"):
            build_pool(sim_config(tmp_path, pool=[entry, dict(entry)]))


class TestResolveSubset:
    POOL_IDS = ("v1", "v2", "v3")

    def test_all_keeps_pool_order(self, tmp_path):
        config = sim_config(tmp_path, subset="all")
        store = RunStore(tmp_path / "run")
        assert resolve_subset(config, store, self.POOL_IDS) == self.POOL_IDS

    def test_explicit_list(self, tmp_path):
        config = sim_config(tmp_path, subset=["v3", "v1"])
        store = RunStore(tmp_path / "run")
        assert resolve_subset(config, store, self.POOL_IDS) == ("v3", "v1")

    def test_engineered_reads_the_stored_report(self, tmp_path):
        config = sim_config(tmp_path, subset="engineered")
        store = RunStore(tmp_path / "run")
        store.write_json("subset_report", {"subset": ["v2"], "mean_accuracy": 1.0})
        assert resolve_subset(config, store, self.POOL_IDS) == ("v2",)

    def test_engineered_without_report_is_a_missing_stage(self, tmp_path):
        config = sim_config(tmp_path, subset="engineered")
        store = RunStore(tmp_path / "run")
        with pytest.raises(MissingStage):
            resolve_subset(config, store, self.POOL_IDS)

    def test_preset_label_subset(self, tmp_path):
        config = sim_config(tmp_path, pool="preset", subset="preset:MATH")
        store = RunStore(tmp_path / "run")
        pool_ids = [column_id for column_id, _ in build_pool(config)]
        subset = resolve_subset(config, store, pool_ids)
        assert len(subset) == 6
        assert set(subset) <= set(pool_ids)

    def test_subset_outside_pool_is_rejected(self, tmp_path):
        config = sim_config(tmp_path, subset=["v1", "ghost"])
        store = RunStore(tmp_path / "run")
        with pytest.raises(StageError, match="outside the pool: ghost"):
            resolve_subset(config, store, self.POOL_IDS)

    def test_unrecognized_subset_spec(self, tmp_path):
        config = sim_config(tmp_path, subset=99)
        store = RunStore(tmp_path / "run")
        with pytest.raises(StageError, match="unrecognized subset"):
            resolve_subset(config, store, self.POOL_IDS)


class TestFactories:
    def test_make_backend_by_kind(self, tmp_path):
        assert isinstance(make_backend(sim_config(tmp_path)), SimBackend)
        (tmp_path / "c.jsonl").write_text("", encoding="utf-8")
        replay = make_backend(
            sim_config(tmp_path, backend="replay", cassette=str(tmp_path / "c.jsonl"))
        )
        assert isinstance(replay, ReplayBackend)
        record = make_backend(
            sim_config(
                tmp_path,
                backend="record",
                record_source="simulate",
                cassette=str(tmp_path / "c2.jsonl"),
            )
        )
        assert isinstance(record, RecordBackend)

    def test_record_with_unknown_source(self, tmp_path):
        config = sim_config(
            tmp_path,
            backend="record",
            record_source="carrier-pigeon",
            cassette=str(tmp_path / "c.jsonl"),
        )
        with pytest.raises(StageError, match="unknown record source"):
            make_backend(config)

    def test_make_reward_provider(self, tmp_path):
        assert isinstance(make_reward_provider(sim_config(tmp_path)), StubRewardProvider)
        assert isinstance(
            make_reward_provider(sim_config(tmp_path, rm_provider="sim")), SimRewardProvider
        )
        with pytest.raises(StageError, match="unknown reward provider"):
            make_reward_provider(sim_config(tmp_path, rm_provider="oracle"))


# ---------------------------------------------------------------------------
# Pure stage functions: generation and verification.
# ---------------------------------------------------------------------------


def ingest_sim_questions(tmp_path: Path, config: RunConfig, count: int) -> RunStore:
    write_wire_records(synthetic_questions(count), config.dataset)
    config.test_size = count - config.val_size
    store = RunStore(config.out_dir)
    stage_ingest(store, config)
    return store


class ScriptedBackend(ChatBackend):
    """Returns canned texts (or raises) keyed by how often a digest was seen."""

    def __init__(self, script):
        super().__init__()
        self.script = script  # rep -> text | Exception
        self.calls = 0

    def _execute(self, request, rep):
        self.calls += 1
        action = self.script[min(rep, len(self.script) - 1)]
        if isinstance(action, Exception):
            raise action
        return ChatResponse(text=action)


class TestGenerateCandidates:
    def test_simulated_generation_yields_n_indexed_candidates(self, tmp_path):
        config = sim_config(tmp_path, n=3)
        store = ingest_sim_questions(tmp_path, config, 2)
        questions = load_questions(store)
        backend = SimBackend(config.sim)
        candidates = generate_candidates(questions, "sim-generator", 3, backend)
        assert len(candidates) == 6
        by_question = {}
        for candidate in candidates:
            by_question.setdefault(candidate.question_id, []).append(candidate.index)
            assert candidate.extracted.is_found
        assert all(indexes == [0, 1, 2] for indexes in by_question.values())
        assert backend.requests_issued == 6

    def test_n_must_be_positive(self, tmp_path):
        config = sim_config(tmp_path)
        store = ingest_sim_questions(tmp_path, config, 1)
        with pytest.raises(ValueError, match="at least 1"):
            generate_candidates(load_questions(store), "g", 0, SimBackend(config.sim))

    def test_backend_failure_is_a_hard_error(self, tmp_path):
        config = sim_config(tmp_path)
        store = ingest_sim_questions(tmp_path, config, 1)
        backend = ScriptedBackend([NetworkError("offline")])
        with pytest.raises(StageError, match="generation failed for question sim-0000"):
            generate_candidates(load_questions(store), "g", 2, backend)


def verification_fixture(tmp_path, config, question_count=1, n=2):
    store = ingest_sim_questions(tmp_path, config, question_count)
    questions = load_questions(store)
    backend = SimBackend(config.sim)
    candidates = generate_candidates(questions, "sim-generator", n, backend)
    by_question = {}
    for candidate in candidates:
        by_question.setdefault(candidate.question_id, []).append(candidate)
    return questions, by_question


class TestVerifyCandidates:
    def pool(self, config):
        return build_pool(config)[:2]

    def test_happy_path_counts_one_query_per_cell(self, tmp_path):
        config = sim_config(tmp_path, n=2)
        questions, by_question = verification_fixture(tmp_path, config, 2, 2)
        pool = self.pool(config)
        backend = SimBackend(config.sim)
        outcome = verify_candidates(questions, by_question, pool, backend)
        assert outcome.retries == 0
        assert all(count == 4 for count in outcome.query_counts.values())
        for question in questions:
            matrix = outcome.matrices[question.id]
            assert matrix.n == 2
            assert matrix.verifier_ids == tuple(column_id for column_id, _ in pool)
            approvals = outcome.approvals[question.id]
            assert len(approvals) == 4
            assert all(a.parse_status is ParseStatus.PARSED for a in approvals)

    def test_unparseable_then_parsed_is_retried_once(self, tmp_path):
        config = sim_config(tmp_path, n=1)
        questions, by_question = verification_fixture(tmp_path, config, 1, 1)
        pool = self.pool(config)[:1]
        backend = ScriptedBackend(["mumbling", "FINAL VERIFICATION ANSWER: True"])
        outcome = verify_candidates(questions, by_question, pool, backend)
        (approval,) = outcome.approvals[questions[0].id]
        assert approval.verdict is True
        assert approval.parse_status is ParseStatus.RETRIED_THEN_PARSED
        assert outcome.retries == 1
        assert outcome.query_counts[pool[0][0]] == 2
        assert backend.calls == 2

    def test_always_unparseable_becomes_a_false_verdict(self, tmp_path):
        config = sim_config(tmp_path, n=1)
        questions, by_question = verification_fixture(tmp_path, config, 1, 1)
        pool = self.pool(config)[:1]
        backend = ScriptedBackend(["static", "more static"])
        outcome = verify_candidates(questions, by_question, pool, backend)
        (approval,) = outcome.approvals[questions[0].id]
        assert approval.verdict is False
        assert approval.parse_status is ParseStatus.UNPARSEABLE
        assert outcome.retries == 1
        assert outcome.query_counts[pool[0][0]] == 2

    def test_backend_error_then_success_is_retried(self, tmp_path):
        config = sim_config(tmp_path, n=1)
        questions, by_question = verification_fixture(tmp_path, config, 1, 1)
        pool = self.pool(config)[:1]
        backend = ScriptedBackend(
            [NetworkError("blip"), "FINAL VERIFICATION ANSWER: False"]
        )
        outcome = verify_candidates(questions, by_question, pool, backend)
        (approval,) = outcome.approvals[questions[0].id]
        assert approval.verdict is False
        assert approval.parse_status is ParseStatus.RETRIED_THEN_PARSED

    def test_empty_pool_is_rejected(self, tmp_path):
        config = sim_config(tmp_path, n=1)
        questions, by_question = verification_fixture(tmp_path, config, 1, 1)
        with pytest.raises(StageError, match="pool must not be empty"):
            verify_candidates(questions, by_question, (), SimBackend(config.sim))


class TestApplyPolicies:
    def test_rm_without_scores(self, math_question, math_candidate):
        from mavlab.core import ApprovalMatrix

        matrix = ApprovalMatrix(
            question_id=math_question.id, verifier_ids=("v",), entries=((1,),)
        )
        with pytest.raises(StageError, match="needs reward scores"):
            apply_policies(math_question, [math_candidate], matrix, ["rm"])

    def test_unknown_policy(self, math_question, math_candidate):
        from mavlab.core import ApprovalMatrix

        matrix = ApprovalMatrix(
            question_id=math_question.id, verifier_ids=("v",), entries=((1,),)
        )
        with pytest.raises(StageError, match="unknown policy 'destiny'"):
            apply_policies(math_question, [math_candidate], matrix, ["destiny"])


# ---------------------------------------------------------------------------
# Stage idempotency and the full pipeline.
# ---------------------------------------------------------------------------


class TestPipeline:
    def test_stage_generate_skips_when_output_exists(self, tmp_path):
        config = sim_config(tmp_path, n=2)
        store = ingest_sim_questions(tmp_path, config, 2)
        backend = SimBackend(config.sim)
        count = stage_generate(store, config, backend)
        assert count == 4
        untouched = ScriptedBackend(["never used"])
        assert stage_generate(store, config, untouched) == 4
        assert untouched.calls == 0

    def test_run_pipeline_products_and_ledger_conservation(self, tmp_path):
        config = sim_config(
            tmp_path, n=2, val_size=2, test_size=4, policies=("mav", "cons", "rm", "pass1"),
            rm_provider="sim",
        )
        write_wire_records(synthetic_questions(6), config.dataset)
        backend = SimBackend(config.sim)
        store = run_pipeline(config, backend)

        for name in ("questions", "candidates", "approvals", "scores", "selections"):
            assert store.has(name), name
        for name in ("config", "ledger", "subset_report", "scaling_m", "scaling_n", "manifest"):
            assert store.has(name), name
        for report in ("accuracy.csv", "accuracy.txt", "scaling_m.csv", "scaling_n.csv", "budget.csv"):
            assert (store.reports_dir / report).is_file(), report

        ledger = BudgetLedger.from_payload(store.read_json("ledger"))
        assert ledger.generator == 6 * 2
        assert ledger.verifier_total >= 6 * 2 * 6  # retries only ever add
        assert ledger.scalar == 6 * 2
        assert ledger.total - ledger.scalar == backend.requests_issued

        selections = store.read_jsonl("selections")
        assert len(selections) == 6 * 4
        assert {row["policy"] for row in selections} == {"mav", "cons", "rm", "pass1"}

    def test_run_pipeline_is_idempotent(self, tmp_path):
        config = sim_config(tmp_path, n=2, test_size=3)
        write_wire_records(synthetic_questions(3), config.dataset)
        first = SimBackend(config.sim)
        store = run_pipeline(config, first)
        before = {
            name: store.path(name).read_bytes()
            for name in ("questions", "candidates", "approvals", "selections")
        }
        second = SimBackend(config.sim)
        run_pipeline(config, second)
        assert second.requests_issued == 0
        for name, body in before.items():
            assert store.path(name).read_bytes() == body


# ---------------------------------------------------------------------------
# Report rendering.
# ---------------------------------------------------------------------------


class TestReportRendering:
    TALLIES = {"mav": (4, 3), "pass1": (4, 1)}

    def test_accuracy_csv(self):
        text = render_accuracy_csv("gen-a", self.TALLIES, ["mav", "pass1"])
        assert text == (
            "generator,policy,questions,correct,accuracy\n"
            "gen-a,mav,4,3,0.750000\n"
            "gen-a,pass1,4,1,0.250000\n"
        )

    def test_accuracy_csv_handles_zero_questions(self):
        text = render_accuracy_csv("g", {"mav": (0, 0)}, ["mav"])
        assert text.splitlines()[1] == "g,mav,0,0,0.000000"

    def test_accuracy_table_mentions_unscorable_outputs(self):
        text = render_accuracy_table("gen-a", self.TALLIES, ["mav", "pass1"], unscorable=2)
        lines = text.splitlines()
        assert lines[0] == "accuracy by generator and policy (test split, 4 questions)"
        assert lines[2].startswith("generator")
        assert lines[3].startswith("gen-a")
        assert "0.750000" in lines[3] and "0.250000" in lines[3]
        assert lines[-1] == "unscorable candidate outputs counted incorrect: 2"

    def test_accuracy_table_omits_unscorable_line_when_clean(self):
        text = render_accuracy_table("gen-a", self.TALLIES, ["mav"], unscorable=0)
        assert "unscorable" not in text

    def test_scaling_m_csv(self):
        payload = {
            "points": [
                {"m": 0, "mean": 0.5, "p5": 0.5, "p25": 0.5, "p75": 0.5, "p95": 0.5, "combos": 1},
                {"m": 1, "mean": 0.625, "p5": 0.25, "p25": 0.5, "p75": 0.75, "p95": 1.0, "combos": 4},
            ]
        }
        text = render_scaling_m_csv(payload)
        assert text == (
            "m,mean,p5,p25,p75,p95,combos\n"
            "0,0.500000,0.500000,0.500000,0.500000,0.500000,1\n"
            "1,0.625000,0.250000,0.500000,0.750000,1.000000,4\n"
        )

    def scaling_n_payload(self):
        return {
            "policies": ["mav", "pass1"],
            "subset": ["v1", "v2", "v3"],
            "n_values": [1, 2],
            "accuracy": {
                "1": {"mav": 0.5, "pass1": 0.5},
                "2": {"mav": 0.75, "pass1": 0.5},
            },
        }

    def test_scaling_n_csv(self):
        text = render_scaling_n_csv(self.scaling_n_payload())
        assert text == (
            "n,mav,pass1\n"
            "1,0.500000,0.500000\n"
            "2,0.750000,0.500000\n"
        )

    def test_budget_csv_prices_each_policy(self):
        text = render_budget_csv(self.scaling_n_payload(), question_count=10)
        assert text == (
            "policy,n,queries,accuracy\n"
            "mav,1,40,0.500000\n"       # q*n*(1+m) = 10*1*4
            "mav,2,80,0.750000\n"       # 10*2*4
            "pass1,1,10,0.500000\n"     # q
            "pass1,2,10,0.500000\n"
        )


# ---------------------------------------------------------------------------
# Command-line interface.
# ---------------------------------------------------------------------------


def write_run_yaml(tmp_path: Path, **extra) -> Path:
    dataset = tmp_path / "dataset.jsonl"
    write_wire_records(synthetic_questions(6), dataset)
    payload = {
        "dataset": str(dataset),
        "dataset_name": "sim-math",
        "out_dir": str(tmp_path / "run"),
        "n": 2,
        "val_size": 0,
        "test_size": 6,
        "backend": "simulate",
        "pool": "preset:MATH",
        "policies": ["mav", "cons", "pass1"],
    }
    payload.update(extra)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    return path


class TestCli:
    def test_simulate_runs_end_to_end(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            [
                "simulate",
                "--out-dir", str(tmp_path / "demo"),
                "--questions", "6",
                "--n", "4",
                "--seed", "1",
            ],
        )
        assert result.exit_code == 0, result.output
        assert "accuracy by generator and policy" in result.output
        assert (tmp_path / "demo" / "run" / "reports" / "accuracy.csv").is_file()

    def test_simulate_rejects_bad_val_size(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            ["simulate", "--out-dir", str(tmp_path / "d"), "--questions", "3", "--val-size", "3"],
        )
        assert result.exit_code != 0
        assert "validation size" in result.output

    def test_run_honors_set_overrides(self, tmp_path):
        config_path = write_run_yaml(tmp_path)
        runner = CliRunner()
        result = runner.invoke(
            cli_main, ["run", "-c", str(config_path), "--set", "n=3"]
        )
        assert result.exit_code == 0, result.output
        store = RunStore(tmp_path / "run")
        candidates = store.read_jsonl("candidates")
        assert len(candidates) == 6 * 3

    def test_stagewise_chain_matches_run(self, tmp_path):
        config_path = write_run_yaml(tmp_path)
        runner = CliRunner()
        for verb in ("ingest", "generate", "verify", "select", "scale", "report"):
            result = runner.invoke(cli_main, [verb, "-c", str(config_path)])
            assert result.exit_code == 0, f"{verb}: {result.output}"
        store = RunStore(tmp_path / "run")
        assert (store.reports_dir / "accuracy.csv").is_file()
        tallies = store.read_jsonl("selections")
        assert len(tallies) == 6 * 3

    def test_engineer_prints_the_chosen_subset(self, tmp_path):
        config_path = write_run_yaml(tmp_path, val_size=3, test_size=3)
        runner = CliRunner()
        for verb in ("ingest", "generate", "verify"):
            result = runner.invoke(cli_main, [verb, "-c", str(config_path)])
            assert result.exit_code == 0, result.output
        result = runner.invoke(cli_main, ["engineer", "-c", str(config_path)])
        assert result.exit_code == 0, result.output
        assert "search picked" in result.output

    def test_friendly_error_for_broken_config(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("dataset: d.jsonl\nbanana: true\n", encoding="utf-8")
        runner = CliRunner()
        result = runner.invoke(cli_main, ["ingest", "-c", str(path)])
        assert result.exit_code == 1
        assert "unknown config keys: banana" in result.output
        assert "Traceback" not in result.output

    def test_friendly_error_for_out_of_order_stages(self, tmp_path):
        config_path = write_run_yaml(tmp_path)
        runner = CliRunner()
        result = runner.invoke(cli_main, ["generate", "-c", str(config_path)])
        assert result.exit_code == 1
        assert "does not exist yet" in result.output

    def test_malformed_set_flag(self, tmp_path):
        config_path = write_run_yaml(tmp_path)
        runner = CliRunner()
        result = runner.invoke(cli_main, ["run", "-c", str(config_path), "--set", "oops"])
        assert result.exit_code == 2
        assert "expected KEY=VALUE" in result.output

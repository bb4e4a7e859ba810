import json
import os

import pytest

from src.core.errors import EXIT_CONFIG, EXIT_DATA, EXIT_GATEWAY, EXIT_OK
from src.core.store import load_store, read_manifest
from src.main import main, parse_budgets
from tests.conftest import FIXTURE_DATASET

CONFIG_TEMPLATE = """
[runtime]
n_jobs = 2
log_dir = "{root}/logs"
output_dir = "{root}/out"

[gateway]
backend = "mock"
record_missing = true
fixture_dir = "{root}/mock_llm"

[embedding]
backend = "mock"
dimension = 32
cache_dir = "{root}/embedding_cache"
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "offline.toml"
    path.write_text(CONFIG_TEMPLATE.format(root=tmp_path.as_posix()), encoding="utf-8")
    return str(path)


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "out")


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_build_then_eval_is_byte_identical(config_file, out_dir):
    outputs = [
        "conv-mini-1.store.jsonl",
        "build_manifest.jsonl",
        "locomo_full_manifest.jsonl",
        "locomo_full_b2048_report.json",
    ]
    snapshots = []
    for _ in range(3):
        assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir) == EXIT_OK
        assert run("eval", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir) == EXIT_OK
        snapshots.append([open(os.path.join(out_dir, name), "rb").read() for name in outputs])
    assert snapshots[0] == snapshots[1] == snapshots[2]


def test_build_writes_one_store_per_conversation(config_file, out_dir):
    assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir) == EXIT_OK
    assert load_store(os.path.join(out_dir, "conv-mini-2.store.jsonl")).extracted
    manifest = read_manifest(os.path.join(out_dir, "build_manifest.jsonl"))
    assert len(manifest.of_kind("session_consolidated")) == 5


def test_build_single_conversation(config_file, out_dir):
    assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir,
               "--conversation-id", "conv-mini-2") == EXIT_OK
    assert not os.path.exists(os.path.join(out_dir, "conv-mini-1.store.jsonl"))
    assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir,
               "--conversation-id", "conv-nope") == EXIT_DATA


def test_theta_flag_bounds_pair_similarity(config_file, out_dir):
    assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir, "--theta", "0.9") == EXIT_OK
    manifest = read_manifest(os.path.join(out_dir, "build_manifest.jsonl"))
    assert manifest.header["config"]["consolidation"]["theta"] == 0.9
    for event in manifest.of_kind("session_consolidated"):
        assert all(similarity > 0.9 for _, _, similarity in event.get("pairs", []))


def test_query_dry_run_and_bm25(config_file, out_dir, capsys):
    run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir)
    store = os.path.join(out_dir, "conv-mini-1.store.jsonl")
    assert run("query", store, "Who is Caroline's guitar teacher?", "--config", config_file, "--dry-run") == EXIT_OK
    assert "Dry run" in capsys.readouterr().out
    assert run("query", store, "Who is Caroline's guitar teacher?", "--config", config_file,
               "--retriever", "bm25", "--budget", "256") == EXIT_OK
    assert "Answer" in capsys.readouterr().out


def test_query_rejects_foreign_embedding_backend(config_file, out_dir, tmp_path):
    run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir)
    other = tmp_path / "other.toml"
    other.write_text(open(config_file, encoding="utf-8").read().replace("dimension = 32", "dimension = 16"),
                     encoding="utf-8")
    store = os.path.join(out_dir, "conv-mini-1.store.jsonl")
    assert run("query", store, "anything?", "--config", other, "--dry-run") == EXIT_CONFIG


def test_budget_sweep_with_ablation(config_file, out_dir):
    assert run("eval", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir,
               "--ablate", "no-step2", "--budget-sweep", "1024,2048,4096", "--charts") == EXIT_OK
    for budget in (1024, 2048, 4096):
        with open(os.path.join(out_dir, f"locomo_no-step2_b{budget}_report.json"), encoding="utf-8") as f:
            report = json.load(f)
        assert report["budget"] == budget
        assert all(item["context_tokens"] <= budget for item in report["items"])
    assert os.path.exists(os.path.join(out_dir, "locomo_sweep_chart.png"))
    manifest = read_manifest(os.path.join(out_dir, "locomo_no-step2_manifest.jsonl"))
    assert all(e["fragment_ids"] == [] for e in manifest.of_kind("pair_reasoned"))


def test_stats(config_file, capsys):
    assert run("stats", FIXTURE_DATASET, "--config", config_file) == EXIT_OK
    out = capsys.readouterr().out
    assert "single_hop" in out and "adversarial" in out


@pytest.mark.parametrize("argv, code", [
    (["stats", "missing.json"], EXIT_DATA),
    (["stats", FIXTURE_DATASET, "--config", "missing.toml"], EXIT_CONFIG),
    (["query", "missing.store.jsonl", "q?", "--dry-run"], EXIT_DATA),
])
def test_exit_codes(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == code


def test_invalid_config_value_is_a_config_error(config_file, out_dir):
    assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir, "--theta", "1.5") == EXIT_CONFIG
    assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out_dir, "--budget", "10") == EXIT_CONFIG


def test_parse_budgets():
    assert parse_budgets("1024, 2048,4096") == [1024, 2048, 4096]


def test_small_models_flag_is_part_of_the_effective_config(config_file, tmp_path):
    headers = {}
    for label, extra in (("default", []), ("small", ["--small-models"])):
        out = str(tmp_path / label)
        assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", out,
                   "--conversation-id", "conv-mini-2", *extra) == EXIT_OK
        headers[label] = read_manifest(os.path.join(out, "build_manifest.jsonl")).header["config"]
    assert headers["default"]["models"]["use_small"] is False
    assert headers["small"]["models"]["use_small"] is True
    small_store = load_store(os.path.join(str(tmp_path / "small"), "conv-mini-2.store.jsonl"))
    default_store = load_store(os.path.join(str(tmp_path / "default"), "conv-mini-2.store.jsonl"))
    assert small_store.config_hash != default_store.config_hash


@pytest.fixture
def replay_config_file(config_file, tmp_path):
    path = tmp_path / "replay.toml"
    text = open(config_file, encoding="utf-8").read().replace("record_missing = true", "record_missing = false")
    path.write_text(text, encoding="utf-8")
    (tmp_path / "mock_llm").mkdir(exist_ok=True)
    return str(path)


def fixture_files(tmp_path):
    return sorted(p.name for p in (tmp_path / "mock_llm").iterdir())


def test_missing_fixture_stops_a_replay_run(replay_config_file, out_dir):
    assert run("build", FIXTURE_DATASET, "--config", replay_config_file, "--out-dir", out_dir) == EXIT_GATEWAY
    assert not os.path.exists(os.path.join(out_dir, "conv-mini-1.store.jsonl"))


def test_record_fixtures_flag_bootstraps_a_replay_config(replay_config_file, out_dir, tmp_path):
    assert run("build", FIXTURE_DATASET, "--config", replay_config_file, "--out-dir", out_dir,
               "--record-fixtures") == EXIT_OK
    assert "index.json" in fixture_files(tmp_path)
    assert run("build", FIXTURE_DATASET, "--config", replay_config_file, "--out-dir", out_dir) == EXIT_OK


def test_pinned_fixtures_replay_the_recorded_run(config_file, replay_config_file, tmp_path):
    recorded = str(tmp_path / "recorded")
    assert run("build", FIXTURE_DATASET, "--config", config_file, "--out-dir", recorded) == EXIT_OK
    assert run("eval", FIXTURE_DATASET, "--config", config_file, "--out-dir", recorded) == EXIT_OK
    pinned = fixture_files(tmp_path)

    replays = []
    for name in ("replay_a", "replay_b"):
        out = str(tmp_path / name)
        assert run("build", FIXTURE_DATASET, "--config", replay_config_file, "--out-dir", out) == EXIT_OK
        assert run("eval", FIXTURE_DATASET, "--config", replay_config_file, "--out-dir", out) == EXIT_OK
        replays.append([open(os.path.join(out, f), "rb").read()
                        for f in ("conv-mini-1.store.jsonl", "locomo_full_b2048_report.json")])
    assert replays[0] == replays[1]
    assert fixture_files(tmp_path) == pinned

    def report_items(out):
        with open(os.path.join(out, "locomo_full_b2048_report.json"), encoding="utf-8") as f:
            return json.load(f)["items"]

    assert report_items(str(tmp_path / "replay_a")) == report_items(recorded)
    assert load_store(os.path.join(str(tmp_path / "replay_a"), "conv-mini-1.store.jsonl")).fragments == \
        load_store(os.path.join(recorded, "conv-mini-1.store.jsonl")).fragments

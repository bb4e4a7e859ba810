import json

import numpy as np
import pytest

from src.agent.builder import MemoryBuilder
from src.core.errors import DataError, StoreCorruptionError, UnsupportedVersionError
from src.core.store import MemoryStore, RunManifest, load_store, read_manifest, replay_pool, save_store
from src.core.types import Category, Conversation
from src.reports.datasets import load_dataset
from tests.conftest import FIXTURE_DATASET, make_fragment


@pytest.fixture(scope="module")
def conversation() -> Conversation:
    return load_dataset(FIXTURE_DATASET).conversation("conv-mini-1")


@pytest.fixture
def builder(offline_config, scripted_gateway, embedder):
    return MemoryBuilder.from_config(offline_config, scripted_gateway, embedder)


def test_store_round_trip(tmp_path, builder, conversation):
    store = builder.build(conversation)
    path = str(tmp_path / "conv.store.jsonl")
    save_store(store, path)
    loaded = load_store(path)
    assert loaded == store
    assert loaded.sealed
    assert [f.fragment_id for f in loaded.fragments] == [f.fragment_id for f in store.fragments]
    assert np.allclose(loaded.vectors[store.fragments[0].fragment_id], store.vectors[store.fragments[0].fragment_id])


def test_saves_are_byte_identical(tmp_path, builder, conversation):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_store(builder.build(conversation), str(first))
    save_store(builder.build(conversation), str(second))
    assert first.read_bytes() == second.read_bytes()


def test_three_session_manifest(tmp_path, builder, conversation):
    manifest = RunManifest(str(tmp_path / "build_manifest.jsonl"), {"theta": 0.6})
    store = builder.build(conversation, manifest)
    assert len(manifest.of_kind("session_extracted")) == 3
    assert len(manifest.of_kind("session_consolidated")) == 3
    assert [e["seq"] for e in manifest.events] == list(range(1, len(manifest.events) + 1))
    assert replay_pool(manifest) == list(store.pool.cluster_ids)

    reread = read_manifest(manifest.path)
    assert reread.header["config"] == {"theta": 0.6}
    assert reread.events == manifest.events


def test_scripted_build_produces_reasoning(offline_config, scripted_gateway, embedder, conversation):
    cfg = offline_config.with_overrides({"consolidation.theta": 0.1})
    store = MemoryBuilder.from_config(cfg, scripted_gateway, embedder).build(conversation)
    assert store.extracted and store.reasoned
    assert all(f.category == Category.REASONING for f in store.reasoned)
    assert {f.session_index for f in store.reasoned} <= {2, 3}


def test_empty_build_has_header_only_manifest(tmp_path, builder):
    manifest = RunManifest(str(tmp_path / "empty.jsonl"), {})
    store = builder.build(Conversation(conversation_id="empty", sessions=()), manifest)
    assert len(store) == 0
    lines = (tmp_path / "empty.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["kind"] == "manifest"


def sealed_store():
    fragments = [make_fragment("s1-m1", "plays guitar"), make_fragment("s1-m2", "runs marathons")]
    return MemoryStore(fragments, [], {"s1-m1": np.array([1.0, 0.0]), "s1-m2": np.array([0.0, 1.0])},
                       embedding_backend="mock-sha256-2", dimension=2).seal()


def test_unsupported_version(tmp_path):
    path = tmp_path / "s.jsonl"
    save_store(sealed_store(), str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    header["format_version"] = "99"
    path.write_text("\n".join([json.dumps(header), *lines[1:]]) + "\n", encoding="utf-8")
    with pytest.raises(UnsupportedVersionError):
        load_store(str(path))


def test_checksum_detects_tampering(tmp_path):
    path = tmp_path / "s.jsonl"
    save_store(sealed_store(), str(path))
    path.write_text(path.read_text(encoding="utf-8").replace("runs marathons", "runs sprints"), encoding="utf-8")
    with pytest.raises(StoreCorruptionError):
        load_store(str(path))


@pytest.mark.parametrize("content", ["", "not json\n", '{"kind": "fragment"}\n'])
def test_corrupt_headers(tmp_path, content):
    path = tmp_path / "s.jsonl"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(StoreCorruptionError):
        load_store(str(path))


def test_missing_store_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_store(str(tmp_path / "nope.jsonl"))


def test_unsealed_store_cannot_be_saved(tmp_path):
    store = MemoryStore([make_fragment("s1-m1")], [], {"s1-m1": np.ones(2)})
    with pytest.raises(ValueError):
        save_store(store, str(tmp_path / "s.jsonl"))


def test_seal_without_vectors_needs_embedder():
    with pytest.raises(ValueError):
        MemoryStore([make_fragment("s1-m1")], [], {}).seal()


def test_manifest_absorb_tags_events():
    local = RunManifest(None)
    local.append("k_chosen", session_index=1, k=2)
    merged = RunManifest(None)
    merged.absorb(local, conversation_id="conv-mini-1")
    assert merged.events == [{"event": "k_chosen", "seq": 1, "session_index": 1, "k": 2,
                              "conversation_id": "conv-mini-1"}]

import datetime
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.ai.gateway import LLMGateway
from src.core.errors import PoolConsistencyError
from src.core.store import RunManifest, replay_pool
from src.core.types import Category, Cluster, ConnectedPair, InferenceType, PersistentPool
from src.core.vector_index import cosine
from src.models.clustering import ConsolidationConfig
from src.models.consolidation import (
    SessionMemory,
    connected_pairs,
    consolidate_conversation,
    normalize_inference_type,
    reason_pair,
    update_pool,
)
from tests.conftest import StubProvider, gateway_settings, make_fragment, unit


def cluster(cluster_id, *centroid, members=None):
    session = int(cluster_id.split("-")[0][1:])
    return Cluster(cluster_id=cluster_id, session_index=session,
                   member_fragment_ids=members or (cluster_id.replace("-c", "-m"),), centroid=tuple(centroid))


def session_memory(session_index, vectors, day):
    fragments = [make_fragment(f"s{session_index}-m{j + 1}", f"note {session_index} {j}",
                               session_index=session_index) for j in range(len(vectors))]
    return SessionMemory(session_index=session_index, session_date=datetime.date(2023, 5, day),
                         fragments=fragments, vectors=np.vstack(vectors))


def one_insight(request):
    return json.dumps({"extended_insight": [{
        "inference_type": "accumulation", "key": "pattern", "date": "2023-05-01 to 2023-05-20",
        "value": "A linked pattern across sessions",
    }]})


@pytest.fixture
def three_sessions():
    # Two-fragment sessions stay singletons, so every cluster is known up front
    return [
        session_memory(1, [unit(1, 0), unit(0, 1)], 1),
        session_memory(2, [unit(1, 0.1), unit(-1, 0)], 10),
        session_memory(3, [unit(0.1, 1), unit(1, 0.2)], 20),
    ]


def test_hand_traced_consolidation(three_sessions):
    provider = StubProvider(one_insight)
    gateway = LLMGateway(provider, gateway_settings())
    result = consolidate_conversation(three_sessions, ConsolidationConfig(theta=0.6), gateway)

    cp = [[(p.pool_cluster_id, p.new_cluster_id) for p in t.pairs] for t in result.trace]
    assert cp == [[], [("s1-c1", "s2-c1")], [("s1-c2", "s3-c1"), ("s2-c1", "s3-c2")]]
    assert [t.pool_after for t in result.trace] == [
        ["s1-c1", "s1-c2"],
        ["s1-c2", "s2-c1", "s2-c2"],
        ["s2-c2", "s3-c1", "s3-c2"],
    ]
    assert [f.fragment_id for f in result.reasoned] == ["s2-r1", "s3-r1", "s3-r2"]
    assert result.reasoned[1].source_pair == ("s1-c2", "s3-c1")
    assert all(f.category == Category.REASONING for f in result.reasoned)
    assert all(f.inference_type == InferenceType.ACCUMULATION for f in result.reasoned)
    assert len(provider.requests) == 3
    assert result.pool.cluster_ids == ("s2-c2", "s3-c1", "s3-c2")


def test_reasoning_prompt_carries_both_clusters(three_sessions):
    provider = StubProvider(one_insight)
    consolidate_conversation(three_sessions[:2], ConsolidationConfig(theta=0.6),
                             LLMGateway(provider, gateway_settings()))
    prompt = provider.requests[0].user_prompt
    assert "note 1 0" in prompt and "note 2 0" in prompt
    assert "note 1 1" not in prompt


def test_disabled_reasoning_keeps_pool_dynamics(three_sessions):
    result = consolidate_conversation(three_sessions, ConsolidationConfig(theta=0.6, reasoning_enabled=False), None)
    assert result.reasoned == []
    assert result.pool.cluster_ids == ("s2-c2", "s3-c1", "s3-c2")
    assert len(result.extracted) == 6


def test_empty_session_leaves_pool_unchanged(three_sessions):
    empty = SessionMemory(session_index=2, session_date=datetime.date(2023, 5, 10), fragments=[],
                          vectors=np.zeros((0, 2)))
    result = consolidate_conversation([three_sessions[0], empty], ConsolidationConfig(), None)
    assert result.trace[1].pool_before == result.trace[1].pool_after == ["s1-c1", "s1-c2"]


def test_sessions_must_be_ordered(three_sessions):
    with pytest.raises(ValueError):
        consolidate_conversation(list(reversed(three_sessions)), ConsolidationConfig(reasoning_enabled=False), None)
    with pytest.raises(ValueError):
        consolidate_conversation(three_sessions, ConsolidationConfig(), None)


def test_invalid_reasoning_output_skips_the_pair(three_sessions):
    gateway = LLMGateway(StubProvider(["no json at all"]), gateway_settings(retry_limit=0))
    result = consolidate_conversation(three_sessions, ConsolidationConfig(theta=0.6), gateway)
    assert result.reasoned == []
    assert result.pool.cluster_ids == ("s2-c2", "s3-c1", "s3-c2")


def test_reason_pair_drops_bad_insights():
    reply = json.dumps({"extended_insight": [
        {"inference_type": "Extension/Generalization", "key": "job", "date": "2023-05-01", "value": "Broader career shift"},
        {"inference_type": "guesswork", "key": "x", "date": "", "value": "y"},
        {"inference_type": "transformation", "key": "", "date": "", "value": "no key"},
        "text",
    ]})
    gateway = LLMGateway(StubProvider([reply]), gateway_settings())
    pair = ConnectedPair(pool_cluster_id="s1-c1", new_cluster_id="s2-c1", similarity=0.9)
    produced = reason_pair(pair, [make_fragment("s1-m1")], [make_fragment("s2-m1")], gateway, 2,
                           datetime.date(2023, 5, 10))
    assert len(produced) == 1
    assert produced[0].inference_type == InferenceType.EXTENSION_GENERALIZATION
    assert produced[0].source_pair == ("s1-c1", "s2-c1")


def test_reason_pair_needs_both_sides():
    pair = ConnectedPair(pool_cluster_id="s1-c1", new_cluster_id="s2-c1", similarity=0.9)
    with pytest.raises(ValueError):
        reason_pair(pair, [], [make_fragment("s2-m1")], None, 2, datetime.date(2023, 5, 10))


@pytest.mark.parametrize("raw, expected", [
    ("accumulation", InferenceType.ACCUMULATION),
    ("Specification/Refinement", InferenceType.SPECIFICATION_REFINEMENT),
    ("connection-implication", InferenceType.CONNECTION_IMPLICATION),
    (" Transformation ", InferenceType.TRANSFORMATION),
    ("conflict", None),
    ("", None),
    (None, None),
])
def test_normalize_inference_type(raw, expected):
    assert normalize_inference_type(raw) is expected


def test_pool_update_matches_set_formula():
    rng = np.random.default_rng(99)
    for trial in range(1000):
        pool_ids = [f"s{1 + j % 3}-c{j + 1}" for j in range(int(rng.integers(0, 8)))]
        new_ids = [f"s4-c{j + 1}" for j in range(int(rng.integers(1, 6)))]
        pool = PersistentPool(clusters=tuple(cluster(cid, 1.0, 0.0) for cid in pool_ids))
        new = [cluster(cid, 0.0, 1.0) for cid in new_ids]
        pairs = [
            ConnectedPair(pool_cluster_id=p, new_cluster_id=c, similarity=0.9)
            for p in pool_ids for c in new_ids if rng.random() < 0.3
        ]
        updated = update_pool(pool, new, pairs)
        matched = {pr.pool_cluster_id for pr in pairs}
        assert set(updated.cluster_ids) == (set(pool_ids) - matched) | set(new_ids), trial
        assert list(updated.cluster_ids[-len(new_ids):]) == new_ids


def test_pool_update_rejects_unknown_clusters():
    pool = PersistentPool(clusters=(cluster("s1-c1", 1.0, 0.0),))
    new = [cluster("s2-c1", 1.0, 0.0)]
    with pytest.raises(PoolConsistencyError):
        update_pool(pool, new, [ConnectedPair(pool_cluster_id="s1-c9", new_cluster_id="s2-c1", similarity=1.0)])
    with pytest.raises(PoolConsistencyError):
        update_pool(pool, new, [ConnectedPair(pool_cluster_id="s1-c1", new_cluster_id="s2-c9", similarity=1.0)])


def test_connected_pairs_use_strict_threshold():
    pool = PersistentPool(clusters=(cluster("s1-c1", 1.0, 0.0),))
    new = cluster("s2-c1", 1.0, 1.0)
    similarity = cosine(pool.clusters[0].centroid_vector, new.centroid_vector)
    assert connected_pairs(pool, [new], similarity) == []
    assert connected_pairs(pool, [new], similarity - 1e-9)[0].new_cluster_id == "s2-c1"


angles = st.lists(st.floats(min_value=0, max_value=2 * np.pi, allow_nan=False), min_size=1, max_size=6)


@given(angles, angles, st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_higher_theta_never_adds_pairs(pool_angles, new_angles, t1, t2):
    low, high = sorted([t1, t2])
    pool = PersistentPool(clusters=tuple(
        cluster(f"s1-c{j + 1}", np.cos(a), np.sin(a)) for j, a in enumerate(pool_angles)))
    new = [cluster(f"s2-c{j + 1}", np.cos(a), np.sin(a)) for j, a in enumerate(new_angles)]
    key = lambda p: (p.pool_cluster_id, p.new_cluster_id)
    assert {key(p) for p in connected_pairs(pool, new, high)} <= {key(p) for p in connected_pairs(pool, new, low)}


def test_manifest_replay_reproduces_pool(tmp_path, three_sessions):
    manifest = RunManifest(str(tmp_path / "m.jsonl"), {"theta": 0.6})
    result = consolidate_conversation(three_sessions, ConsolidationConfig(theta=0.6),
                                      LLMGateway(StubProvider(one_insight), gateway_settings()), manifest)
    assert replay_pool(manifest) == list(result.pool.cluster_ids)
    assert len(manifest.of_kind("session_consolidated")) == 3
    assert [e["fragment_ids"] for e in manifest.of_kind("pair_reasoned")] == [["s2-r1"], ["s3-r1"], ["s3-r2"]]

"""
Step 2: cluster each session, link new clusters to the persistent pool,
reason over connected pairs and roll the pool forward.

    P_i = P_{i-1} \\ {p : exists c with (p, c) in CP_i}  U  C_i
"""
import datetime
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict

from ..ai import prompts
from ..ai.gateway import LLMGateway
from ..core.errors import PoolConsistencyError, StructuredOutputError
from ..core.temporal import parse_temporal
from ..core.types import (
    Category,
    Cluster,
    ConnectedPair,
    InferenceType,
    MemoryFragment,
    PersistentPool,
    id_sort_key,
)
from ..core.vector_index import cosine
from .clustering import ConsolidationConfig, cluster_session

logger = logging.getLogger(__name__)

REASONING_KEY = "extended_insight"


class SessionMemory(BaseModel):
    """Step-1 output of one session, ready for consolidation."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    session_index: int
    session_date: datetime.date
    fragments: List[MemoryFragment]
    vectors: np.ndarray


class SessionTrace(BaseModel):
    model_config = ConfigDict(frozen=True)

    session_index: int
    k: int
    silhouette: Optional[float]
    fallback: bool
    clusters: List[Cluster]
    pairs: List[ConnectedPair]
    pool_before: List[str]
    pool_after: List[str]
    reasoned_count: int


class ConsolidationResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    extracted: List[MemoryFragment]
    reasoned: List[MemoryFragment]
    vectors: Dict[str, np.ndarray]
    pool: PersistentPool
    trace: List[SessionTrace]


def connected_pairs(pool: PersistentPool, new_clusters: Sequence[Cluster], theta: float) -> List[ConnectedPair]:
    pairs = []
    for p in pool.clusters:
        for c in new_clusters:
            similarity = cosine(p.centroid_vector, c.centroid_vector)
            if similarity > theta:
                pairs.append(ConnectedPair(pool_cluster_id=p.cluster_id, new_cluster_id=c.cluster_id, similarity=similarity))
    pairs.sort(key=lambda pr: (id_sort_key(pr.pool_cluster_id), id_sort_key(pr.new_cluster_id)))
    return pairs


def update_pool(pool: PersistentPool, new_clusters: Sequence[Cluster], pairs: Sequence[ConnectedPair]) -> PersistentPool:
    pool_ids = set(pool.cluster_ids)
    new_ids = {c.cluster_id for c in new_clusters}
    for pair in pairs:
        if pair.pool_cluster_id not in pool_ids or pair.new_cluster_id not in new_ids:
            raise PoolConsistencyError(f"Pair ({pair.pool_cluster_id}, {pair.new_cluster_id}) references an unknown cluster")
    matched = {pair.pool_cluster_id for pair in pairs}
    survivors = [p for p in pool.clusters if p.cluster_id not in matched]
    return PersistentPool(clusters=tuple(survivors + sorted(new_clusters, key=lambda c: id_sort_key(c.cluster_id))))


def normalize_inference_type(name: Any) -> Optional[InferenceType]:
    token = str(name or "").strip().lower()
    for sep in ("/", "-", " "):
        token = token.replace(sep, "_")
    try:
        return InferenceType(token)
    except ValueError:
        return None


def render_fragments(fragments: Sequence[MemoryFragment]) -> str:
    ordered = sorted(fragments, key=lambda f: (f.temporal.sort_key(), id_sort_key(f.fragment_id)))
    return "\n".join(f.render_line() for f in ordered)


def build_reasoning_prompt(pool_fragments: Sequence[MemoryFragment], new_fragments: Sequence[MemoryFragment]) -> str:
    return prompts.render(prompts.REASONING_TEMPLATE, memory_fragments=render_fragments([*pool_fragments, *new_fragments]))


def reason_pair(
    pair: ConnectedPair,
    pool_fragments: Sequence[MemoryFragment],
    new_fragments: Sequence[MemoryFragment],
    gateway: LLMGateway,
    session_index: int,
    fallback_date: datetime.date,
) -> List[MemoryFragment]:
    """
    Returns reasoning fragments numbered locally (s{i}-r1, ...); the caller
    renumbers them once all pairs of the session are merged.
    """
    if not pool_fragments or not new_fragments:
        raise ValueError(f"reason_pair {pair.pool_cluster_id}/{pair.new_cluster_id} needs fragments on both sides")
    request = gateway.request_for("reason", build_reasoning_prompt(pool_fragments, new_fragments))
    try:
        tree = gateway.complete_structured(request, [REASONING_KEY])
    except StructuredOutputError as e:
        logger.warning(f"Skipping pair ({pair.pool_cluster_id}, {pair.new_cluster_id}): {e}")
        return []

    entries = tree.get(REASONING_KEY) or []
    if not isinstance(entries, list):
        logger.warning(f"Pair ({pair.pool_cluster_id}, {pair.new_cluster_id}): {REASONING_KEY} is not a list")
        return []

    fragments: List[MemoryFragment] = []
    for position, entry in enumerate(entries):
        where = f"pair ({pair.pool_cluster_id}, {pair.new_cluster_id}) insight {position}"
        if not isinstance(entry, dict):
            logger.warning(f"{where}: not an object; dropped")
            continue
        inference_type = normalize_inference_type(entry.get("inference_type"))
        if inference_type is None:
            logger.warning(f"{where}: unknown inference_type {entry.get('inference_type')!r}; dropped")
            continue
        key = str(entry.get("key") or "").strip()
        content = str(entry.get("value") or entry.get("content") or "").strip()
        if not key or not content:
            logger.warning(f"{where}: empty key or value; dropped")
            continue
        temporal, warnings = parse_temporal(str(entry.get("date") or ""), fallback_date)
        fragments.append(MemoryFragment(
            fragment_id=f"s{session_index}-r{len(fragments) + 1}",
            key=key,
            content=content,
            category=Category.REASONING,
            temporal=temporal,
            session_index=session_index,
            inference_type=inference_type,
            source_pair=(pair.pool_cluster_id, pair.new_cluster_id),
            warnings=tuple(warnings),
        ))
    return fragments


def consolidate_conversation(
    sessions: Sequence[SessionMemory],
    config: ConsolidationConfig,
    gateway: Optional[LLMGateway],
    manifest=None,
    n_jobs: int = 1,
) -> ConsolidationResult:
    indexes = [s.session_index for s in sessions]
    if indexes != sorted(set(indexes)):
        raise ValueError(f"Sessions must be strictly ordered, got {indexes}")
    if config.reasoning_enabled and gateway is None:
        raise ValueError("Reasoning is enabled but no gateway was given")

    pool = PersistentPool()
    extracted: List[MemoryFragment] = []
    reasoned: List[MemoryFragment] = []
    vectors: Dict[str, np.ndarray] = {}
    fragment_by_id: Dict[str, MemoryFragment] = {}
    cluster_by_id: Dict[str, Cluster] = {}
    trace: List[SessionTrace] = []

    def emit(event: str, **payload):
        if manifest is not None:
            manifest.append(event, **payload)

    for memory in sessions:
        i = memory.session_index
        for fragment, vector in zip(memory.fragments, memory.vectors):
            vectors[fragment.fragment_id] = np.asarray(vector, dtype=float)
            fragment_by_id[fragment.fragment_id] = fragment
        extracted.extend(memory.fragments)
        pool_before = list(pool.cluster_ids)

        if not memory.fragments:
            logger.warning(f"Session {i}: no fragments; pool unchanged")
            trace.append(SessionTrace(session_index=i, k=0, silhouette=None, fallback=False, clusters=[], pairs=[],
                                      pool_before=pool_before, pool_after=pool_before, reasoned_count=0))
            emit("session_consolidated", session_index=i, fragments=0, reasoned=0)
            continue

        clustering = cluster_session(memory.fragments, memory.vectors, config)
        for c in clustering.clusters:
            cluster_by_id[c.cluster_id] = c
        emit("k_chosen", session_index=i, k=clustering.k, silhouette=clustering.silhouette, fallback=clustering.fallback,
             clusters={c.cluster_id: list(c.member_fragment_ids) for c in clustering.clusters})

        pairs = connected_pairs(pool, clustering.clusters, config.theta)

        session_reasoned: List[MemoryFragment] = []
        if config.reasoning_enabled and pairs:
            def members(cluster_id: str) -> List[MemoryFragment]:
                return [fragment_by_id[m] for m in cluster_by_id[cluster_id].member_fragment_ids]

            results = Parallel(n_jobs=n_jobs, prefer="threads")(
                delayed(reason_pair)(pair, members(pair.pool_cluster_id), members(pair.new_cluster_id),
                                     gateway, i, memory.session_date)
                for pair in pairs
            )
            for pair, produced in zip(pairs, results):
                renumbered = []
                for fragment in produced:
                    ordinal = len(session_reasoned) + 1
                    renumbered.append(fragment.model_copy(update={"fragment_id": f"s{i}-r{ordinal}"}))
                    session_reasoned.append(renumbered[-1])
                emit("pair_reasoned", session_index=i, pool_cluster_id=pair.pool_cluster_id,
                     new_cluster_id=pair.new_cluster_id, similarity=pair.similarity,
                     fragment_ids=[f.fragment_id for f in renumbered])
        reasoned.extend(session_reasoned)

        new_pool = update_pool(pool, clustering.clusters, pairs)
        removed = [cid for cid in pool_before if cid not in set(new_pool.cluster_ids)]
        emit("pool_updated", session_index=i, removed=removed, added=[c.cluster_id for c in clustering.clusters],
             pool=list(new_pool.cluster_ids))
        trace.append(SessionTrace(
            session_index=i,
            k=clustering.k,
            silhouette=clustering.silhouette,
            fallback=clustering.fallback,
            clusters=clustering.clusters,
            pairs=pairs,
            pool_before=pool_before,
            pool_after=list(new_pool.cluster_ids),
            reasoned_count=len(session_reasoned),
        ))
        emit("session_consolidated", session_index=i, fragments=len(memory.fragments), reasoned=len(session_reasoned),
             pool_size_before=len(pool_before), pool_size_after=len(new_pool.clusters),
             pairs=[[p.pool_cluster_id, p.new_cluster_id, p.similarity] for p in pairs])
        logger.info(f"Session {i}: k={clustering.k}, |CP|={len(pairs)}, reasoned={len(session_reasoned)}, "
                    f"pool {len(pool_before)} -> {len(new_pool.clusters)}")
        pool = new_pool

    return ConsolidationResult(extracted=extracted, reasoned=reasoned, vectors=vectors, pool=pool, trace=trace)

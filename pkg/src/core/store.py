"""
Persistence: the sealed memory store (JSON Lines, checksummed) and the
run manifest that audits every consolidation step.
"""
import hashlib
import json
import logging
import os
import threading
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from .errors import DataError, StoreCorruptionError, UnsupportedVersionError
from .types import Cluster, MemoryFragment, PersistentPool, id_sort_key
from .vector_index import Bm25Index, DenseIndex

logger = logging.getLogger(__name__)

STORE_FORMAT_VERSION = "1"
MANIFEST_FORMAT_VERSION = "1"


def _dumps(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class MemoryStore:
    """
    M (extracted) and R (reasoned) fragments, their vectors, the final pool
    and the per-session trace. Sealing builds the retrieval indexes.
    """

    def __init__(
        self,
        extracted: Iterable[MemoryFragment],
        reasoned: Iterable[MemoryFragment],
        vectors: Dict[str, np.ndarray],
        pool: Optional[PersistentPool] = None,
        trace: Optional[List[Dict[str, Any]]] = None,
        embedding_backend: str = "",
        dimension: int = 0,
        config_hash: str = "",
    ):
        self.extracted = sorted(extracted, key=lambda f: id_sort_key(f.fragment_id))
        self.reasoned = sorted(reasoned, key=lambda f: id_sort_key(f.fragment_id))
        self.vectors = {k: np.asarray(v, dtype=float) for k, v in vectors.items()}
        self.pool = pool or PersistentPool()
        self.trace = trace or []
        self.embedding_backend = embedding_backend
        self.dimension = dimension
        self.config_hash = config_hash
        self._by_id = {f.fragment_id: f for f in self.fragments}
        self.dense_index: Optional[DenseIndex] = None
        self.bm25_index: Optional[Bm25Index] = None

    @property
    def fragments(self) -> List[MemoryFragment]:
        return self.extracted + self.reasoned

    @property
    def sealed(self) -> bool:
        return self.dense_index is not None

    def get(self, fragment_id: str) -> MemoryFragment:
        return self._by_id[fragment_id]

    def __len__(self) -> int:
        return len(self._by_id)

    def seal(self, embedder=None, bm25_k1: float = 1.2, bm25_b: float = 0.75) -> "MemoryStore":
        missing = [f for f in self.fragments if f.fragment_id not in self.vectors]
        if missing:
            if embedder is None:
                raise ValueError(f"{len(missing)} fragments lack vectors and no embedder was given")
            for fragment, vector in zip(missing, embedder.embed_fragments(missing)):
                self.vectors[fragment.fragment_id] = vector
        if self.fragments and not self.dimension:
            self.dimension = len(next(iter(self.vectors.values())))
        dense = DenseIndex()
        for f in self.fragments:
            dense.add(f.fragment_id, self.vectors[f.fragment_id])
        self.dense_index = dense.seal()
        self.bm25_index = Bm25Index({f.fragment_id: f.embedding_text for f in self.fragments}, k1=bm25_k1, b=bm25_b)
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, MemoryStore):
            return NotImplemented
        return _body_lines(self) == _body_lines(other) and self.header_fields() == other.header_fields()

    def header_fields(self) -> Dict[str, Any]:
        return {
            "embedding_backend": self.embedding_backend,
            "dimension": self.dimension,
            "config_hash": self.config_hash,
        }


def _body_lines(store: MemoryStore) -> List[str]:
    lines = []
    for f in store.fragments:
        record = {"kind": "fragment", **f.model_dump(mode="json")}
        record["vector"] = [float(x) for x in store.vectors[f.fragment_id]]
        lines.append(_dumps(record))
    for session in store.trace:
        lines.append(_dumps({"kind": "session", **session}))
    for c in store.pool.clusters:
        lines.append(_dumps({"kind": "pool_cluster", **c.model_dump(mode="json")}))
    return lines


def save_store(store: MemoryStore, path: str):
    if not store.sealed:
        raise ValueError("Only sealed stores can be saved")
    body = _body_lines(store)
    checksum = hashlib.sha256("\n".join(body).encode("utf-8")).hexdigest()
    header = {"kind": "header", "format_version": STORE_FORMAT_VERSION, "checksum": checksum, **store.header_fields()}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(header) + "\n")
        for line in body:
            f.write(line + "\n")
    logger.info(f"Saved store with {len(store.extracted)} + {len(store.reasoned)} fragments to {path}")


def load_store(path: str, bm25_k1: float = 1.2, bm25_b: float = 0.75) -> MemoryStore:
    if not os.path.exists(path):
        raise DataError(f"Store file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise StoreCorruptionError(f"{path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise StoreCorruptionError(f"{path}: unreadable header: {e}") from e
    if header.get("kind") != "header":
        raise StoreCorruptionError(f"{path}: first line is not a store header")
    if header.get("format_version") != STORE_FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: store format version {header.get('format_version')!r} is not supported")
    body = lines[1:]
    if hashlib.sha256("\n".join(body).encode("utf-8")).hexdigest() != header.get("checksum"):
        raise StoreCorruptionError(f"{path}: checksum mismatch")

    extracted, reasoned, trace, pool_clusters = [], [], [], []
    vectors: Dict[str, np.ndarray] = {}
    for lineno, line in enumerate(body, start=2):
        try:
            record = json.loads(line)
            kind = record.pop("kind")
            if kind == "fragment":
                vector = record.pop("vector")
                fragment = MemoryFragment.model_validate(record)
                vectors[fragment.fragment_id] = np.asarray(vector, dtype=float)
                (reasoned if fragment.is_reasoned else extracted).append(fragment)
            elif kind == "session":
                trace.append(record)
            elif kind == "pool_cluster":
                pool_clusters.append(Cluster.model_validate(record))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (ValueError, KeyError) as e:
            raise StoreCorruptionError(f"{path}:{lineno}: {e}") from e

    store = MemoryStore(
        extracted, reasoned, vectors,
        pool=PersistentPool(clusters=tuple(pool_clusters)),
        trace=trace,
        embedding_backend=header.get("embedding_backend", ""),
        dimension=header.get("dimension", 0),
        config_hash=header.get("config_hash", ""),
    )
    return store.seal(bm25_k1=bm25_k1, bm25_b=bm25_b)


class RunManifest:
    """
    Append-only JSON Lines audit log: a header with the effective config,
    then one line per event in occurrence order.
    """

    def __init__(self, path: Optional[str], config: Optional[Dict[str, Any]] = None):
        self.path = path
        self.events: List[Dict[str, Any]] = []
        self._lock = threading.Lock()
        self.header = {"kind": "manifest", "format_version": MANIFEST_FORMAT_VERSION, "config": config or {}}
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(_dumps(self.header) + "\n")

    def append(self, event: str, **payload):
        with self._lock:
            record = {"event": event, "seq": len(self.events) + 1, **payload}
            self.events.append(record)
            if self.path:
                with open(self.path, "a", encoding="utf-8", newline="\n") as f:
                    f.write(_dumps(record) + "\n")

    def absorb(self, other: "RunManifest", **tags):
        """Appends another manifest's events in their order, tagged (e.g. with a conversation id)."""
        for record in other.events:
            payload = {k: v for k, v in record.items() if k not in ("event", "seq")}
            self.append(record["event"], **payload, **tags)

    def of_kind(self, event: str) -> List[Dict[str, Any]]:
        return [e for e in self.events if e["event"] == event]


def read_manifest(path: str) -> RunManifest:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    header = json.loads(lines[0])
    if header.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: manifest version {header.get('format_version')!r} is not supported")
    manifest = RunManifest(None, header.get("config"))
    manifest.events = [json.loads(line) for line in lines[1:]]
    return manifest


def replay_pool(manifest: RunManifest) -> List[str]:
    """Rebuilds the final pool (cluster ids, in order) from pool_updated events alone."""
    pool: List[str] = []
    for event in manifest.of_kind("pool_updated"):
        removed = set(event["removed"])
        pool = [cid for cid in pool if cid not in removed] + sorted(event["added"], key=id_sort_key)
    return pool

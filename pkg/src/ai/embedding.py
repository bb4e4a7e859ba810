import hashlib
import json
import logging
import os
import threading
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence

import numpy as np
import requests

from ..core.config_loader import Config
from ..core.errors import ConfigError, EmbeddingUnavailableError, UnsupportedVersionError
from ..core.types import MemoryFragment
from ..core.vector_index import tokenize

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = "1"


class EmbeddingBackend(ABC):
    dimension: int

    @property
    @abstractmethod
    def backend_id(self) -> str:
        pass

    @abstractmethod
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        pass


class MockEmbeddingBackend(EmbeddingBackend):
    """
    Bag of hashed tokens: sha256(token) seeds a numpy Generator whose
    standard-normal draw is the token's vector; the sum is L2-normalized.
    Texts sharing vocabulary land close together. Pure function of the text.
    """

    def __init__(self, dimension: int = 64):
        self.dimension = dimension

    @property
    def backend_id(self) -> str:
        return f"mock-sha256-{self.dimension}"

    def _seeded(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        return rng.standard_normal(self.dimension)

    def vector_for(self, text: str) -> np.ndarray:
        tokens = tokenize(text) or [text]
        v = np.sum([self._seeded(t) for t in tokens], axis=0)
        return v / np.linalg.norm(v)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.vstack([self.vector_for(t) for t in texts]) if texts else np.zeros((0, self.dimension))


class HttpEmbeddingBackend(EmbeddingBackend):
    """OpenAI-compatible /embeddings endpoint."""

    def __init__(self, base_url: str, model: str, dimension: int, api_key: Optional[str] = None, timeout_s: float = 60):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.api_key = api_key
        self.timeout_s = timeout_s

    @property
    def backend_id(self) -> str:
        return f"http-{self.model}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = requests.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            rows = sorted(resp.json()["data"], key=lambda r: r["index"])
            matrix = np.asarray([r["embedding"] for r in rows], dtype=float)
        except (requests.RequestException, KeyError, ValueError, TypeError) as e:
            raise EmbeddingUnavailableError(f"Embedding backend failed: {e}") from e
        if matrix.shape != (len(texts), self.dimension):
            raise EmbeddingUnavailableError(f"Expected {len(texts)}x{self.dimension} embeddings, got {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise EmbeddingUnavailableError("Embedding backend returned non-finite values")
        return matrix


class EmbeddingCache:
    """
    On-disk cache: `vectors.npy` (rows) + `index.json` (header and row keys).
    """

    def __init__(self, cache_dir: Optional[str], backend_id: str, dimension: int):
        self.cache_dir = cache_dir
        self.backend_id = backend_id
        self.dimension = dimension
        self._rows: Dict[str, np.ndarray] = {}
        self._dirty = False
        if cache_dir:
            self._load()

    def _paths(self):
        return os.path.join(self.cache_dir, "index.json"), os.path.join(self.cache_dir, "vectors.npy")

    def _load(self):
        index_path, vectors_path = self._paths()
        if not os.path.exists(index_path):
            return
        with open(index_path, "r", encoding="utf-8") as f:
            index = json.load(f)
        if index.get("format_version") != CACHE_FORMAT_VERSION:
            raise UnsupportedVersionError(f"Embedding cache version {index.get('format_version')!r} unsupported")
        if index.get("backend") != self.backend_id or index.get("dimension") != self.dimension:
            logger.warning(f"Embedding cache at {self.cache_dir} belongs to {index.get('backend')}; ignoring it")
            return
        matrix = np.load(vectors_path)
        for key, row in zip(index["keys"], matrix):
            self._rows[key] = row

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, text: str) -> Optional[np.ndarray]:
        return self._rows.get(self.key(text))

    def put(self, text: str, vector: np.ndarray):
        self._rows[self.key(text)] = np.asarray(vector, dtype=float)
        self._dirty = True

    def __len__(self) -> int:
        return len(self._rows)

    def save(self):
        if not self.cache_dir or not self._dirty:
            return
        os.makedirs(self.cache_dir, exist_ok=True)
        index_path, vectors_path = self._paths()
        keys = sorted(self._rows)
        matrix = np.vstack([self._rows[k] for k in keys]) if keys else np.zeros((0, self.dimension))
        np.save(vectors_path, matrix)
        with open(index_path, "w", encoding="utf-8") as f:
            json.dump({
                "format_version": CACHE_FORMAT_VERSION,
                "backend": self.backend_id,
                "dimension": self.dimension,
                "keys": keys,
            }, f, indent=1)
        self._dirty = False


class Embedder:
    """Backend + cache. Thread-safe."""

    def __init__(self, backend: EmbeddingBackend, cache: Optional[EmbeddingCache] = None):
        self.backend = backend
        self.cache = cache or EmbeddingCache(None, backend.backend_id, backend.dimension)
        self._lock = threading.Lock()
        self.backend_calls = 0

    @classmethod
    def from_config(cls, cfg: Config) -> "Embedder":
        kind = cfg.get("embedding.backend", "mock")
        dimension = int(cfg.get("embedding.dimension", 64))
        if kind == "mock":
            backend: EmbeddingBackend = MockEmbeddingBackend(dimension)
        elif kind == "http":
            api_key = os.environ.get(cfg.get("gateway.api_key_env", "MEMWEAVE_API_KEY"))
            backend = HttpEmbeddingBackend(cfg.get("embedding.base_url"), cfg.get("embedding.model"), dimension, api_key)
        else:
            raise ConfigError(f"Unknown embedding backend: {kind}")
        return cls(backend, EmbeddingCache(cfg.get("embedding.cache_dir"), backend.backend_id, dimension))

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    @property
    def dimension(self) -> int:
        return self.backend.dimension

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        # The lock guards the cache only; backend calls from several threads run concurrently
        with self._lock:
            missing: List[str] = sorted({t for t in texts if self.cache.get(t) is None})
            if missing:
                self.backend_calls += 1
        if missing:
            rows = self.backend.embed(missing)
            with self._lock:
                for text, row in zip(missing, rows):
                    self.cache.put(text, row)
        if not texts:
            return np.zeros((0, self.dimension))
        with self._lock:
            return np.vstack([self.cache.get(t) for t in texts])

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_texts([text])[0]

    def embed_fragment(self, fragment: MemoryFragment) -> np.ndarray:
        return self.embed_text(fragment.embedding_text)

    def embed_fragments(self, fragments: Sequence[MemoryFragment]) -> np.ndarray:
        return self.embed_texts([f.embedding_text for f in fragments])

    def save(self):
        with self._lock:
            self.cache.save()

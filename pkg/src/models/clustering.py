import logging
import warnings
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import silhouette_score

from ..core.config_loader import Config
from ..core.errors import DimensionMismatchError
from ..core.types import Cluster, MemoryFragment, id_sort_key

logger = logging.getLogger(__name__)


class ConsolidationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta: float = Field(0.6, gt=0.0, lt=1.0)
    k_min: int = Field(2, ge=2)
    k_max: int = Field(10, ge=2)
    reasoning_enabled: bool = True
    kmeans_max_iter: int = Field(100, gt=0)
    kmeans_restarts: int = Field(8, gt=0)
    seed: int = 42

    @classmethod
    def from_config(cls, cfg: Config) -> "ConsolidationConfig":
        return cls(**cfg.section("consolidation"))

    def k_range(self, n: int) -> range:
        return range(self.k_min, min(self.k_max, n - 1) + 1)


class SilhouetteUndefined(ValueError):
    pass


class SessionClustering(BaseModel):
    model_config = ConfigDict(frozen=True)

    clusters: List[Cluster]
    k: int
    silhouette: Optional[float] = None
    fallback: bool = False


def mean_silhouette(labels: Sequence[int], vectors: np.ndarray) -> float:
    """
    Mean Euclidean silhouette. Points in singleton clusters score 0, so an
    all-singleton assignment scores 0.
    """
    labels = np.asarray(labels)
    n_labels = len(np.unique(labels))
    if n_labels < 2:
        raise SilhouetteUndefined("silhouette needs at least two clusters")
    if n_labels == len(labels):
        return 0.0
    return float(silhouette_score(np.asarray(vectors, dtype=float), labels, metric="euclidean"))


def kmeans_labels(vectors: np.ndarray, k: int, config: ConsolidationConfig) -> np.ndarray:
    model = KMeans(
        n_clusters=k,
        n_init=config.kmeans_restarts,
        max_iter=config.kmeans_max_iter,
        random_state=config.seed,
    )
    with warnings.catch_warnings():
        # Duplicate points can leave fewer distinct clusters than k
        warnings.simplefilter("ignore", ConvergenceWarning)
        return model.fit_predict(vectors)


def build_clusters(session_index: int, groups: List[List[str]], vector_of: Dict[str, np.ndarray]) -> List[Cluster]:
    groups = [sorted(g, key=id_sort_key) for g in groups if g]
    groups.sort(key=lambda g: id_sort_key(g[0]))
    clusters = []
    for ordinal, members in enumerate(groups, start=1):
        centroid = np.mean(np.vstack([vector_of[m] for m in members]), axis=0)
        clusters.append(Cluster(
            cluster_id=f"s{session_index}-c{ordinal}",
            session_index=session_index,
            member_fragment_ids=tuple(members),
            centroid=tuple(float(x) for x in centroid),
        ))
    return clusters


def cluster_session(fragments: Sequence[MemoryFragment], vectors: np.ndarray, config: ConsolidationConfig) -> SessionClustering:
    vectors = np.asarray(vectors, dtype=float)
    n = len(fragments)
    if n == 0:
        raise ValueError("cluster_session needs at least one fragment")
    if vectors.ndim != 2 or vectors.shape[0] != n:
        raise DimensionMismatchError(f"{n} fragments but vectors of shape {vectors.shape}")
    session_index = fragments[0].session_index
    ids = [f.fragment_id for f in fragments]
    vector_of = dict(zip(ids, vectors))
    singletons = [[fid] for fid in ids]

    if n <= 2:
        return SessionClustering(clusters=build_clusters(session_index, singletons, vector_of), k=n)

    best_k, best_score, best_labels = None, None, None
    for k in config.k_range(n):
        labels = kmeans_labels(vectors, k, config)
        try:
            score = mean_silhouette(labels, vectors)
        except SilhouetteUndefined:
            continue
        logger.debug(f"Session {session_index}: k={k} silhouette={score:.4f}")
        if best_score is None or score > best_score:
            best_k, best_score, best_labels = k, score, labels

    if best_score is None or best_score <= 0:
        logger.info(f"Session {session_index}: no positive silhouette; {n} singleton clusters")
        return SessionClustering(
            clusters=build_clusters(session_index, singletons, vector_of), k=n, silhouette=best_score, fallback=True
        )

    groups: Dict[int, List[str]] = {}
    for fid, label in zip(ids, best_labels):
        groups.setdefault(int(label), []).append(fid)
    clusters = build_clusters(session_index, list(groups.values()), vector_of)
    return SessionClustering(clusters=clusters, k=len(clusters), silhouette=best_score)

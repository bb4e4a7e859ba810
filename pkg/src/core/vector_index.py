"""
Exact retrieval structures: dense cosine index and Okapi BM25.
Both rank by descending score; scores equal to 12 decimals tie and are
ordered by fragment id.
"""
import logging
import math
import re
from collections import Counter, defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatchError
from .types import id_sort_key

logger = logging.getLogger(__name__)

TIE_DECIMALS = 12
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

Ranked = List[Tuple[str, float]]


def tokenize(text: str) -> List[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cosine over shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        logger.warning("cosine with a zero vector; defined as 0")
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def rank_scores(ids: Sequence[str], scores: Sequence[float], k: int) -> Ranked:
    order = sorted(range(len(ids)), key=lambda i: (-round(float(scores[i]), TIE_DECIMALS), id_sort_key(ids[i])))
    return [(ids[i], float(scores[i])) for i in order[:k]]


class DenseIndex:
    """
    (fragment_id, vector) entries; writable until sealed, read-only after.
    """

    def __init__(self):
        self._ids: List[str] = []
        self._rows: List[np.ndarray] = []
        self._matrix: np.ndarray = np.zeros((0, 0))
        self._norms: np.ndarray = np.zeros(0)
        self.sealed = False

    def add(self, fragment_id: str, vector: np.ndarray):
        if self.sealed:
            raise RuntimeError("DenseIndex is sealed")
        vector = np.asarray(vector, dtype=float)
        if self._rows and vector.shape != self._rows[0].shape:
            raise DimensionMismatchError(f"{fragment_id}: dimension {vector.shape} != {self._rows[0].shape}")
        if fragment_id in self._ids:
            raise ValueError(f"Duplicate fragment {fragment_id} in index")
        self._ids.append(fragment_id)
        self._rows.append(vector)

    def seal(self) -> "DenseIndex":
        if self._rows:
            self._matrix = np.vstack(self._rows)
            self._norms = np.linalg.norm(self._matrix, axis=1)
        self.sealed = True
        return self

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> List[str]:
        return list(self._ids)

    def vector(self, fragment_id: str) -> np.ndarray:
        return self._rows[self._ids.index(fragment_id)]

    def scores(self, query: np.ndarray) -> np.ndarray:
        query = np.asarray(query, dtype=float)
        if query.shape != (self._matrix.shape[1],):
            raise DimensionMismatchError(f"query dimension {query.shape} vs index {self._matrix.shape[1]}")
        qn = np.linalg.norm(query)
        denom = self._norms * qn
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, self._matrix @ query / np.where(denom > 0, denom, 1.0), 0.0)
        return np.clip(s, -1.0, 1.0)


def topk_dense(query: np.ndarray, index: DenseIndex, k: int) -> Ranked:
    if not index.sealed:
        raise RuntimeError("topk_dense needs a sealed index")
    if len(index) == 0:
        return []
    return rank_scores(index.ids, index.scores(query), k)


class Bm25Index:
    """
    Okapi BM25 over "key: content" texts. IDF = ln(1 + (N - df + 0.5) / (df + 0.5)).
    """

    def __init__(self, documents: Dict[str, str], k1: float = 1.2, b: float = 0.75):
        if k1 <= 0 or not 0 <= b <= 1:
            raise ValueError(f"BM25 needs k1 > 0 and 0 <= b <= 1 (got k1={k1}, b={b})")
        self.k1 = k1
        self.b = b
        self.doc_ids: List[str] = list(documents)
        self.doc_len: Dict[str, int] = {}
        self.postings: Dict[str, List[Tuple[str, int]]] = defaultdict(list)
        for doc_id, text in documents.items():
            tf = Counter(tokenize(text))
            self.doc_len[doc_id] = sum(tf.values())
            for term, freq in sorted(tf.items()):
                self.postings[term].append((doc_id, freq))
        self.N = len(self.doc_ids)
        self.avgdl = sum(self.doc_len.values()) / max(1, self.N)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1 + (self.N - df + 0.5) / (df + 0.5))

    def term_weight(self, freq: int, doc_len: int) -> float:
        norm = 1 - self.b + self.b * doc_len / self.avgdl if self.avgdl > 0 else 1.0
        return freq * (self.k1 + 1) / (freq + self.k1 * norm)

    def score_all(self, terms: Sequence[str]) -> Dict[str, float]:
        scores = {doc_id: 0.0 for doc_id in self.doc_ids}
        for term in terms:
            if term not in self.postings:
                continue
            idf = self.idf(term)
            for doc_id, freq in self.postings[term]:
                scores[doc_id] += idf * self.term_weight(freq, self.doc_len[doc_id])
        return scores


def bm25_score(query_terms: Sequence[str], fragment_id: str, index: Bm25Index) -> float:
    score = 0.0
    for term in query_terms:
        for doc_id, freq in index.postings.get(term, ()):
            if doc_id == fragment_id:
                score += index.idf(term) * index.term_weight(freq, index.doc_len[doc_id])
    return score


def topk_bm25(query: str, index: Bm25Index, k: int) -> Ranked:
    terms = tokenize(query)
    if not terms or index.N == 0:
        return []
    scores = index.score_all(terms)
    return rank_scores(index.doc_ids, [scores[d] for d in index.doc_ids], k)

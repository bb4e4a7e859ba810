"""
Lexical metric kernels. Tokenization: lowercase, split on
non-alphanumerics, drop empties. Empty inputs score 0.
"""
from collections import Counter
from typing import List, NamedTuple, Sequence

from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu

from ..core.vector_index import tokenize

# BLEU-1: clipped unigram precision times the brevity penalty
BLEU1_WEIGHTS = (1.0,)
_SMOOTHING = SmoothingFunction().method1


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _prf(overlap: int, n_pred: int, n_ref: int) -> PRF:
    precision = overlap / n_pred if n_pred else 0.0
    recall = overlap / n_ref if n_ref else 0.0
    return PRF(precision, recall, f1_score(precision, recall))


def _clipped_overlap(pred: Sequence[str], ref: Sequence[str]) -> int:
    ref_counts = Counter(ref)
    return sum(min(count, ref_counts[token]) for token, count in Counter(pred).items())


def bleu1(prediction: str, reference: str) -> float:
    pred, ref = tokenize(prediction), tokenize(reference)
    if not pred or not ref:
        return 0.0
    return float(sentence_bleu([ref], pred, weights=BLEU1_WEIGHTS, smoothing_function=_SMOOTHING))


def rouge1(prediction: str, reference: str) -> PRF:
    pred, ref = tokenize(prediction), tokenize(reference)
    return _prf(_clipped_overlap(pred, ref), len(pred), len(ref))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev: List[int] = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            row.append(prev[j - 1] + 1 if x == y else max(prev[j], row[j - 1]))
        prev = row
    return prev[-1]


def rougeL(prediction: str, reference: str) -> PRF:
    pred, ref = tokenize(prediction), tokenize(reference)
    return _prf(lcs_length(pred, ref), len(pred), len(ref))

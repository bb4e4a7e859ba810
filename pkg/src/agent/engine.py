"""
Inference phase: retrieve over M ∪ R, assemble a chronological context
under a token budget, and generate the answer.
"""
import logging
from typing import Callable, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from ..ai import prompts
from ..ai.embedding import Embedder
from ..ai.gateway import LLMGateway
from ..core.config_loader import Config
from ..core.store import MemoryStore
from ..core.types import MemoryFragment, id_sort_key
from ..core.vector_index import topk_bm25, topk_dense

logger = logging.getLogger(__name__)

DatasetStyle = Literal["locomo", "longmemeval"]
Ranked = List[Tuple[str, float]]


def heuristic_token_count(text: str) -> int:
    """Whitespace words × 4/3, rounded up."""
    words = len(text.split())
    return -(-words * 4 // 3)


def count_tokens(text: str, tokenizer: Optional[Callable[[str], int]] = None) -> int:
    return (tokenizer or heuristic_token_count)(text)


class RetrievalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mode: Literal["dense", "bm25"] = "dense"
    token_budget: int = Field(2048, ge=64)
    overfetch_k: int = Field(200, gt=0)
    tokenizer: Callable[[str], int] = heuristic_token_count
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    @classmethod
    def from_config(cls, cfg: Config) -> "RetrievalConfig":
        return cls(**cfg.section("retrieval"))


class AssembledContext(BaseModel):
    model_config = ConfigDict(frozen=True)

    lines: List[str]
    token_count: int
    included_fragment_ids: List[str]
    token_budget: int

    @property
    def text(self) -> str:
        return "\n".join(self.lines)


class QueryResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    question: str
    candidates: List[Tuple[str, float]]
    context: AssembledContext
    answer: Optional[str] = None


def chronological(fragments: Sequence[MemoryFragment]) -> List[MemoryFragment]:
    return sorted(fragments, key=lambda f: (f.temporal.sort_key(), id_sort_key(f.fragment_id)))


def retrieve(query: str, store: MemoryStore, config: RetrievalConfig, embedder: Optional[Embedder] = None) -> Ranked:
    if not store.sealed:
        raise RuntimeError("retrieve needs a sealed store")
    if len(store) == 0:
        return []
    if config.mode == "bm25":
        return topk_bm25(query, store.bm25_index, config.overfetch_k)
    if embedder is None:
        raise ValueError("Dense retrieval needs an embedder")
    return topk_dense(embedder.embed_text(query), store.dense_index, config.overfetch_k)


def assemble_context(candidates: Ranked, store: MemoryStore, config: RetrievalConfig) -> AssembledContext:
    """
    Greedy admission in rank order. A candidate that would push the final
    rendered text over budget is skipped and later ones are still tried.
    """
    admitted: List[MemoryFragment] = []
    token_count = 0
    for fragment_id, _ in candidates:
        trial = chronological([*admitted, store.get(fragment_id)])
        trial_count = count_tokens("\n".join(f.render_line() for f in trial), config.tokenizer)
        if trial_count <= config.token_budget:
            admitted = trial
            token_count = trial_count
    if candidates and not admitted:
        logger.warning(f"No fragment fits the {config.token_budget}-token budget; context is empty")
    return AssembledContext(
        lines=[f.render_line() for f in admitted],
        token_count=token_count,
        included_fragment_ids=[f.fragment_id for f in admitted],
        token_budget=config.token_budget,
    )


def build_answer_prompt(question: str, context: AssembledContext, dataset_style: DatasetStyle) -> str:
    template = prompts.LOCOMO_ANSWER_TEMPLATE if dataset_style == "locomo" else prompts.LONGMEMEVAL_ANSWER_TEMPLATE
    return prompts.render(template, context=context.text, question=question)


def answer(question: str, context: AssembledContext, gateway: LLMGateway, dataset_style: DatasetStyle) -> str:
    request = gateway.request_for("response", build_answer_prompt(question, context, dataset_style))
    return gateway.complete(request).strip()


class InferenceEngine:
    """Bundles a sealed store with the retrieval settings and backends used to query it."""

    def __init__(
        self,
        store: MemoryStore,
        config: RetrievalConfig,
        embedder: Optional[Embedder] = None,
        gateway: Optional[LLMGateway] = None,
    ):
        self.store = store
        self.config = config
        self.embedder = embedder
        self.gateway = gateway

    def context_for(self, question: str) -> Tuple[Ranked, AssembledContext]:
        candidates = retrieve(question, self.store, self.config, self.embedder)
        return candidates, assemble_context(candidates, self.store, self.config)

    def query(self, question: str, dataset_style: DatasetStyle = "locomo", dry_run: bool = False) -> QueryResult:
        candidates, context = self.context_for(question)
        logger.info(f"Query {question[:40]!r}: {len(candidates)} candidates, "
                    f"{len(context.included_fragment_ids)} admitted, {context.token_count} tokens")
        if dry_run:
            return QueryResult(question=question, candidates=candidates, context=context)
        if self.gateway is None:
            raise ValueError("Answering needs a gateway; use dry_run to stop after context assembly")
        return QueryResult(
            question=question,
            candidates=candidates,
            context=context,
            answer=answer(question, context, self.gateway, dataset_style),
        )

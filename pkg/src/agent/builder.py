"""
Memory construction for one conversation: Step-1 extraction per session,
embedding, Step-2 consolidation, then a sealed store.
"""
import logging
from typing import Optional

from joblib import Parallel, delayed

from ..ai.embedding import Embedder
from ..ai.gateway import LLMGateway
from ..core.config_loader import Config
from ..core.store import MemoryStore, RunManifest
from ..core.types import Conversation
from ..features.extract import ExtractionConfig, extract_session
from ..models.clustering import ConsolidationConfig
from ..models.consolidation import SessionMemory, consolidate_conversation

logger = logging.getLogger(__name__)


def resolve_n_jobs(n_jobs: Optional[int]) -> int:
    """0 or None means one worker per logical core."""
    return -1 if not n_jobs else int(n_jobs)


class MemoryBuilder:
    def __init__(
        self,
        gateway: Optional[LLMGateway],
        embedder: Embedder,
        extraction: ExtractionConfig,
        consolidation: ConsolidationConfig,
        config_hash: str = "",
        n_jobs: int = 1,
        bm25_k1: float = 1.2,
        bm25_b: float = 0.75,
    ):
        if gateway is None and (not extraction.skip_extraction or consolidation.reasoning_enabled):
            raise ValueError("A gateway is required unless both extraction and reasoning are ablated")
        self.gateway = gateway
        self.embedder = embedder
        self.extraction = extraction
        self.consolidation = consolidation
        self.config_hash = config_hash
        self.n_jobs = n_jobs
        self.bm25_k1 = bm25_k1
        self.bm25_b = bm25_b

    @classmethod
    def from_config(cls, cfg: Config, gateway: Optional[LLMGateway], embedder: Embedder) -> "MemoryBuilder":
        return cls(
            gateway,
            embedder,
            ExtractionConfig.from_config(cfg),
            ConsolidationConfig.from_config(cfg),
            config_hash=cfg.digest(),
            n_jobs=resolve_n_jobs(cfg.get("runtime.n_jobs", 0)),
            bm25_k1=cfg.get("retrieval.bm25_k1", 1.2),
            bm25_b=cfg.get("retrieval.bm25_b", 0.75),
        )

    def build(self, conversation: Conversation, manifest: Optional[RunManifest] = None) -> MemoryStore:
        sessions = conversation.sessions
        extracted = Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(extract_session)(s, self.gateway, self.extraction) for s in sessions
        )
        memories = []
        for session, fragments in zip(sessions, extracted):
            if manifest is not None:
                manifest.append("session_extracted", conversation_id=conversation.conversation_id,
                                session_index=session.session_index, fragment_ids=[f.fragment_id for f in fragments])
            memories.append(SessionMemory(
                session_index=session.session_index,
                session_date=session.session_date,
                fragments=fragments,
                vectors=self.embedder.embed_fragments(fragments),
            ))

        result = consolidate_conversation(memories, self.consolidation, self.gateway, manifest, self.n_jobs)
        store = MemoryStore(
            result.extracted,
            result.reasoned,
            result.vectors,
            pool=result.pool,
            trace=[t.model_dump(mode="json") for t in result.trace],
            embedding_backend=self.embedder.backend_id,
            dimension=self.embedder.dimension,
            config_hash=self.config_hash,
        )
        store.seal(self.embedder, self.bm25_k1, self.bm25_b)
        logger.info(f"Conversation {conversation.conversation_id}: |M|={len(store.extracted)}, "
                    f"|R|={len(store.reasoned)}, pool={len(store.pool.clusters)}")
        return store

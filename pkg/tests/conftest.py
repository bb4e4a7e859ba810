import datetime
import os
from typing import Callable, List, Optional, Union

import numpy as np
import pytest

from src.ai.embedding import Embedder, MockEmbeddingBackend
from src.ai.gateway import GatewayConfig, LLMGateway
from src.ai.provider import AIProvider, CompletionRequest, MockProvider
from src.core.config_loader import Config
from src.core.types import Category, MemoryFragment, Message, Session, TemporalRef
from src.mock.generator import ScriptedLLM

FIXTURE_DATASET = os.path.join(os.path.dirname(__file__), "..", "data", "fixtures", "locomo_mini.json")
GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


class StubProvider(AIProvider):
    """Replies from a list (cycled on the last entry) or a callable; records every request."""
    name = "stub"

    def __init__(self, replies: Union[List[Union[str, Exception]], Callable[[CompletionRequest], str]]):
        self.replies = replies
        self.requests: List[CompletionRequest] = []

    def generate(self, request: CompletionRequest) -> str:
        self.requests.append(request)
        if callable(self.replies):
            return self.replies(request)
        reply = self.replies[min(len(self.requests) - 1, len(self.replies) - 1)]
        if isinstance(reply, Exception):
            raise reply
        return reply


def gateway_settings(retry_limit: int = 2) -> GatewayConfig:
    return GatewayConfig.from_config(Config()).model_copy(update={"retry_limit": retry_limit})


@pytest.fixture
def offline_config(tmp_path) -> Config:
    return Config.load(overrides={
        "gateway.backend": "mock",
        "gateway.record_missing": True,
        "gateway.fixture_dir": str(tmp_path / "mock_llm"),
        "embedding.backend": "mock",
        "embedding.dimension": 32,
        "embedding.cache_dir": str(tmp_path / "embedding_cache"),
        "runtime.output_dir": str(tmp_path / "out"),
        "runtime.log_dir": str(tmp_path / "logs"),
        "runtime.n_jobs": 2,
    })


@pytest.fixture
def scripted_gateway(tmp_path) -> LLMGateway:
    provider = MockProvider(str(tmp_path / "mock_llm"), ScriptedLLM().respond)
    return LLMGateway(provider, gateway_settings())


@pytest.fixture
def embedder() -> Embedder:
    return Embedder(MockEmbeddingBackend(32))


def make_fragment(
    fragment_id: str,
    content: str = "plays guitar",
    key: Optional[str] = None,
    temporal: Optional[TemporalRef] = None,
    category: Category = Category.FACTUAL,
    session_index: Optional[int] = None,
) -> MemoryFragment:
    session = session_index or int(fragment_id.split("-")[0][1:])
    extra = {}
    if category == Category.REASONING:
        extra = {"inference_type": "accumulation", "source_pair": ("s1-c1", f"s{session}-c1")}
    else:
        extra = {"source_message_ids": (f"D{session}:1",)}
    return MemoryFragment(
        fragment_id=fragment_id,
        key=key or content.split()[0],
        content=content,
        category=category,
        temporal=temporal or TemporalRef.on_date(datetime.date(2023, 5, session)),
        session_index=session,
        **extra,
    )


def make_session(session_index: int, texts: List[str], date: datetime.date) -> Session:
    return Session(
        session_index=session_index,
        messages=tuple(
            Message(message_id=f"D{session_index}:{j + 1}", session_index=session_index, date=date, text=t)
            for j, t in enumerate(texts)
        ),
    )


def unit(*values: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v / np.linalg.norm(v)

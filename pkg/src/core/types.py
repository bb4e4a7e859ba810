import datetime
import re
from enum import Enum
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

_ID_PATTERN = re.compile(r"^s(\d+)-([a-z])(\d+)$")


def id_sort_key(identifier: str) -> tuple:
    """
    Natural order for "s{session}-{kind}{ordinal}" ids (fragments and clusters).
    Ids outside the scheme sort after, lexically.
    """
    match = _ID_PATTERN.match(identifier)
    if match:
        return (0, int(match.group(1)), match.group(2), int(match.group(3)), "")
    return (1, 0, "", 0, identifier)


class Category(str, Enum):
    FACTUAL = "factual"
    EXPERIENTIAL = "experiential"
    SUBJECTIVE = "subjective"
    REASONING = "reasoning"


class InferenceType(str, Enum):
    EXTENSION_GENERALIZATION = "extension_generalization"
    ACCUMULATION = "accumulation"
    SPECIFICATION_REFINEMENT = "specification_refinement"
    TRANSFORMATION = "transformation"
    CONNECTION_IMPLICATION = "connection_implication"


class Message(BaseModel):
    """
    One conversation turn.
    """
    model_config = ConfigDict(frozen=True)

    message_id: str = Field(..., min_length=1)
    session_index: int = Field(..., ge=1)
    date: datetime.date
    weekday: Optional[str] = None
    speaker: str = ""
    text: str

    @property
    def weekday_name(self) -> str:
        return self.weekday or self.date.strftime("%A")


class Session(BaseModel):
    model_config = ConfigDict(frozen=True)

    session_index: int = Field(..., ge=1)
    messages: Tuple[Message, ...]

    @model_validator(mode="after")
    def _check_messages(self):
        if not self.messages:
            raise ValueError(f"Session {self.session_index} has no messages")
        for m in self.messages:
            if m.session_index != self.session_index:
                raise ValueError(f"Message {m.message_id} belongs to session {m.session_index}, not {self.session_index}")
        return self

    @property
    def session_date(self) -> datetime.date:
        return self.messages[0].date

    def message(self, message_id: str) -> Optional[Message]:
        for m in self.messages:
            if m.message_id == message_id:
                return m
        return None


class Conversation(BaseModel):
    model_config = ConfigDict(frozen=True)

    conversation_id: str
    sessions: Tuple[Session, ...]

    @model_validator(mode="after")
    def _check_order(self):
        indexes = [s.session_index for s in self.sessions]
        if indexes != sorted(set(indexes)):
            raise ValueError(f"Sessions of {self.conversation_id} are not strictly ordered: {indexes}")
        seen = set()
        for s in self.sessions:
            for m in s.messages:
                if m.message_id in seen:
                    raise ValueError(f"Duplicate message_id {m.message_id} in {self.conversation_id}")
                seen.add(m.message_id)
        return self


TemporalKind = Literal["on_date", "before", "after", "range"]

# Order among variants sharing one anchor date
_KIND_RANK = {"before": 0, "on_date": 1, "range": 2, "after": 3}


class TemporalRef(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: TemporalKind
    start: datetime.date
    end: Optional[datetime.date] = None

    @model_validator(mode="after")
    def _check_range(self):
        if self.kind == "range":
            if self.end is None:
                raise ValueError("range needs an end date")
            if self.start > self.end:
                raise ValueError(f"range start {self.start} after end {self.end}")
        elif self.end is not None:
            raise ValueError(f"{self.kind} takes a single date")
        return self

    @classmethod
    def on_date(cls, d: datetime.date) -> "TemporalRef":
        return cls(kind="on_date", start=d)

    @classmethod
    def before(cls, d: datetime.date) -> "TemporalRef":
        return cls(kind="before", start=d)

    @classmethod
    def after(cls, d: datetime.date) -> "TemporalRef":
        return cls(kind="after", start=d)

    @classmethod
    def between(cls, start: datetime.date, end: datetime.date) -> "TemporalRef":
        return cls(kind="range", start=start, end=end)

    @property
    def anchor(self) -> datetime.date:
        return self.start

    def sort_key(self) -> Tuple[datetime.date, int]:
        return (self.anchor, _KIND_RANK[self.kind])

    def render(self) -> str:
        if self.kind == "before":
            return f"Before {self.start.isoformat()}"
        if self.kind == "after":
            return f"After {self.start.isoformat()}"
        if self.kind == "range":
            return f"{self.start.isoformat()} to {self.end.isoformat()}"
        return self.start.isoformat()


class MemoryFragment(BaseModel):
    """
    Atomic memory unit: (id, key, content, time) plus provenance.
    Extracted fragments point at their source messages; reasoned fragments
    point at the connected cluster pair they came from.
    """
    model_config = ConfigDict(frozen=True)

    fragment_id: str = Field(..., min_length=1)
    key: str = Field(..., min_length=1)
    content: str = Field(..., min_length=1)
    category: Category
    temporal: TemporalRef
    source_message_ids: Tuple[str, ...] = ()
    session_index: int = Field(..., ge=1)
    inference_type: Optional[InferenceType] = None
    source_pair: Optional[Tuple[str, str]] = None
    warnings: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_provenance(self):
        if not self.key.strip() or not self.content.strip():
            raise ValueError(f"{self.fragment_id}: key and content must be non-blank")
        if self.category == Category.REASONING:
            if self.inference_type is None or self.source_pair is None:
                raise ValueError(f"{self.fragment_id}: reasoning fragments need inference_type and source_pair")
        else:
            if self.inference_type is not None:
                raise ValueError(f"{self.fragment_id}: inference_type is reserved for reasoning fragments")
            if not self.source_message_ids:
                raise ValueError(f"{self.fragment_id}: extracted fragments need a source message")
        return self

    @property
    def is_reasoned(self) -> bool:
        return self.category == Category.REASONING

    @property
    def embedding_text(self) -> str:
        return f"{self.key}: {self.content}"

    def render_line(self) -> str:
        return f"[{self.key}, {self.temporal.render()}]: {self.content}"


class Cluster(BaseModel):
    model_config = ConfigDict(frozen=True)

    cluster_id: str
    session_index: int = Field(..., ge=1)
    member_fragment_ids: Tuple[str, ...] = Field(..., min_length=1)
    centroid: Tuple[float, ...]

    @property
    def centroid_vector(self) -> np.ndarray:
        return np.asarray(self.centroid, dtype=float)


class ConnectedPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    pool_cluster_id: str
    new_cluster_id: str
    similarity: float


class PersistentPool(BaseModel):
    """
    Clusters still waiting for a semantic match in a later session.
    """
    model_config = ConfigDict(frozen=True)

    clusters: Tuple[Cluster, ...] = ()

    @model_validator(mode="after")
    def _check_disjoint(self):
        ids = set()
        members = set()
        for c in self.clusters:
            if c.cluster_id in ids:
                raise ValueError(f"Duplicate cluster {c.cluster_id} in pool")
            ids.add(c.cluster_id)
            overlap = members.intersection(c.member_fragment_ids)
            if overlap:
                raise ValueError(f"Cluster {c.cluster_id} shares fragments {sorted(overlap)} with another pool cluster")
            members.update(c.member_fragment_ids)
        return self

    @property
    def cluster_ids(self) -> Tuple[str, ...]:
        return tuple(c.cluster_id for c in self.clusters)

    def get(self, cluster_id: str) -> Optional[Cluster]:
        for c in self.clusters:
            if c.cluster_id == cluster_id:
                return c
        return None


UnifiedCategory = Literal["single_hop", "multi_hop", "temporal_reasoning", "adversarial", "knowledge_update"]


class QaItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    question_id: str
    question: str
    gold_answer: str
    raw_type: str
    category: UnifiedCategory
    conversation_id: str
    # Adversarial items only: the phrase marking a safe reply, and the dataset's trap answer
    abstention_answer: Optional[str] = None
    adversarial_answer: Optional[str] = None

    @model_validator(mode="after")
    def _check_abstention(self):
        if self.category == "adversarial" and not self.abstention_answer:
            raise ValueError(f"adversarial item {self.question_id} has no abstention answer")
        return self

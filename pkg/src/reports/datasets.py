"""
Benchmark loaders and question-type unification.

Field maps
  LoCoMo (list of samples):
    sample_id                          -> conversation_id
    conversation.session_{n}           -> session n, turns {speaker, dia_id, text}
    conversation.session_{n}_date_time -> message date ("1:56 pm on 8 May, 2023")
    qa[] {question, answer, category: int}; category 5 carries adversarial_answer (a trap)
                                       and is graded against ABSTENTION_ANSWER
  LongMemEval (list of questions, one conversation each):
    question_id, question_type, question, answer
    haystack_sessions[][] {role, content}, haystack_dates[] ("2023/05/20 (Sat) 02:21")
  Native (object or list of objects):
    conversation_id, sessions[] {session_index, messages[] {message_id, date, speaker, text}},
    qa[] {question_id, question, answer, type}
"""
import datetime
import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError

from ..core.config_loader import Config
from ..core.errors import DatasetFormatError, UnmappableCategoryError
from ..core.types import Conversation, Message, QaItem, Session, UnifiedCategory

logger = logging.getLogger(__name__)

DatasetName = Literal["locomo", "longmemeval", "native"]

LOCOMO_DATE_FORMAT = "%I:%M %p on %d %B, %Y"
LONGMEMEVAL_DATE_FORMAT = "%Y/%m/%d (%a) %H:%M"

# Gold answer of LoCoMo adversarial items and native items without one
ABSTENTION_ANSWER = "Not mentioned in the conversation"

DEFAULT_LOCOMO_CATEGORIES = {
    1: "open-domain-knowledge",
    2: "multi-hop",
    3: "temporal-reasoning",
    4: "single-hop",
    5: "adversarial",
}

_LOCOMO_UNIFIED = {
    "open-domain-knowledge": "single_hop",
    "single-hop": "single_hop",
    "multi-hop": "multi_hop",
    "temporal-reasoning": "temporal_reasoning",
    "adversarial": "adversarial",
}

_HOP_UNIFIED = {
    "multi-hop": "multi_hop",
    "temporal-reasoning": "temporal_reasoning",
}


class Dataset(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: DatasetName
    path: str
    conversations: List[Conversation]
    items: List[QaItem]

    @property
    def answer_style(self) -> Literal["locomo", "longmemeval"]:
        return "longmemeval" if self.name == "longmemeval" else "locomo"

    def conversation(self, conversation_id: str) -> Conversation:
        for c in self.conversations:
            if c.conversation_id == conversation_id:
                return c
        raise KeyError(conversation_id)

    def category_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for item in self.items:
            counts[item.category] = counts.get(item.category, 0) + 1
        return counts


def unify_category(dataset: str, raw_type: str, question_id: str = "") -> UnifiedCategory:
    raw = str(raw_type).strip().lower().replace("_", "-").replace(" ", "-")
    if dataset in ("locomo", "native"):
        if raw in _LOCOMO_UNIFIED:
            return _LOCOMO_UNIFIED[raw]
        if raw == "knowledge-update" and dataset == "native":
            return "knowledge_update"
        raise UnmappableCategoryError(dataset, raw_type)
    if dataset == "longmemeval":
        if question_id.endswith("_abs"):
            return "adversarial"
        if "single" in raw:
            return "single_hop"
        if raw.startswith("knowledge"):
            return "knowledge_update"
        hop = raw.replace("session", "hop")
        if hop in _HOP_UNIFIED:
            return _HOP_UNIFIED[hop]
        raise UnmappableCategoryError(dataset, raw_type)
    raise UnmappableCategoryError(dataset, raw_type)


def _parse_date(raw: Any, fmt: str, path: str, location: str) -> datetime.date:
    try:
        return datetime.datetime.strptime(str(raw).strip(), fmt).date()
    except ValueError as e:
        raise DatasetFormatError(path, location, f"bad date {raw!r}: {e}") from e


def _read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise DatasetFormatError(path, "file", "not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(path, f"line {e.lineno} col {e.colno}", e.msg) from e


def detect_dataset(data: Any) -> DatasetName:
    first = data[0] if isinstance(data, list) and data else data
    if isinstance(first, dict):
        if "haystack_sessions" in first:
            return "longmemeval"
        if "conversation" in first and "qa" in first:
            return "locomo"
        if "sessions" in first:
            return "native"
    raise ValueError("unrecognized dataset layout")


# ===== LoCoMo =====
def _locomo_sessions(sample: Dict[str, Any], path: str, where: str) -> Tuple[Session, ...]:
    conv = sample.get("conversation")
    if not isinstance(conv, dict):
        raise DatasetFormatError(path, where, "missing 'conversation' object")
    indexes = sorted(
        int(k.split("_")[1]) for k in conv
        if k.startswith("session_") and k.count("_") == 1 and k.split("_")[1].isdigit()
    )
    sessions = []
    for n in indexes:
        turns = conv.get(f"session_{n}") or []
        if not turns:
            continue
        date = _parse_date(conv.get(f"session_{n}_date_time"), LOCOMO_DATE_FORMAT, path, f"{where}.session_{n}_date_time")
        messages = []
        for j, turn in enumerate(turns):
            try:
                messages.append(Message(
                    message_id=str(turn.get("dia_id") or f"D{n}:{j + 1}"),
                    session_index=n,
                    date=date,
                    speaker=str(turn.get("speaker", "")),
                    text=str(turn.get("text", "")),
                ))
            except (AttributeError, ValidationError) as e:
                raise DatasetFormatError(path, f"{where}.session_{n}[{j}]", str(e)) from e
        sessions.append(Session(session_index=n, messages=tuple(messages)))
    return tuple(sessions)


def load_locomo(path: str, category_map: Optional[Dict[int, str]] = None) -> Dataset:
    category_map = category_map or DEFAULT_LOCOMO_CATEGORIES
    data = _read_json(path)
    if not isinstance(data, list):
        raise DatasetFormatError(path, "root", "expected a list of samples")
    conversations, items = [], []
    for s, sample in enumerate(data):
        where = f"[{s}]"
        conversation_id = str(sample.get("sample_id") or f"conv-{s}")
        try:
            conversations.append(Conversation(conversation_id=conversation_id, sessions=_locomo_sessions(sample, path, where)))
        except ValidationError as e:
            raise DatasetFormatError(path, where, str(e)) from e
        for q, qa in enumerate(sample.get("qa") or []):
            qwhere = f"{where}.qa[{q}]"
            raw_category = qa.get("category")
            try:
                raw_type = category_map[int(raw_category)]
            except (KeyError, TypeError, ValueError):
                raise UnmappableCategoryError("locomo", str(raw_category))
            if "question" not in qa:
                raise DatasetFormatError(path, qwhere, "missing 'question'")
            question_id = f"{conversation_id}-q{q + 1}"
            category = unify_category("locomo", raw_type, question_id)
            adversarial = category == "adversarial"
            trap = qa.get("adversarial_answer")
            items.append(QaItem(
                question_id=question_id,
                question=str(qa["question"]),
                gold_answer=ABSTENTION_ANSWER if adversarial else str(qa.get("answer", "")),
                raw_type=raw_type,
                category=category,
                conversation_id=conversation_id,
                abstention_answer=ABSTENTION_ANSWER if adversarial else None,
                adversarial_answer=str(trap) if adversarial and trap is not None else None,
            ))
    logger.info(f"Loaded LoCoMo {path}: {len(conversations)} conversations, {len(items)} questions")
    return Dataset(name="locomo", path=path, conversations=conversations, items=items)


# ===== LongMemEval =====
def load_longmemeval(path: str) -> Dataset:
    data = _read_json(path)
    if not isinstance(data, list):
        raise DatasetFormatError(path, "root", "expected a list of questions")
    conversations, items = [], []
    for q, entry in enumerate(data):
        where = f"[{q}]"
        try:
            question_id = str(entry["question_id"])
            raw_type = str(entry["question_type"])
            haystack = entry.get("haystack_sessions") or []
            dates = entry.get("haystack_dates") or []
        except (KeyError, TypeError) as e:
            raise DatasetFormatError(path, where, f"missing field {e}") from e
        if len(haystack) != len(dates):
            raise DatasetFormatError(path, where, f"{len(haystack)} sessions but {len(dates)} dates")

        dated = [
            (_parse_date(d, LONGMEMEVAL_DATE_FORMAT, path, f"{where}.haystack_dates[{i}]"), i, turns)
            for i, (d, turns) in enumerate(zip(dates, haystack))
        ]
        dated.sort(key=lambda t: (t[0], t[1]))
        sessions = []
        try:
            for date, _, turns in dated:
                if not turns:
                    continue
                n = len(sessions) + 1
                messages = tuple(
                    Message(message_id=f"D{n}:{j + 1}", session_index=n, date=date,
                            speaker=str(turn.get("role", "")), text=str(turn.get("content", "")))
                    for j, turn in enumerate(turns)
                )
                sessions.append(Session(session_index=n, messages=messages))
            conversations.append(Conversation(conversation_id=question_id, sessions=tuple(sessions)))
        except (ValidationError, AttributeError) as e:
            raise DatasetFormatError(path, where, str(e)) from e
        category = unify_category("longmemeval", raw_type, question_id)
        answer = str(entry.get("answer", ""))
        items.append(QaItem(
            question_id=question_id,
            question=str(entry.get("question", "")),
            gold_answer=answer,
            raw_type=raw_type,
            category=category,
            conversation_id=question_id,
            # _abs answers state why the question cannot be answered
            abstention_answer=(answer or ABSTENTION_ANSWER) if category == "adversarial" else None,
        ))
    logger.info(f"Loaded LongMemEval {path}: {len(items)} questions")
    return Dataset(name="longmemeval", path=path, conversations=conversations, items=items)


# ===== Native =====
def load_native(path: str) -> Dataset:
    data = _read_json(path)
    records = data if isinstance(data, list) else [data]
    conversations, items = [], []
    for c, record in enumerate(records):
        where = f"[{c}]"
        try:
            conversation = Conversation.model_validate({
                "conversation_id": record.get("conversation_id", f"conv-{c}"),
                "sessions": [
                    {"session_index": s["session_index"],
                     "messages": [{**m, "session_index": s["session_index"]} for m in s["messages"]]}
                    for s in record.get("sessions", [])
                ],
            })
        except (ValidationError, KeyError, TypeError, AttributeError) as e:
            raise DatasetFormatError(path, where, str(e)) from e
        conversations.append(conversation)
        for q, qa in enumerate(record.get("qa") or []):
            question_id = str(qa.get("question_id") or f"{conversation.conversation_id}-q{q + 1}")
            raw_type = str(qa.get("type", "single-hop"))
            category = unify_category("native", raw_type, question_id)
            answer = str(qa.get("answer", ""))
            if category == "adversarial":
                answer = answer or ABSTENTION_ANSWER
            items.append(QaItem(
                question_id=question_id,
                question=str(qa.get("question", "")),
                gold_answer=answer,
                raw_type=raw_type,
                category=category,
                conversation_id=conversation.conversation_id,
                abstention_answer=answer if category == "adversarial" else None,
                adversarial_answer=qa.get("adversarial_answer") if category == "adversarial" else None,
            ))
    return Dataset(name="native", path=path, conversations=conversations, items=items)


def load_dataset(path: str, name: Optional[str] = None, cfg: Optional[Config] = None) -> Dataset:
    if name is None:
        try:
            name = detect_dataset(_read_json(path))
        except ValueError as e:
            raise DatasetFormatError(path, "root", str(e)) from e
    if name == "locomo":
        category_map = None
        if cfg is not None and cfg.section("evaluation.locomo_categories"):
            category_map = {int(k): v for k, v in cfg.section("evaluation.locomo_categories").items()}
        return load_locomo(path, category_map)
    if name == "longmemeval":
        return load_longmemeval(path)
    if name == "native":
        return load_native(path)
    raise DatasetFormatError(path, "root", f"unknown dataset kind {name!r}")

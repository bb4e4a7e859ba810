import logging
from typing import Any, Dict, List

from pydantic import BaseModel, ConfigDict

from ..ai import prompts
from ..ai.gateway import LLMGateway
from ..core.config_loader import Config
from ..core.temporal import parse_temporal
from ..core.types import Category, MemoryFragment, Session, TemporalRef

logger = logging.getLogger(__name__)

RAW_TURN_KEY_TOKENS = 5


class ExtractionConfig(BaseModel):
    """Step-1 switches; each one is an independent ablation."""
    model_config = ConfigDict(frozen=True)

    use_categories: bool = True
    use_temporal_reasoning: bool = True
    skip_extraction: bool = False

    @classmethod
    def from_config(cls, cfg: Config) -> "ExtractionConfig":
        return cls(**cfg.section("extraction"))

    @property
    def required_keys(self) -> List[str]:
        return list(prompts.CATEGORY_KEYS) if self.use_categories else [prompts.FLAT_KEY]


def render_session(session: Session) -> str:
    return "\n".join(
        f"[{m.message_id}] ({m.date.isoformat()} {m.weekday_name}) {m.text}" for m in session.messages
    )


def build_extraction_prompt(session: Session, config: ExtractionConfig) -> str:
    past_date = "Before 2024-05-17" if config.use_temporal_reasoning else "2024-05-17"
    example = prompts.EXAMPLE_CATEGORIZED if config.use_categories else prompts.EXAMPLE_FLAT
    return prompts.render(
        prompts.EXTRACTION_TEMPLATE,
        goal=prompts.GOAL_CATEGORIZED if config.use_categories else prompts.GOAL_FLAT,
        definitions=prompts.DEFINITIONS_CATEGORIZED if config.use_categories else prompts.DEFINITIONS_FLAT,
        identify_instruction=prompts.IDENTIFY_CATEGORIZED if config.use_categories else prompts.IDENTIFY_FLAT,
        date_instructions=(
            prompts.DATE_INSTRUCTIONS_TEMPORAL if config.use_temporal_reasoning else prompts.DATE_INSTRUCTIONS_VERBATIM
        ),
        format_instruction=prompts.FORMAT_CATEGORIZED if config.use_categories else prompts.FORMAT_FLAT,
        example_answer=prompts.render(example, past_date=past_date),
        conversation=render_session(session),
    )


def _category_lists(tree: Dict[str, Any], config: ExtractionConfig):
    if config.use_categories:
        for list_key, category in prompts.CATEGORY_KEYS.items():
            yield list_key, Category(category), tree.get(list_key) or []
    else:
        # Flat extraction: one shared category
        yield prompts.FLAT_KEY, Category.FACTUAL, tree.get(prompts.FLAT_KEY) or []


def parse_extraction(tree: Dict[str, Any], session: Session, config: ExtractionConfig) -> List[MemoryFragment]:
    fragments: List[MemoryFragment] = []
    ordinal = 0
    for list_key, category, entries in _category_lists(tree, config):
        if not isinstance(entries, list):
            logger.warning(f"Session {session.session_index}: {list_key} is not a list; ignoring it")
            continue
        for position, entry in enumerate(entries):
            where = f"session {session.session_index} {list_key}[{position}]"
            if not isinstance(entry, dict):
                logger.warning(f"{where}: entry is not an object; dropped")
                continue
            key = str(entry.get("key") or "").strip()
            content = str(entry.get("value") or entry.get("content") or "").strip()
            message_id = str(entry.get("message_id") or "").strip().strip("[]")
            if not key or not content:
                logger.warning(f"{where}: empty key or value; dropped")
                continue
            message = session.message(message_id)
            if message is None:
                logger.warning(f"{where}: unknown message_id {message_id!r}; dropped")
                continue

            if config.use_temporal_reasoning:
                temporal, warnings = parse_temporal(str(entry.get("date") or ""), message.date)
            else:
                temporal, warnings = TemporalRef.on_date(message.date), []

            ordinal += 1
            fragments.append(MemoryFragment(
                fragment_id=f"s{session.session_index}-m{ordinal}",
                key=key,
                content=content,
                category=category,
                temporal=temporal,
                source_message_ids=(message.message_id,),
                session_index=session.session_index,
                warnings=tuple(warnings),
            ))

    if not fragments and not any(entries for _, _, entries in _category_lists(tree, config)):
        logger.warning(f"Session {session.session_index}: extraction returned no information")
    return fragments


def raw_turn_fragments(session: Session) -> List[MemoryFragment]:
    """One fragment per message, used when Step 1 is ablated."""
    fragments = []
    for m in session.messages:
        if not m.text.strip():
            logger.warning(f"Message {m.message_id} is blank; no raw-turn fragment")
            continue
        fragments.append(MemoryFragment(
            fragment_id=f"s{session.session_index}-m{len(fragments) + 1}",
            key=" ".join(m.text.split()[:RAW_TURN_KEY_TOKENS]),
            content=m.text,
            category=Category.FACTUAL,
            temporal=TemporalRef.on_date(m.date),
            source_message_ids=(m.message_id,),
            session_index=session.session_index,
        ))
    return fragments


def extract_session(session: Session, gateway: LLMGateway, config: ExtractionConfig) -> List[MemoryFragment]:
    if config.skip_extraction:
        return raw_turn_fragments(session)
    request = gateway.request_for("extract", build_extraction_prompt(session, config))
    tree = gateway.complete_structured(request, config.required_keys)
    fragments = parse_extraction(tree, session, config)
    logger.info(f"Session {session.session_index}: {len(fragments)} fragments from {len(session.messages)} messages")
    return fragments

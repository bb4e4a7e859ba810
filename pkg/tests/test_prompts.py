import datetime
import os

import pytest

from src.agent.engine import AssembledContext, build_answer_prompt
from src.ai import prompts
from src.core.types import Category, TemporalRef
from src.features.extract import ExtractionConfig, build_extraction_prompt
from src.models.consolidation import build_reasoning_prompt
from src.reports.judge import build_judge_prompt
from tests.conftest import GOLDEN_DIR, make_fragment, make_session

QUESTION = "Who is Caroline's guitar teacher?"
CONTEXT_LINES = [
    "[guitar lessons, Before 2023-05-08]: Started guitar lessons with teacher Marco",
    "[open mic, 2023-06-14]: Performed acoustic guitar at an open mic night",
]


def golden(name: str) -> str:
    with open(os.path.join(GOLDEN_DIR, name), "r", encoding="utf-8") as f:
        return f.read().rstrip("\n")


def fixture_context() -> AssembledContext:
    return AssembledContext(lines=CONTEXT_LINES, token_count=20, included_fragment_ids=["s1-m1", "s3-m1"],
                            token_budget=1024)


def test_judge_prompt_matches_golden():
    assert build_judge_prompt(QUESTION, "Marco", "Her teacher Marco") == golden("judge_prompt.txt")


def test_locomo_answer_prompt_matches_golden():
    rendered = build_answer_prompt(QUESTION, fixture_context(), "locomo")
    assert rendered == golden("locomo_answer_prompt.txt")
    assert rendered.endswith("Short Answer:")
    assert "Answer with exact words from the context whenever possible" in rendered


def test_longmemeval_answer_prompt_matches_golden():
    rendered = build_answer_prompt(QUESTION, fixture_context(), "longmemeval")
    assert rendered == golden("longmemeval_answer_prompt.txt")
    for n in range(1, 7):
        assert f"\n{n}. " in rendered
    assert "Respond with a short phrase only" in rendered


def test_reasoning_prompt_matches_golden():
    pool = [make_fragment("s1-m1", "Started guitar lessons with teacher Marco", key="guitar lessons",
                          temporal=TemporalRef.before(datetime.date(2023, 5, 8)))]
    new = [make_fragment("s3-m1", "Performed acoustic guitar at an open mic night", key="open mic",
                         temporal=TemporalRef.on_date(datetime.date(2023, 6, 14)))]
    assert build_reasoning_prompt(pool, new) == golden("reasoning_prompt.txt")


def test_reasoning_prompt_orders_fragments_chronologically():
    late = make_fragment("s1-m1", "late fact", temporal=TemporalRef.on_date(datetime.date(2023, 6, 1)))
    early = make_fragment("s2-m1", "early fact", temporal=TemporalRef.on_date(datetime.date(2023, 1, 1)))
    rendered = build_reasoning_prompt([late], [early])
    assert rendered.index("early fact") < rendered.index("late fact")


def test_extraction_prompt_matches_golden():
    session = make_session(1, [
        "I started guitar lessons with my teacher Marco.",
        "I plan to run the Bay marathon in October.",
    ], datetime.date(2023, 5, 8))
    rendered = build_extraction_prompt(session, ExtractionConfig())
    assert rendered == golden("extraction_prompt.txt")
    assert 'mark as "Before [message-date]"' in rendered


def test_flat_verbatim_extraction_prompt():
    session = make_session(1, ["I like tea."], datetime.date(2023, 5, 8))
    rendered = build_extraction_prompt(session, ExtractionConfig(use_categories=False, use_temporal_reasoning=False))
    assert '"Personal_Information"' in rendered
    assert "Factual, Experiential, or Subjective" not in rendered
    assert "Before [message-date]" not in rendered
    assert "Before 2024-05-17" not in rendered
    assert "{{$" not in rendered


def test_judge_prompt_marker():
    assert "Assign a score from 0 to 100" in build_judge_prompt("q", "g", "p")


def test_render_requires_every_variable():
    with pytest.raises(KeyError):
        prompts.render(prompts.JUDGE_TEMPLATE, question="q", gold_answer="g")


def test_render_is_single_pass():
    # A value that looks like a placeholder is not expanded again
    rendered = prompts.render("{{$a}} {{$b}}", a="{{$b}}", b="x")
    assert rendered == "{{$b}} x"


def test_category_keys_cover_extracted_categories():
    assert set(prompts.CATEGORY_KEYS.values()) == {c.value for c in Category} - {"reasoning"}

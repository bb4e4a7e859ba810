import datetime
import json

import pytest

from src.ai.gateway import LLMGateway
from src.core.errors import StructuredOutputError
from src.core.types import Category, TemporalRef
from src.features.extract import (
    ExtractionConfig,
    extract_session,
    parse_extraction,
    raw_turn_fragments,
    render_session,
)
from tests.conftest import StubProvider, gateway_settings, make_session

DATE = datetime.date(2023, 5, 8)


@pytest.fixture
def session():
    return make_session(2, [
        "I started guitar lessons with my teacher Marco.",
        "I plan to run the Bay marathon in October.",
        "I work as a nurse at the city hospital.",
    ], DATE)


def reply(**lists) -> str:
    tree = {"Factual_Information": [], "Experiential_Information": [], "Subjective_Information": []}
    tree.update(lists)
    return json.dumps(tree)


def test_render_session_line_format(session):
    assert render_session(session).splitlines()[0] == \
        "[D2:1] (2023-05-08 Monday) I started guitar lessons with my teacher Marco."


def test_parse_assigns_ids_categories_and_temporals(session):
    tree = json.loads(reply(
        Factual_Information=[{"key": "job", "value": "Works as a nurse", "message_id": "D2:3", "date": "2023-05-08"}],
        Experiential_Information=[{"key": "guitar", "value": "Started guitar lessons", "message_id": "[D2:1]",
                                   "date": "Before 2023-05-08"}],
        Subjective_Information=[{"key": "marathon", "value": "Plans to run a marathon", "message_id": "D2:2",
                                 "date": "After 2023-05-08"}],
    ))
    fragments = parse_extraction(tree, session, ExtractionConfig())
    assert [f.fragment_id for f in fragments] == ["s2-m1", "s2-m2", "s2-m3"]
    assert [f.category for f in fragments] == [Category.FACTUAL, Category.EXPERIENTIAL, Category.SUBJECTIVE]
    assert fragments[1].source_message_ids == ("D2:1",)
    assert fragments[1].temporal == TemporalRef.before(DATE)
    assert fragments[2].temporal == TemporalRef.after(DATE)


def test_parse_drops_bad_entries(session):
    tree = json.loads(reply(Factual_Information=[
        {"key": "", "value": "no key", "message_id": "D2:1", "date": "2023-05-08"},
        {"key": "ghost", "value": "unknown message", "message_id": "D9:9", "date": "2023-05-08"},
        "not an object",
        {"key": "job", "value": "Works as a nurse", "message_id": "D2:3", "date": "someday"},
    ]))
    fragments = parse_extraction(tree, session, ExtractionConfig())
    assert [f.key for f in fragments] == ["job"]
    assert fragments[0].temporal == TemporalRef.on_date(DATE)
    assert fragments[0].warnings


def test_without_temporal_reasoning_dates_are_message_dates(session):
    tree = json.loads(reply(Experiential_Information=[
        {"key": "guitar", "value": "Started lessons", "message_id": "D2:1", "date": "Before 2023-05-08"},
    ]))
    fragments = parse_extraction(tree, session, ExtractionConfig(use_temporal_reasoning=False))
    assert fragments[0].temporal == TemporalRef.on_date(DATE)


def test_flat_extraction_single_category(session):
    tree = {"Personal_Information": [
        {"key": "guitar", "value": "Started lessons", "message_id": "D2:1", "date": "2023-05-08"},
        {"key": "job", "value": "Works as a nurse", "message_id": "D2:3", "date": "2023-05-08"},
    ]}
    fragments = parse_extraction(tree, session, ExtractionConfig(use_categories=False))
    assert {f.category for f in fragments} == {Category.FACTUAL}


def test_empty_extraction_is_not_an_error(session):
    assert parse_extraction(json.loads(reply()), session, ExtractionConfig()) == []


def test_raw_turns_when_step1_is_skipped(session):
    fragments = extract_session(session, None, ExtractionConfig(skip_extraction=True))
    assert [f.content for f in fragments] == [m.text for m in session.messages]
    assert fragments[0].key == "I started guitar lessons with"
    assert all(f.temporal == TemporalRef.on_date(DATE) for f in fragments)


def test_raw_turns_skip_blank_messages():
    session = make_session(1, ["hello there friend", "   "], DATE)
    assert len(raw_turn_fragments(session)) == 1


def test_extract_session_through_gateway(session):
    provider = StubProvider([reply(Factual_Information=[
        {"key": "job", "value": "Works as a nurse", "message_id": "D2:3", "date": "2023-05-08"},
    ])])
    gateway = LLMGateway(provider, gateway_settings())
    fragments = extract_session(session, gateway, ExtractionConfig())
    assert len(fragments) == 1
    assert provider.requests[0].temperature == 0.0


def test_extract_session_propagates_structured_failure(session):
    gateway = LLMGateway(StubProvider(["I cannot help with that"]), gateway_settings(retry_limit=1))
    with pytest.raises(StructuredOutputError):
        extract_session(session, gateway, ExtractionConfig())


def test_scripted_model_fills_all_three_categories(session, scripted_gateway):
    fragments = extract_session(session, scripted_gateway, ExtractionConfig())
    assert {f.category for f in fragments} == {Category.FACTUAL, Category.EXPERIENTIAL, Category.SUBJECTIVE}
    guitar = next(f for f in fragments if "guitar" in f.content)
    assert guitar.temporal == TemporalRef.before(DATE)

import pytest

from src.ai.gateway import LLMGateway
from src.reports.judge import JUDGE_RETRY_INSTRUCTION, judge, parse_score
from tests.conftest import StubProvider, gateway_settings


@pytest.mark.parametrize("text, expected", [
    ("100", 100),
    ("Score: 85", 85),
    ("85/100", 85),
    ("I'd say 140", 100),
    ("-5", 0),
    ("great answer", None),
    ("", None),
])
def test_parse_score(text, expected):
    assert parse_score(text) == expected


def test_judge_scores_on_first_reply():
    provider = StubProvider(["Score: 85"])
    outcome = judge("Who?", "Marco", "Her teacher Marco", LLMGateway(provider, gateway_settings()))
    assert outcome.score == 85 and not outcome.failed
    assert len(provider.requests) == 1
    assert provider.requests[0].temperature == 0.0


def test_judge_retries_once_then_fails():
    provider = StubProvider(["great answer", "still no number"])
    outcome = judge("Who?", "Marco", "Sam", LLMGateway(provider, gateway_settings()))
    assert outcome.failed
    assert outcome.raw_text == "still no number"
    assert len(provider.requests) == 2
    assert provider.requests[1].user_prompt.endswith(JUDGE_RETRY_INSTRUCTION)


def test_judge_recovers_on_retry():
    provider = StubProvider(["great answer", "70"])
    assert judge("Who?", "Marco", "Marco", LLMGateway(provider, gateway_settings())).score == 70


def test_scripted_judge_uses_lexical_overlap(scripted_gateway):
    assert judge("Who?", "Marco", "Marco", scripted_gateway).score == 100
    assert judge("Who?", "Marco", "Sam", scripted_gateway).score == 0
    assert judge("Who?", "Marco", "Her teacher Marco", scripted_gateway).score == 50

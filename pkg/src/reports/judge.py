import logging
import re
from typing import Optional

from pydantic import BaseModel, ConfigDict

from ..ai import prompts
from ..ai.gateway import LLMGateway

logger = logging.getLogger(__name__)

JUDGE_RETRY_INSTRUCTION = "\n\nReply with one integer between 0 and 100 and nothing else."
_FIRST_INTEGER = re.compile(r"-?\d+")


class JudgeOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    score: Optional[int] = None
    raw_text: str = ""

    @property
    def failed(self) -> bool:
        return self.score is None


def parse_score(text: str) -> Optional[int]:
    match = _FIRST_INTEGER.search(text)
    if match is None:
        return None
    return max(0, min(100, int(match.group(0))))


def build_judge_prompt(question: str, gold: str, prediction: str) -> str:
    return prompts.render(prompts.JUDGE_TEMPLATE, question=question, gold_answer=gold, predicted_answer=prediction)


def judge(question: str, gold: str, prediction: str, gateway: LLMGateway) -> JudgeOutcome:
    """
    Scores a prediction 0-100. An unparseable reply gets one retry; a second
    failure is returned as a failed outcome rather than raised.
    """
    request = gateway.request_for("judge", build_judge_prompt(question, gold, prediction))
    raw = gateway.complete(request)
    score = parse_score(raw)
    if score is None:
        logger.warning(f"Judge reply {raw[:60]!r} has no integer; retrying once")
        retry = request.model_copy(update={"user_prompt": request.user_prompt + JUDGE_RETRY_INSTRUCTION})
        raw = gateway.complete(retry)
        score = parse_score(raw)
        if score is None:
            logger.warning(f"Judge failure for question {question[:40]!r}: {raw[:60]!r}")
    return JudgeOutcome(score=score, raw_text=raw)

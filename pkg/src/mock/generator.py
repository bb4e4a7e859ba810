"""
Deterministic stand-in for a chat model. Recognizes the extraction,
reasoning, answer and judge prompts and replies in their expected shape,
so the whole pipeline runs offline and fixture sets can be recorded.
"""
import datetime
import json
import re
from collections import Counter
from typing import Dict, List, Optional, Tuple

from ..ai.provider import CompletionRequest
from ..core.temporal import UnresolvableDate, resolve_relative_date
from ..core.vector_index import tokenize
from ..reports.metrics import rouge1

ABSTAIN = "Not mentioned in the conversation"

_MESSAGE_LINE = re.compile(r"^\[([^\]]+)\] \((\d{4}-\d{2}-\d{2}) [A-Za-z]+\) (.*)$")
_FRAGMENT_LINE = re.compile(r"^\[(.+?), ([^\]]*)\]: (.*)$")
_ISO_DATE = re.compile(r"\d{4}-\d{2}-\d{2}")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_RELATIVE = re.compile(r"\b(yesterday|tomorrow|last week|last month|(?:\w+) days? ago|in (?:\w+) days?)\b", re.IGNORECASE)

STOPWORDS = {
    "a", "an", "the", "i", "im", "i'm", "me", "my", "we", "our", "you", "your", "he", "she", "it", "its", "they",
    "them", "is", "am", "are", "was", "were", "be", "been", "to", "of", "in", "on", "at", "for", "with", "and",
    "or", "but", "so", "that", "this", "just", "really", "very", "have", "has", "had", "do", "did", "does",
    "what", "when", "where", "who", "how", "which", "why", "m", "s", "t", "ve", "ll", "d", "re", "about",
    "from", "by", "as", "there", "here", "now", "then", "also", "some", "any", "all", "up", "out", "not",
}

SUBJECTIVE_WORDS = {"like", "love", "hate", "prefer", "think", "believe", "feel", "want", "plan", "hope", "usually",
                    "often", "goal", "wish", "enjoy", "favorite", "dream"}
EXPERIENTIAL_WORDS = {"went", "did", "saw", "met", "visited", "attended", "bought", "tried", "finished", "started",
                      "joined", "yesterday", "ago", "last", "took", "ran", "played", "made", "got", "moved", "read"}
FUTURE_WORDS = {"plan", "planning", "will", "going", "hope", "want", "next", "tomorrow"}
MIN_SENTENCE_WORDS = 3


def content_words(text: str) -> List[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS and len(t) > 1]


class ScriptedLLM:
    """
    Heuristic replies per prompt kind. Pure function of the request.
    """

    def respond(self, request: CompletionRequest) -> str:
        prompt = request.user_prompt
        if "Assign a score from 0 to 100" in prompt:
            return self._judge(prompt)
        if '"extended_insight"' in prompt:
            return self._reason(prompt)
        if prompt.startswith("GOAL") and "<Conversation>" in prompt:
            return self._extract(prompt)
        if "Short Answer:" in prompt or "Now, please consider the following question:" in prompt:
            return self._answer(prompt)
        return ""

    # ===== Step 1 =====
    @staticmethod
    def categorize(sentence: str) -> str:
        words = set(tokenize(sentence))
        if words & SUBJECTIVE_WORDS:
            return "Subjective_Information"
        if words & EXPERIENTIAL_WORDS:
            return "Experiential_Information"
        return "Factual_Information"

    @staticmethod
    def date_for(sentence: str, list_key: str, message_date: datetime.date, temporal: bool) -> str:
        if not temporal:
            return message_date.isoformat()
        relative = _RELATIVE.search(sentence)
        if relative:
            try:
                return resolve_relative_date(relative.group(1), message_date).isoformat()
            except UnresolvableDate:
                pass
        words = set(tokenize(sentence))
        if list_key == "Subjective_Information" and words & FUTURE_WORDS:
            return f"After {message_date.isoformat()}"
        if list_key == "Experiential_Information":
            return f"Before {message_date.isoformat()}"
        return message_date.isoformat()

    def _extract(self, prompt: str) -> str:
        conversation = prompt.rsplit("<Conversation>\n", 1)[-1]
        categorized = "Factual, Experiential, or Subjective" in prompt
        temporal = "Before [message-date]" in prompt
        lists: Dict[str, List[dict]] = (
            {"Factual_Information": [], "Experiential_Information": [], "Subjective_Information": []}
            if categorized else {"Personal_Information": []}
        )
        for line in conversation.splitlines():
            match = _MESSAGE_LINE.match(line.strip())
            if not match:
                continue
            message_id, iso, text = match.groups()
            message_date = datetime.date.fromisoformat(iso)
            for sentence in _SENTENCE_SPLIT.split(text.strip()):
                sentence = sentence.strip()
                words = content_words(sentence)
                if len(sentence.split()) < MIN_SENTENCE_WORDS or not words:
                    continue
                category = self.categorize(sentence)
                list_key = category if categorized else "Personal_Information"
                lists[list_key].append({
                    "key": " ".join(words[:2]),
                    "value": sentence.rstrip(".!?"),
                    "message_id": message_id,
                    "date": self.date_for(sentence, category, message_date, temporal),
                })
        return json.dumps(lists, indent=2, ensure_ascii=False)

    # ===== Step 2 =====
    @staticmethod
    def _fragments(prompt: str) -> List[Tuple[str, str, str]]:
        body = prompt.rsplit("Below are the memory fragments to analyze:\n", 1)[-1]
        return [m.groups() for m in (_FRAGMENT_LINE.match(line.strip()) for line in body.splitlines()) if m]

    def _reason(self, prompt: str) -> str:
        fragments = self._fragments(prompt)
        if not fragments:
            return json.dumps({"extended_insight": []})
        dates = sorted(d for _, time, _ in fragments for d in _ISO_DATE.findall(time))
        if not dates:
            date = ""
        elif dates[0] == dates[-1]:
            date = dates[0]
        else:
            date = f"{dates[0]} to {dates[-1]}"
        counts = Counter(w for key, _, content in fragments for w in content_words(f"{key} {content}"))
        theme = min(counts, key=lambda w: (-counts[w], w)) if counts else "recurring topics"
        insight = {
            "inference_type": "accumulation",
            "key": f"recurring {theme}",
            "date": date,
            "value": f"User mentions {theme} across {len(fragments)} memories",
        }
        return json.dumps({"extended_insight": [insight]}, indent=2, ensure_ascii=False)

    # ===== Inference =====
    @staticmethod
    def _split_answer_prompt(prompt: str) -> Tuple[str, str]:
        if "Short Answer:" in prompt:
            context = prompt.split("Context:\n", 1)[-1].split("\n\nQuestion: ", 1)[0]
            question = prompt.split("\n\nQuestion: ", 1)[-1].split("\n\nShort Answer:", 1)[0]
        else:
            context = prompt.split("inform your answer:\n\n", 1)[-1].split("\n\nNow, please consider", 1)[0]
            question = prompt.split("following question:\n\n", 1)[-1].split("\n\nInstructions:", 1)[0]
        return context, question

    def _answer(self, prompt: str) -> str:
        context, question = self._split_answer_prompt(prompt)
        asked = set(content_words(question))
        best: Optional[Tuple[int, str]] = None
        for line in context.splitlines():
            match = _FRAGMENT_LINE.match(line.strip())
            if not match:
                continue
            key, _, content = match.groups()
            overlap = len(asked & set(content_words(f"{key} {content}")))
            if overlap and (best is None or overlap > best[0]):
                best = (overlap, content)
        return best[1] if best else ABSTAIN

    # ===== Judge =====
    @staticmethod
    def _tag(prompt: str, name: str) -> str:
        match = re.search(rf"<{name}>\n(.*?)\n</{name}>", prompt, re.DOTALL)
        return match.group(1) if match else ""

    def _judge(self, prompt: str) -> str:
        gold = self._tag(prompt, "gold_answer")
        predicted = self._tag(prompt, "predicted_answer")
        return str(int(round(100 * rouge1(predicted, gold).f1)))

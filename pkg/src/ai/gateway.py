"""
Single boundary for language-model calls: role-based request building,
transport retries, and JSON replies with re-prompting.
"""
import json
import logging
import re
import threading
from typing import Any, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field

from ..core.config_loader import Config
from ..core.errors import GatewayUnavailableError, StructuredOutputError
from .provider import AIProvider, AIProviderFactory, CompletionRequest

logger = logging.getLogger(__name__)

Role = Literal["extract", "reason", "response", "judge"]
ROLES = ("extract", "reason", "response", "judge")

JSON_REPAIR_INSTRUCTION = "\n\nReturn valid JSON only. Do not add any text before or after the JSON object."

_FENCE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)


class GatewayConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    backend: str = "mock"
    retry_limit: int = Field(2, ge=0)
    max_output_tokens: int = Field(3000, gt=0)
    models: Dict[str, str]
    temperatures: Dict[str, float]

    @classmethod
    def from_config(cls, cfg: Config) -> "GatewayConfig":
        models = {role: cfg.get(f"models.{role}") for role in ROLES}
        if cfg.get("models.use_small", False):
            models.update(cfg.section("models.small"))
        temperatures = {role: float(cfg.get(f"temperatures.{role}", 0.0)) for role in ROLES}
        return cls(
            backend=cfg.get("gateway.backend", "mock"),
            retry_limit=cfg.get("gateway.retry_limit", 2),
            max_output_tokens=cfg.get("gateway.max_output_tokens", 3000),
            models={k: v for k, v in models.items() if isinstance(v, str)},
            temperatures=temperatures,
        )


class CallRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    model_name: str
    attempt: int
    outcome: Literal["ok", "transport_error", "parse_error"]


def extract_json(text: str) -> Any:
    """
    Parses the JSON object inside a reply, tolerating code fences and
    surrounding prose. Raises ValueError when no object can be decoded.
    """
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    for chunk in candidates:
        start, end = chunk.find("{"), chunk.rfind("}")
        if start == -1 or end <= start:
            continue
        try:
            return json.loads(chunk[start:end + 1])
        except json.JSONDecodeError:
            continue
    raise ValueError("no JSON object found in reply")


class LLMGateway:
    def __init__(self, provider: AIProvider, settings: GatewayConfig):
        self.provider = provider
        self.settings = settings
        self._log_lock = threading.Lock()
        self._call_log: List[CallRecord] = []

    @classmethod
    def from_config(cls, cfg: Config) -> "LLMGateway":
        return cls(AIProviderFactory.get_provider(cfg), GatewayConfig.from_config(cfg))

    @property
    def call_log(self) -> List[CallRecord]:
        with self._log_lock:
            return list(self._call_log)

    def _log(self, record: CallRecord):
        with self._log_lock:
            self._call_log.append(record)

    def request_for(self, role: Role, user_prompt: str, system_prompt: Optional[str] = None) -> CompletionRequest:
        return CompletionRequest(
            model_name=self.settings.models[role],
            system_prompt=system_prompt,
            user_prompt=user_prompt,
            temperature=self.settings.temperatures[role],
            max_output_tokens=self.settings.max_output_tokens,
        )

    def complete(self, request: CompletionRequest) -> str:
        key = request.content_key()[:12]
        last_error: Optional[Exception] = None
        for attempt in range(self.settings.retry_limit + 1):
            try:
                text = self.provider.generate(request)
            except GatewayUnavailableError as e:
                last_error = e
                self._log(CallRecord(key=key, model_name=request.model_name, attempt=attempt, outcome="transport_error"))
                logger.warning(f"Gateway call {key} failed (attempt {attempt + 1}): {e}")
                continue
            self._log(CallRecord(key=key, model_name=request.model_name, attempt=attempt, outcome="ok"))
            return text
        raise GatewayUnavailableError(f"Gateway unavailable after {self.settings.retry_limit + 1} attempts: {last_error}")

    def complete_structured(self, request: CompletionRequest, required_top_level_keys: Sequence[str]) -> Dict[str, Any]:
        current = request
        raw = ""
        for attempt in range(self.settings.retry_limit + 1):
            raw = self.complete(current)
            problem = None
            try:
                tree = extract_json(raw)
                if not isinstance(tree, dict):
                    problem = "top level is not an object"
                else:
                    missing = [k for k in required_top_level_keys if k not in tree]
                    if missing:
                        problem = f"missing keys {missing}"
            except ValueError as e:
                problem = str(e)
            if problem is None:
                return tree
            self._log(CallRecord(key=request.content_key()[:12], model_name=request.model_name, attempt=attempt, outcome="parse_error"))
            logger.warning(f"Structured reply rejected ({problem}); attempt {attempt + 1}")
            current = request.model_copy(update={"user_prompt": request.user_prompt + JSON_REPAIR_INSTRUCTION})
        raise StructuredOutputError(f"Structured output still invalid after {self.settings.retry_limit} retries", raw)

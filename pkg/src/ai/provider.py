import hashlib
import json
import os
import threading
from abc import ABC, abstractmethod
from typing import Callable, Dict, Optional

import requests
from pydantic import BaseModel, ConfigDict, Field

# Try importing openai, handle if missing
try:
    import openai
    from openai import OpenAI
except ImportError:
    openai = None
    OpenAI = None

from ..core.config_loader import Config
from ..core.errors import ConfigError, FixtureMissingError, GatewayUnavailableError


class CompletionRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    model_name: str
    system_prompt: Optional[str] = None
    user_prompt: str = Field(..., min_length=1)
    temperature: float = Field(0.0, ge=0.0, le=1.0)
    max_output_tokens: int = Field(3000, gt=0)

    def messages(self) -> list:
        msgs = []
        if self.system_prompt:
            msgs.append({"role": "system", "content": self.system_prompt})
        msgs.append({"role": "user", "content": self.user_prompt})
        return msgs

    def content_key(self) -> str:
        # Temperature is not part of the key
        payload = json.dumps([self.model_name, self.system_prompt or "", self.user_prompt], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class AIProvider(ABC):
    name: str = "abstract"

    @abstractmethod
    def generate(self, request: CompletionRequest) -> str:
        pass


class OpenAIProvider(AIProvider):
    name = "openai"

    def __init__(self, base_url: str, api_key: Optional[str], timeout_s: float = 120):
        if not OpenAI:
            raise ConfigError("openai package not installed.")
        self.client = OpenAI(api_key=api_key or "not-set", base_url=base_url, timeout=timeout_s, max_retries=0)

    def generate(self, request: CompletionRequest) -> str:
        try:
            response = self.client.chat.completions.create(
                model=request.model_name,
                messages=request.messages(),
                temperature=request.temperature,
                max_tokens=request.max_output_tokens,
            )
        except openai.APIError as e:
            raise GatewayUnavailableError(f"OpenAI endpoint failed: {e}") from e
        return response.choices[0].message.content or ""


class HttpProvider(AIProvider):
    """
    Plain chat-completions POST for OpenAI-compatible servers (Ollama, vLLM, ...).
    """
    name = "http"

    def __init__(self, base_url: str, api_key: Optional[str], timeout_s: float = 120):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout_s = timeout_s

    def generate(self, request: CompletionRequest) -> str:
        url = f"{self.base_url}/chat/completions"
        payload = {
            "model": request.model_name,
            "messages": request.messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "stream": False,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=self.timeout_s)
        except requests.RequestException as e:
            raise GatewayUnavailableError(f"Connection Error: {e}") from e
        if resp.status_code != 200:
            raise GatewayUnavailableError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            # OpenAI compatible format
            if "choices" in data and data["choices"]:
                return data["choices"][0]["message"].get("content") or ""
            # Native Ollama format
            return data["message"].get("content") or ""
        except (ValueError, KeyError, TypeError) as e:
            raise GatewayUnavailableError(f"Unexpected completion payload from {url}: {e}") from e


class MockProvider(AIProvider):
    """
    Replays fixtures keyed by request content hash. `index.json` maps each
    key to the model and a prompt preview so fixture sets stay reviewable.
    With a responder, missing fixtures are generated and recorded.
    """
    name = "mock"

    def __init__(self, fixture_dir: str, responder: Optional[Callable[[CompletionRequest], str]] = None):
        self.fixture_dir = fixture_dir
        self.responder = responder
        self._lock = threading.Lock()
        if responder is None and not os.path.isdir(fixture_dir):
            raise ConfigError(f"Mock fixture directory not found: {fixture_dir} (bootstrap it with --record-fixtures)")

    def _path(self, key: str) -> str:
        return os.path.join(self.fixture_dir, f"{key}.txt")

    def generate(self, request: CompletionRequest) -> str:
        key = request.content_key()
        path = self._path(key)
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                return f.read()
        if self.responder is None:
            raise FixtureMissingError(key)
        text = self.responder(request)
        self.record(request, text)
        return text

    def record(self, request: CompletionRequest, text: str):
        key = request.content_key()
        with self._lock:
            os.makedirs(self.fixture_dir, exist_ok=True)
            tmp_path = self._path(key) + ".tmp"
            with open(tmp_path, "w", encoding="utf-8") as f:
                f.write(text)
            os.replace(tmp_path, self._path(key))
            index_path = os.path.join(self.fixture_dir, "index.json")
            index: Dict[str, dict] = {}
            if os.path.exists(index_path):
                with open(index_path, "r", encoding="utf-8") as f:
                    index = json.load(f)
            index[key] = {"model": request.model_name, "prompt_head": request.user_prompt[:120]}
            with open(index_path, "w", encoding="utf-8") as f:
                json.dump(index, f, indent=2, sort_keys=True, ensure_ascii=False)


class AIProviderFactory:
    @staticmethod
    def get_provider(cfg: Config) -> AIProvider:
        provider_type = cfg.get("gateway.backend", "mock")
        base_url = cfg.get("gateway.base_url")
        api_key = os.environ.get(cfg.get("gateway.api_key_env", "MEMWEAVE_API_KEY"))
        timeout_s = cfg.get("gateway.timeout_s", 120)

        if provider_type == "openai":
            return OpenAIProvider(base_url, api_key, timeout_s)
        elif provider_type == "http":
            return HttpProvider(base_url, api_key, timeout_s)
        elif provider_type == "mock":
            responder = None
            if cfg.get("gateway.record_missing", False):
                from ..mock.generator import ScriptedLLM
                responder = ScriptedLLM().respond
            return MockProvider(cfg.get("gateway.fixture_dir"), responder)
        else:
            raise ConfigError(f"Unknown AI provider: {provider_type}")

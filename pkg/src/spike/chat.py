"""Minimal chat-completions client.

Speaks the common ``{model, messages, temperature}`` -> ``choices[0].message.content``
wire shape. Anything with a ``complete(messages) -> str`` method can stand in
for it (tests use scripted fakes).
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol

import httpx

from .model import ContractError, SpikeError

logger = logging.getLogger(__name__)

Message = Dict[str, str]

RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class GenerationError(SpikeError):
    """The chat model could not be reached (after retries) or refused the request."""


@dataclass(frozen=True)
class ChatClientConfig:
    endpoint: str
    model_name: str
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 120.0
    force_json: bool = False
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ContractError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ContractError("max_retries must be >= 0")


class ChatClient(Protocol):
    def complete(self, messages: List[Message], *, json_mode: Optional[bool] = None) -> str:
        ...


class HttpChatClient:
    def __init__(self, config: ChatClientConfig, transport: Optional[httpx.BaseTransport] = None,
                 api_key: Optional[str] = None, sleep=time.sleep):
        self.config = config
        headers = {"Content-Type": "application/json"}
        api_key = api_key or os.environ.get("CHAT_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=config.timeout, transport=transport)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def complete(self, messages: List[Message], *, json_mode: Optional[bool] = None) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        if self.config.force_json if json_mode is None else json_mode:
            payload["response_format"] = {"type": "json_object"}

        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            last = attempt == attempts - 1
            try:
                resp = self._client.post(self.config.endpoint, json=payload)
            except httpx.TransportError as exc:
                logger.warning("chat request attempt %d failed: %s", attempt + 1, exc)
                if last:
                    raise GenerationError(f"chat endpoint unreachable after {attempts} attempts: {exc}") from exc
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()["choices"][0]["message"]["content"] or ""
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise GenerationError(f"malformed chat response: {resp.text[:300]}") from exc
                if resp.status_code not in RETRYABLE_STATUS or last:
                    raise GenerationError(f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:300]}")
            self._sleep(self.config.backoff_base * (2 ** attempt))
        raise AssertionError("unreachable")


def chat_config_from_env(model_name: Optional[str] = None, endpoint: Optional[str] = None, **kwargs) -> ChatClientConfig:
    endpoint = endpoint or os.environ.get("CHAT_ENDPOINT")
    if not endpoint:
        raise ContractError("no chat endpoint given (flag or CHAT_ENDPOINT)")
    if not model_name:
        raise ContractError("no chat model name given")
    return ChatClientConfig(endpoint=endpoint, model_name=model_name, **kwargs)

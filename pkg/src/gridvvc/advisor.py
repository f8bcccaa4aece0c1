"""Chat-completion transport for the day-ahead advisor.

Two backends exist: a remote JSON chat endpoint (credentials via
environment variables) and a deterministic scripted backend used for
offline runs and CI (see dayahead.ScriptedAdvisor). The wrapper picks
sampling parameters by mode: exploratory settings while the knowledge
base is still evolving, conservative ones at test time.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import requests

ENDPOINT_ENV = "GRIDVVC_ADVISOR_URL"
API_KEY_ENV = "GRIDVVC_ADVISOR_KEY"
MODEL_ENV = "GRIDVVC_ADVISOR_MODEL"


class AdvisorTransportError(RuntimeError):
    """Endpoint unreachable or persistently misbehaving."""


@dataclass(frozen=True)
class AdvisorConfig:
    backend: str = "scripted"  # "scripted" | "http"
    model: str = "qwen-plus"
    train_temperature: float = 0.7
    train_top_p: float = 0.8
    test_temperature: float = 0.2
    test_top_p: float = 0.6
    max_reprompts: int = 3
    timeout: float = 60.0
    retries: int = 3
    endpoint: str | None = None
    api_key: str | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("scripted", "http"):
            raise ValueError(f"unknown advisor backend {self.backend!r}")
        if self.max_reprompts < 1:
            raise ValueError("max_reprompts must be >= 1")
        if min(self.train_temperature, self.test_temperature) < 0:
            raise ValueError("temperatures must be >= 0")

    def sampling(self, mode: str) -> tuple[float, float]:
        if mode == "train":
            return self.train_temperature, self.train_top_p
        if mode == "test":
            return self.test_temperature, self.test_top_p
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "AdvisorConfig":
        return cls(**data)


class HttpChatBackend:
    """Plain JSON chat-completion client with exponential-backoff retries."""

    def __init__(self, cfg: AdvisorConfig):
        self.cfg = cfg
        self.endpoint = cfg.endpoint or os.environ.get(ENDPOINT_ENV)
        self.api_key = cfg.api_key or os.environ.get(API_KEY_ENV)
        self.model = os.environ.get(MODEL_ENV, cfg.model)
        if not self.endpoint:
            raise AdvisorTransportError(
                f"no endpoint configured: set {ENDPOINT_ENV} or AdvisorConfig.endpoint"
            )

    def complete(self, messages: list[dict], temperature: float, top_p: float) -> str:
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
            "top_p": top_p,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.cfg.retries):
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.cfg.timeout
                )
                response.raise_for_status()
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt < self.cfg.retries - 1:
                    time.sleep(2.0**attempt)
        raise AdvisorTransportError(
            f"advisor endpoint failed after {self.cfg.retries} attempts: {last_error}"
        )


class Advisor:
    """Backend plus its configuration; `mode` selects sampling parameters."""

    def __init__(self, cfg: AdvisorConfig, backend):
        self.cfg = cfg
        self.backend = backend

    def complete(self, messages: list[dict], mode: str) -> str:
        temperature, top_p = self.cfg.sampling(mode)
        return self.backend.complete(messages, temperature, top_p)

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from promptopt.backend.base import (
    REFERENCE_PARAMS,
    SCORER_PARAMS,
    Backend,
    BackendConfigError,
    BackendError,
    BackendHTTPError,
    BudgetExceededError,
    ChoiceDistribution,
    GenParams,
    LogprobsUnsupportedError,
    RequestBudget,
)
from promptopt.backend.mock import MockProfile, MockReference, MockScorer
from promptopt.dataset import TaskItem

KINDS = ("http_chat", "mock_scorer", "mock_reference")


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    model_name: str = "mock"
    endpoint_url: str | None = None
    api_key_env: str | None = None
    request_timeout: float = 60.0
    max_retries: int = 4
    max_concurrency: int = 8
    supports_logprobs: bool = False
    seed: int | None = None
    mock_profile: MockProfile | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BackendConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http_chat":
            if not self.endpoint_url or not self.api_key_env:
                raise BackendConfigError("http_chat needs endpoint_url and api_key_env")
        else:
            if self.seed is None:
                raise BackendConfigError(f"{self.kind} needs a seed")
            if self.mock_profile is None:
                object.__setattr__(self, "mock_profile", MockProfile())

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        d = dict(d)
        if "mock_profile" in d and d["mock_profile"] is not None:
            d["mock_profile"] = MockProfile.from_dict(d["mock_profile"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise BackendConfigError(f"bad backend config: {exc}") from None

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "model_name": self.model_name,
            "endpoint_url": self.endpoint_url,
            "api_key_env": self.api_key_env,
            "request_timeout": self.request_timeout,
            "max_retries": self.max_retries,
            "max_concurrency": self.max_concurrency,
            "supports_logprobs": self.supports_logprobs,
            "seed": self.seed,
            "mock_profile": self.mock_profile.to_dict() if self.mock_profile else None,
        }
        return out


def build_backend(config: BackendConfig, items: Iterable[TaskItem] = (), budget: RequestBudget | None = None) -> Backend:
    """Instantiate a backend; ``items`` seed the mock scorer's answer key."""
    if config.kind == "http_chat":
        from promptopt.backend.http_chat import HttpChatBackend

        return HttpChatBackend(
            config.endpoint_url,
            config.model_name,
            config.api_key_env,
            request_timeout=config.request_timeout,
            max_retries=config.max_retries,
            max_concurrency=config.max_concurrency,
            supports_logprobs=config.supports_logprobs,
            budget=budget,
        )
    if config.kind == "mock_scorer":
        return MockScorer(config.mock_profile, config.seed, items)
    return MockReference(config.mock_profile, config.seed)


__all__ = [
    "Backend",
    "BackendConfig",
    "BackendConfigError",
    "BackendError",
    "BackendHTTPError",
    "BudgetExceededError",
    "ChoiceDistribution",
    "GenParams",
    "LogprobsUnsupportedError",
    "MockProfile",
    "MockReference",
    "MockScorer",
    "REFERENCE_PARAMS",
    "RequestBudget",
    "SCORER_PARAMS",
    "build_backend",
]

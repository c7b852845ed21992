"""Chat-completion client for OpenAI-compatible endpoints."""

from __future__ import annotations

import logging
import os
import random
import threading
import time
from typing import Callable

import httpx

from promptopt.backend.base import (
    SCORER_PARAMS,
    Backend,
    BackendConfigError,
    BackendError,
    BackendHTTPError,
    ChoiceDistribution,
    GenParams,
    LogprobsUnsupportedError,
    RequestBudget,
)
from promptopt.dataset import TaskItem

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})
TOP_LOGPROBS = 20


def backoff_delay(attempt: int, base: float = 0.5, cap: float = 30.0) -> float:
    """Full-jitter exponential backoff for the given (0-based) retry attempt."""
    return random.uniform(0, min(cap, base * 2**attempt))


class HttpChatBackend(Backend):
    name = "http_chat"

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        api_key_env: str,
        *,
        request_timeout: float = 60.0,
        max_retries: int = 4,
        max_concurrency: int = 8,
        supports_logprobs: bool = False,
        budget: RequestBudget | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint_url:
            raise BackendConfigError("http_chat backend needs endpoint_url")
        if not api_key_env:
            raise BackendConfigError("http_chat backend needs api_key_env")
        key = os.environ.get(api_key_env)
        if not key:
            raise BackendConfigError(f"credential variable {api_key_env} is not set")
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.max_retries = max_retries
        self.supports_logprobs = supports_logprobs
        self.budget = budget or RequestBudget(None)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._client = httpx.Client(
            timeout=request_timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {key}"},
        )

    def close(self) -> None:
        self._client.close()

    def _body(self, prompt: str, params: GenParams, logprobs: bool) -> dict:
        body = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "logprobs": logprobs,
        }
        if logprobs:
            body["top_logprobs"] = TOP_LOGPROBS
        if params.stop_sequences:
            body["stop"] = list(params.stop_sequences)
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    def _post(self, body: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            self.budget.charge()
            try:
                with self._slots:
                    resp = self._client.post(self.endpoint_url, json=body)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = exc
                log.warning("request failed (%s), attempt %d/%d", exc, attempt + 1, self.max_retries + 1)
            else:
                if resp.status_code < 300:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise BackendError(f"response is not JSON: {resp.text[:200]}") from exc
                if resp.status_code not in RETRYABLE_STATUS:
                    raise BackendHTTPError(resp.status_code, resp.text)
                last_error = BackendHTTPError(resp.status_code, resp.text)
                log.warning("HTTP %d, attempt %d/%d", resp.status_code, attempt + 1, self.max_retries + 1)
            if attempt < self.max_retries:
                self._sleep(backoff_delay(attempt))
        if isinstance(last_error, BackendHTTPError):
            raise last_error
        raise BackendError(f"network failure after {self.max_retries + 1} attempts: {last_error}")

    @staticmethod
    def _first_choice(data: dict) -> dict:
        try:
            return data["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise BackendError("response has no choices") from None

    def generate(self, prompt: str, params: GenParams = SCORER_PARAMS) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        choice = self._first_choice(self._post(self._body(prompt, params, logprobs=False)))
        content = (choice.get("message") or {}).get("content")
        if content is None:
            raise BackendError("response is missing message content")
        return content

    def score_choice_logits(self, prompt: str, item: TaskItem) -> ChoiceDistribution:
        if not self.supports_logprobs:
            raise LogprobsUnsupportedError(f"{self.endpoint_url} is not configured for log-probabilities")
        params = GenParams(temperature=0.0, max_tokens=1)
        choice = self._first_choice(self._post(self._body(prompt, params, logprobs=True)))
        try:
            top = choice["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError):
            raise LogprobsUnsupportedError("response carries no token log-probabilities") from None
        scores: dict[str, float] = {}
        for entry in top:
            tok = str(entry.get("token", "")).strip().upper()
            if tok in item.options:
                scores[tok] = max(scores.get(tok, float("-inf")), float(entry["logprob"]))
        return ChoiceDistribution.from_scores(scores, item.letters)

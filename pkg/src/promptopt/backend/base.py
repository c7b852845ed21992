from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

if TYPE_CHECKING:
    from promptopt.dataset import TaskItem


class BackendError(RuntimeError):
    pass


class BackendConfigError(BackendError):
    pass


class BackendHTTPError(BackendError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body_excerpt = body[:200]


class LogprobsUnsupportedError(BackendError):
    pass


class BudgetExceededError(BackendError):
    pass


@dataclass(frozen=True)
class GenParams:
    temperature: float = 0.0
    max_tokens: int = 256
    stop_sequences: tuple[str, ...] = ()
    # per-call sampling seed; lets repeated calls on one prompt differ reproducibly
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


SCORER_PARAMS = GenParams(temperature=0.0, max_tokens=32)
REFERENCE_PARAMS = GenParams(temperature=1.0, max_tokens=512)


@dataclass(frozen=True)
class ChoiceDistribution:
    weights: dict[str, float]

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("negative choice weight")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"choice weights sum to {total!r}")

    def argmax(self) -> str:
        # ties resolve to the earliest letter
        return max(sorted(self.weights), key=lambda k: (self.weights[k], -ord(k)))

    @classmethod
    def from_scores(cls, scores: Mapping[str, float], letters: Sequence[str]) -> "ChoiceDistribution":
        """Softmax over raw per-option scores (e.g. log-probabilities), restricted to ``letters``."""
        missing = [k for k in letters if k not in scores]
        if missing:
            raise BackendError(f"no score for option letters {missing}")
        top = max(scores[k] for k in letters)
        exp = {k: math.exp(scores[k] - top) for k in letters}
        z = math.fsum(exp.values())
        return cls({k: v / z for k, v in exp.items()})


class RequestBudget:
    """Thread-safe cap on the total number of backend calls in a run."""

    def __init__(self, max_calls: int | None):
        self.max_calls = max_calls
        self.used = 0
        self._lock = threading.Lock()

    def charge(self, n: int = 1) -> None:
        with self._lock:
            if self.max_calls is not None and self.used + n > self.max_calls:
                raise BudgetExceededError(f"request budget of {self.max_calls} calls exhausted")
            self.used += n


class Backend:
    """Text-generating model. Subclasses implement ``generate`` and optionally ``score_choice_logits``."""

    name = "backend"
    supports_logprobs = False

    def generate(self, prompt: str, params: GenParams = SCORER_PARAMS) -> str:
        raise NotImplementedError

    def score_choice_logits(self, prompt: str, item: TaskItem) -> ChoiceDistribution:
        raise LogprobsUnsupportedError(f"{self.name} cannot score options by log-probability")

    def close(self) -> None:
        pass

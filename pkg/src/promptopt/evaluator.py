"""Score one instruction on one dataset through a scorer backend."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from promptopt.backend import Backend, BackendError, GenParams
from promptopt.dataset import Dataset, TaskItem
from promptopt.metrics import CompositeScore, MetricVector, compute_metrics, normalize_and_compose

MODES = ("logits", "verbalized")
INS = "<INS>"
QUERY_TEMPLATE_VERSION = "v1"
QUERY_TEMPLATE = resources.files("promptopt.templates").joinpath(f"query_{QUERY_TEMPLATE_VERSION}.txt").read_text("utf-8")

VERBALIZED_DIRECTIVE = "Respond in the format: Answer: <letter>, Confidence: <number between 0 and 1>"
LOGITS_DIRECTIVE = "Answer:"

_ANSWER_RE = re.compile(r"answer\s*:\s*\(?([a-e])\)?(?!\w)", re.IGNORECASE)
_CONF_RE = re.compile(r"confidence\s*:\s*([0-9]+(?:\.[0-9]+)?|\.[0-9]+)\s*(%?)", re.IGNORECASE)


class EvaluationError(BackendError):
    def __init__(self, item_id: str, cause: Exception):
        super().__init__(f"item {item_id}: {cause}")
        self.item_id = item_id


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    followed: bool
    predicted: str | None
    correct: bool
    confidence: float | None

    def __post_init__(self):
        if self.followed:
            if self.predicted is None or self.confidence is None:
                raise ValueError(f"{self.item_id}: followed record needs a prediction and a confidence")
        elif self.predicted is not None or self.confidence is not None or self.correct:
            raise ValueError(f"{self.item_id}: unfollowed record must be empty and incorrect")

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "followed": self.followed,
            "predicted": self.predicted,
            "correct": self.correct,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ItemRecord":
        return cls(**d)


@dataclass(frozen=True)
class EvalResult:
    prompt_text: str
    dataset_name: str
    records: tuple[ItemRecord, ...]
    metrics: MetricVector
    composite: CompositeScore
    confidence_mode: str

    @property
    def scorer_calls(self) -> int:
        return len(self.records)


def render_query(instruction: str, item: TaskItem, exemplars: Sequence[TaskItem] = (), mode: str = "verbalized") -> str:
    if mode not in MODES:
        raise ValueError(f"unknown confidence mode {mode!r}")
    if not instruction.strip():
        raise ValueError("empty instruction")
    if INS in instruction:
        raise ValueError(f"instruction contains the reserved marker {INS}")
    shots = "".join(f"{ex.block()}\nAnswer: {ex.gold}\n\n" for ex in exemplars)
    directive = VERBALIZED_DIRECTIVE if mode == "verbalized" else LOGITS_DIRECTIVE
    # single pass so text inside the slots is never re-substituted
    slots = {INS: instruction, "{EXEMPLARS}": shots, "{QUESTION}": item.block(), "{DIRECTIVE}": directive}
    return re.sub(r"<INS>|\{EXEMPLARS\}|\{QUESTION\}|\{DIRECTIVE\}", lambda m: slots[m.group(0)], QUERY_TEMPLATE)


@dataclass(frozen=True)
class Parsed:
    letter: str | None
    confidence: float | None

    def followed(self, mode: str = "verbalized") -> bool:
        if mode == "verbalized":
            return self.letter is not None and self.confidence is not None
        return self.letter is not None


def parse_response(text: str) -> Parsed:
    """Pull ``Answer: <letter>`` and ``Confidence: <number>`` out of a completion.

    Confidence is read as a decimal in [0, 1] or as a percentage; anything
    outside 0-100 is dropped.
    """
    m = _ANSWER_RE.search(text or "")
    letter = m.group(1).upper() if m else None
    conf = None
    c = _CONF_RE.search(text or "")
    if c:
        v = float(c.group(1))
        if c.group(2) == "%" or v > 1.0:
            v = v / 100 if v <= 100 else None
        conf = v
    return Parsed(letter, conf)


def _score_item(instruction, item, exemplars, scorer, mode, params) -> ItemRecord:
    prompt = render_query(instruction, item, exemplars, mode)
    try:
        if mode == "logits":
            dist = scorer.score_choice_logits(prompt, item)
            letter = dist.argmax()
            return ItemRecord(item.id, True, letter, letter == item.gold, dist.weights[letter])
        parsed = parse_response(scorer.generate(prompt, params))
    except BackendError as exc:
        raise EvaluationError(item.id, exc) from exc
    if not parsed.followed(mode) or parsed.letter not in item.options:
        return ItemRecord(item.id, False, None, False, None)
    return ItemRecord(item.id, True, parsed.letter, parsed.letter == item.gold, parsed.confidence)


def evaluate_prompt(
    instruction: str,
    dataset: Dataset,
    scorer: Backend,
    mode: str = "logits",
    exemplars: Sequence[TaskItem] = (),
    eval_seed: int = 0,
    *,
    workers: int = 1,
    weights: dict[str, float] | None = None,
) -> EvalResult:
    """Run every item of ``dataset`` under ``instruction`` and score the answers.

    Items may be scored concurrently, but records come back in dataset
    order. Any backend failure aborts the whole dataset.
    """
    if mode not in MODES:
        raise ValueError(f"unknown confidence mode {mode!r}")
    params = GenParams(temperature=0.0, max_tokens=32, seed=eval_seed)
    render_query(instruction, dataset.items[0], exemplars, mode)  # fail fast on a bad instruction

    def one(item):
        return _score_item(instruction, item, exemplars, scorer, mode, params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = tuple(pool.map(one, dataset.items))
    else:
        records = tuple(one(it) for it in dataset.items)
    metrics = compute_metrics(records)
    return EvalResult(
        prompt_text=instruction,
        dataset_name=dataset.name,
        records=records,
        metrics=metrics,
        composite=normalize_and_compose(metrics, weights),
        confidence_mode=mode,
    )

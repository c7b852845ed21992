"""Reference prompts built from scored history, and candidate extraction."""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from promptopt.dataset import TaskItem
from promptopt.metrics import MetricVector

INS = "<INS>"
HISTORY_SLOT = "{HISTORY}"
EXEMPLAR_SLOT = "{EXEMPLARS}"
TASK_SLOT = "{TASK}"
BUILTIN_TEMPLATES = {"palm-style": "palm_v1.txt", "gpt-style": "gpt_v1.txt"}
DEFAULT_TOP_K = 20
DEFAULT_MAX_CHARS = 500

_SLOT_RE = re.compile(r"\{HISTORY\}|\{EXEMPLARS\}|\{TASK\}")
_QUOTES = {'"': '"', "'": "'", "“": "”", "‘": "’", "`": "`"}


class CandidateRejected(ValueError):
    """The reference completion yielded no usable instruction; drop it and carry on."""


class TemplateError(ValueError):
    pass


def prompt_id(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def brackets_balanced(text: str) -> bool:
    depth = 0
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


@dataclass(frozen=True)
class PromptRecord:
    text: str
    composite: float
    metric_vector: MetricVector | None = None
    stage: str = "source"
    step: int = 0
    parent_ids: tuple[str, ...] = ()
    per_dataset: dict[str, MetricVector] = field(default_factory=dict)
    id: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("prompt text is empty")
        if INS in self.text:
            raise ValueError(f"prompt text contains {INS}")
        if not brackets_balanced(self.text):
            raise ValueError("prompt text has unbalanced square brackets")
        if self.stage not in ("source", "target"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if not 0.0 <= self.composite <= 1.0:
            raise ValueError(f"composite {self.composite} outside [0, 1]")
        object.__setattr__(self, "parent_ids", tuple(self.parent_ids))
        object.__setattr__(self, "id", prompt_id(self.text))

    @property
    def score_percent(self) -> int:
        return score_percent(self.composite)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "composite": self.composite,
            "metric_vector": self.metric_vector.to_dict() if self.metric_vector else None,
            "per_dataset": {k: v.to_dict() for k, v in self.per_dataset.items()},
            "stage": self.stage,
            "step": self.step,
            "parent_ids": list(self.parent_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptRecord":
        rec = cls(
            text=d["text"],
            composite=d["composite"],
            metric_vector=MetricVector.from_dict(d["metric_vector"]) if d.get("metric_vector") else None,
            stage=d.get("stage", "source"),
            step=d.get("step", 0),
            parent_ids=tuple(d.get("parent_ids", ())),
            per_dataset={k: MetricVector.from_dict(v) for k, v in d.get("per_dataset", {}).items()},
        )
        if d.get("id") not in (None, rec.id):
            raise ValueError(f"record id {d['id']} does not match its text")
        return rec


def score_percent(composite: float) -> int:
    # floor of the percentage; the epsilon absorbs 0.29 * 100 == 28.999999999999996
    return math.floor(composite * 100 + 1e-9)


def rank_key(rec: PromptRecord) -> tuple[float, str]:
    """Ascending sort key: worst first, ties by id."""
    return (rec.composite, rec.id)


def top_records(pool: Iterable[PromptRecord], k: int) -> list[PromptRecord]:
    """The ``k`` best records, best first (ties by id)."""
    return sorted(pool, key=lambda r: (-r.composite, r.id))[:k]


@dataclass(frozen=True)
class MetaPromptTemplate:
    template_id: str
    text: str

    def __post_init__(self):
        for slot in (HISTORY_SLOT, EXEMPLAR_SLOT):
            n = self.text.count(slot)
            if n != 1:
                raise TemplateError(f"template {self.template_id!r}: slot {slot} occurs {n} times, expected once")
        if "square bracket" not in self.footer.lower():
            raise TemplateError(f"template {self.template_id!r}: footer must ask for a bracketed instruction")

    @property
    def header(self) -> str:
        return self.text[: min(self.text.index(HISTORY_SLOT), self.text.index(EXEMPLAR_SLOT))]

    @property
    def footer(self) -> str:
        end = max(self.text.index(HISTORY_SLOT) + len(HISTORY_SLOT), self.text.index(EXEMPLAR_SLOT) + len(EXEMPLAR_SLOT))
        return self.text[end:]


def load_template(name_or_path: str = "palm-style") -> MetaPromptTemplate:
    """A shipped template by id, or a UTF-8 template file by path."""
    if name_or_path in BUILTIN_TEMPLATES:
        text = resources.files("promptopt.templates").joinpath(BUILTIN_TEMPLATES[name_or_path]).read_text("utf-8")
        return MetaPromptTemplate(name_or_path, text)
    path = Path(name_or_path)
    if not path.is_file():
        raise TemplateError(f"no built-in template or file named {name_or_path!r}")
    return MetaPromptTemplate(path.stem, path.read_text(encoding="utf-8"))


def render_history(history: Sequence[PromptRecord], top_k: int = DEFAULT_TOP_K) -> str:
    kept = sorted(top_records(history, top_k), key=rank_key)
    return "\n\n".join(f"text: {r.text}\nscore: {r.score_percent}" for r in kept)


_HISTORY_LINE = re.compile(r"^text: (.*)\nscore: (\d+)$", re.MULTILINE)


def parse_history(rendered: str) -> list[tuple[str, int]]:
    """Inverse of ``render_history``: the (text, score) pairs in rendered order."""
    return [(t, int(s)) for t, s in _HISTORY_LINE.findall(rendered)]


def render_exemplars(exemplars: Sequence[TaskItem]) -> str:
    return "\n\n".join(f"input:\n{INS}\n{ex.block()}\noutput:\n{ex.gold}" for ex in exemplars)


def build_reference_prompt(
    history: Sequence[PromptRecord],
    exemplars: Sequence[TaskItem],
    template: MetaPromptTemplate,
    top_k: int = DEFAULT_TOP_K,
    task_description: str = "",
) -> str:
    if not history:
        raise ValueError("reference prompt needs at least one scored instruction")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    slots = {
        HISTORY_SLOT: render_history(history, top_k),
        EXEMPLAR_SLOT: render_exemplars(exemplars),
        TASK_SLOT: task_description.strip(),
    }
    return _SLOT_RE.sub(lambda m: slots[m.group(0)], template.text)


def _strip_quotes(s: str) -> str:
    s = s.strip()
    while len(s) >= 2 and s[0] in _QUOTES and s[-1] == _QUOTES[s[0]]:
        s = s[1:-1].strip()
    return s


def _first_bracketed(text: str) -> str | None:
    depth, start = 0, 0
    for i, ch in enumerate(text):
        if ch == "[":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "]" and depth > 0:
            depth -= 1
            if depth == 0 and text[start + 1 : i].strip():
                return text[start + 1 : i]
    return None


def extract_candidate(completion: str, max_chars: int = DEFAULT_MAX_CHARS) -> str:
    """The instruction inside the first non-empty ``[...]`` span, else the whole completion."""
    if not completion or not completion.strip():
        raise CandidateRejected("empty completion")
    span = _first_bracketed(completion)
    if span is None and not completion.replace("[", "").replace("]", "").strip():
        raise CandidateRejected("only empty bracketed spans")
    text = _strip_quotes(span if span is not None else completion)
    if not text:
        raise CandidateRejected("candidate is empty after trimming")
    if len(text) > max_chars:
        raise CandidateRejected(f"candidate has {len(text)} characters, cap is {max_chars}")
    if INS in text:
        raise CandidateRejected(f"candidate contains {INS}")
    if not brackets_balanced(text):
        raise CandidateRejected("candidate has unbalanced square brackets")
    return text


def normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


def dedupe(pool: Iterable[PromptRecord]) -> list[PromptRecord]:
    """Collapse case/whitespace variants, keeping the higher-composite copy in the first slot."""
    slots: dict[str, PromptRecord] = {}
    for rec in pool:
        key = normalize_text(rec.text)
        prev = slots.get(key)
        if prev is None or rec.composite > prev.composite:
            slots[key] = rec
    return list(slots.values())

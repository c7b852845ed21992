"""Deterministic offline stand-ins for the scorer and reference models.

The mock scorer plants a landscape: an instruction containing one of the
profile keywords answers with that keyword's accuracy, anything else with
the base accuracy. Every draw is a hash of (seed, keyword set, item id),
so two instructions with the same keywords score identically and runs are
reproducible across processes and thread schedules.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from typing import Iterable

from promptopt.backend.base import SCORER_PARAMS, Backend, ChoiceDistribution, GenParams
from promptopt.dataset import TaskItem

_HISTORY_RE = re.compile(r"^text: (.*)\nscore: (\d+)$", re.MULTILINE)

_UNFOLLOWED = (
    "I think the answer is probably {a} or {b}.",
    "It is hard to say; several options look plausible.",
    "The question is ambiguous without more context.",
)


@dataclass(frozen=True)
class MockProfile:
    """Landscape parameters for the mock backends.

    ``wrong_confidence_drop``, ``hedge_rate`` and ``hedge_drop`` shape how
    confidence relates to correctness: wrong answers sit ``wrong_confidence_drop``
    below the accuracy level, and a ``hedge_rate`` share of correct answers sit
    ``hedge_drop`` below it. All three default to 0, where confidence is just
    the accuracy level plus noise.
    """

    keyword_accuracy: dict[str, float] = field(default_factory=dict)
    base_accuracy: float = 0.5
    confidence_noise: float = 0.0
    follow_rate: float = 1.0
    mutation_vocabulary: tuple[str, ...] = ()
    wrong_confidence_drop: float = 0.0
    hedge_rate: float = 0.0
    hedge_drop: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mutation_vocabulary", tuple(self.mutation_vocabulary))
        probs = {
            "base_accuracy": self.base_accuracy,
            "confidence_noise": self.confidence_noise,
            "follow_rate": self.follow_rate,
            "wrong_confidence_drop": self.wrong_confidence_drop,
            "hedge_rate": self.hedge_rate,
            "hedge_drop": self.hedge_drop,
            **{f"keyword_accuracy[{k}]": v for k, v in self.keyword_accuracy.items()},
        }
        for name, v in probs.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "keyword_accuracy": dict(self.keyword_accuracy),
            "base_accuracy": self.base_accuracy,
            "confidence_noise": self.confidence_noise,
            "follow_rate": self.follow_rate,
            "mutation_vocabulary": list(self.mutation_vocabulary),
            "wrong_confidence_drop": self.wrong_confidence_drop,
            "hedge_rate": self.hedge_rate,
            "hedge_drop": self.hedge_drop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MockProfile":
        d = dict(d)
        d["mutation_vocabulary"] = tuple(d.get("mutation_vocabulary", ()))
        return cls(**d)


def unit_draw(*parts: object) -> float:
    """Uniform [0, 1) value that is a pure function of ``parts``."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def instruction_segment(prompt: str) -> str:
    """Text ahead of the first question block, i.e. the instruction slot of a scorer query."""
    idx = prompt.find("Question: ")
    return prompt if idx < 0 else prompt[:idx]


class MockScorer(Backend):
    name = "mock_scorer"
    supports_logprobs = True

    def __init__(self, profile: MockProfile, seed: int, items: Iterable[TaskItem] = ()):
        self.profile = profile
        self.seed = seed
        self._by_block: dict[str, TaskItem] = {}
        self._patterns = {
            kw: re.compile(r"(?<!\w)" + re.escape(kw) + r"(?!\w)", re.IGNORECASE) for kw in profile.keyword_accuracy
        }
        self.register(items)

    def register(self, items: Iterable[TaskItem]) -> None:
        """Add items to the answer key used to recognise questions inside free-text prompts."""
        for it in items:
            self._by_block[it.block()] = it

    def keywords(self, prompt: str) -> tuple[str, ...]:
        seg = instruction_segment(prompt)
        return tuple(sorted(kw for kw, pat in self._patterns.items() if pat.search(seg)))

    def accuracy_level(self, keywords: tuple[str, ...]) -> float:
        if not keywords:
            return self.profile.base_accuracy
        return max(self.profile.keyword_accuracy[k] for k in keywords)

    def _outcome(self, keywords: tuple[str, ...], item: TaskItem) -> tuple[str, float]:
        p = self.profile
        ks = ",".join(keywords)
        level = self.accuracy_level(keywords)
        correct = unit_draw(self.seed, "correct", ks, item.id) < level
        if correct:
            letter = item.gold
            hedged = unit_draw(self.seed, "hedge", ks, item.id) < p.hedge_rate
            centre = level - p.hedge_drop if hedged else level
        else:
            wrong = [k for k in item.letters if k != item.gold]
            letter = wrong[int(unit_draw(self.seed, "wrong", ks, item.id) * len(wrong))]
            centre = level - p.wrong_confidence_drop
        jitter = p.confidence_noise * (2 * unit_draw(self.seed, "noise", ks, item.id) - 1)
        return letter, min(1.0, max(0.0, centre + jitter))

    def _find_item(self, prompt: str) -> TaskItem | None:
        start = prompt.rfind("Question: ")
        end = prompt.rfind("\n")
        if start < 0 or end <= start:
            return None
        return self._by_block.get(prompt[start:end])

    def generate(self, prompt: str, params: GenParams = SCORER_PARAMS) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        item = self._find_item(prompt)
        keywords = self.keywords(prompt)
        ks = ",".join(keywords)
        if item is None:
            # unknown question: answer something plausible but uninformed
            letter = "ABCD"[int(unit_draw(self.seed, "blind", prompt) * 4)]
            return f"Answer: {letter}, Confidence: 0.2500"
        if unit_draw(self.seed, "follow", ks, item.id) >= self.profile.follow_rate:
            i = int(unit_draw(self.seed, "unfollowed", ks, item.id) * len(_UNFOLLOWED))
            a, b = item.letters[0], item.letters[1]
            return _UNFOLLOWED[i].format(a=a, b=b)
        letter, conf = self._outcome(keywords, item)
        return f"Answer: {letter}, Confidence: {conf:.4f}"

    def score_choice_logits(self, prompt: str, item: TaskItem) -> ChoiceDistribution:
        letter, conf = self._outcome(self.keywords(prompt), item)
        k = len(item.letters)
        top = max(conf, 1.0 / k)
        rest = (1.0 - top) / (k - 1)
        return ChoiceDistribution({x: (top if x == letter else rest) for x in item.letters})


class MockReference(Backend):
    """Hill-climbing proposer: copy the best history instruction and change one word.

    The new word comes from the profile's mutation vocabulary. The draw is
    seeded by the backend seed and ``params.seed`` only, so the sequence of
    proposed words does not depend on which instruction is being mutated.
    """

    name = "mock_reference"

    def __init__(self, profile: MockProfile, seed: int):
        if not profile.mutation_vocabulary:
            raise ValueError("mock reference needs a mutation vocabulary")
        self.profile = profile
        self.seed = seed

    @staticmethod
    def best_history(prompt: str) -> str:
        pairs = _HISTORY_RE.findall(prompt)
        if not pairs:
            return ""
        best_score = max(int(s) for _, s in pairs)
        # history is rendered ascending, so the last of equal scores is the strongest
        return [t for t, s in pairs if int(s) == best_score][-1]

    def generate(self, prompt: str, params: GenParams = SCORER_PARAMS) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        rng = random.Random(f"{self.seed}:{params.seed}")
        token = rng.choice(self.profile.mutation_vocabulary)
        words = self.best_history(prompt).split()
        if not words or rng.random() < 0.5:
            words.insert(rng.randrange(len(words) + 1), token)
        else:
            words[rng.randrange(len(words))] = token
        return f"New instruction: [{' '.join(words)}]"

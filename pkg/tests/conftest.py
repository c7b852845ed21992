from __future__ import annotations

import random

import pytest

from promptopt.backend import Backend, ChoiceDistribution, GenParams
from promptopt.dataset import Dataset, TaskItem, synthetic_dataset
from promptopt.metaprompt import parse_history

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class GrowingScorer(Backend):
    """All answers right; confidence on gold grows with the instruction's word count."""

    name = "growing"
    supports_logprobs = True

    def score_choice_logits(self, prompt, item):
        n = len(prompt.split("\n\n", 1)[0].split())
        top = 1 - 1 / (n + 2)
        rest = (1 - top) / (len(item.letters) - 1)
        return ChoiceDistribution({k: (top if k == item.gold else rest) for k in item.letters})


class AppendingReference(Backend):
    """Copies the best history instruction and appends a word unique to the call."""

    name = "appending"

    def generate(self, prompt, params=GenParams()):
        pairs = parse_history(prompt)
        best = max(pairs, key=lambda p: p[1])[1]
        text = [t for t, s in pairs if s == best][-1]
        return f"[{text} w{params.seed % 10**9}]"


@pytest.fixture
def small_dataset() -> Dataset:
    return synthetic_dataset("small", 20, seed=5)


@pytest.fixture
def item4() -> TaskItem:
    return TaskItem("q1", "Which is largest?", {"A": "1", "B": "2", "C": "3", "D": "4"}, "D")


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)

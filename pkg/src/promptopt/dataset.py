"""Multiple-choice datasets: JSONL ingest, deterministic splits, exemplar sampling.

One record per line::

    {"id": "q1", "question": "2+2?", "options": {"A": "3", "B": "4"}, "answer": "B"}

An optional sidecar ``<stem>.meta.json`` next to the file supplies
``name`` and ``domain``; otherwise the name is the file stem and the
domain is ``synthetic``. MMLU-style CSVs (question,A,B,C,D,answer) convert
with one line of pandas::

    df.apply(lambda r: {"id": str(r.name), "question": r.question,
                        "options": {k: r[k] for k in "ABCD"}, "answer": r.answer}, axis=1)
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

DOMAINS = ("commonsense", "medical", "legal", "financial", "synthetic")
LETTERS = "ABCDE"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TaskItem:
    id: str
    question: str
    options: dict[str, str]
    gold: str

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise DatasetError("item id must be a non-empty string")
        if not isinstance(self.question, str) or not self.question.strip():
            raise DatasetError(f"item {self.id!r}: empty question")
        keys = list(self.options)
        if not 2 <= len(keys) <= 5:
            raise DatasetError(f"item {self.id!r}: needs 2-5 options, got {len(keys)}")
        if keys != list(LETTERS[: len(keys)]):
            raise DatasetError(f"item {self.id!r}: option letters must run A.. in order, got {keys}")
        for k, v in self.options.items():
            if not isinstance(v, str) or not v.strip():
                raise DatasetError(f"item {self.id!r}: option {k} is empty")
        if self.gold not in self.options:
            raise DatasetError(f"item {self.id!r}: answer {self.gold!r} is not among options {keys}")

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(self.options)

    def block(self) -> str:
        """The question and lettered options as shown to the scorer."""
        lines = [f"Question: {self.question}"]
        lines += [f"{k}. {v}" for k, v in self.options.items()]
        return "\n".join(lines)

    def to_record(self) -> dict:
        return {"id": self.id, "question": self.question, "options": dict(self.options), "answer": self.gold}

    @classmethod
    def from_record(cls, rec: dict) -> "TaskItem":
        if not isinstance(rec, dict):
            raise DatasetError("record is not a JSON object")
        missing = {"id", "question", "options", "answer"} - set(rec)
        if missing:
            raise DatasetError(f"missing fields {sorted(missing)}")
        if not isinstance(rec["options"], dict):
            raise DatasetError("options must be an object")
        return cls(id=rec["id"], question=rec["question"], options=dict(rec["options"]), gold=rec["answer"])


@dataclass(frozen=True)
class Dataset:
    name: str
    items: tuple[TaskItem, ...]
    domain: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if self.domain not in DOMAINS:
            raise DatasetError(f"unknown domain {self.domain!r}")
        if not self.items:
            raise DatasetError(f"dataset {self.name!r} is empty")
        seen = set()
        for it in self.items:
            if it.id in seen:
                raise DatasetError(f"dataset {self.name!r}: duplicate id {it.id!r}")
            seen.add(it.id)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]


@dataclass(frozen=True)
class TaskSet:
    role: str
    datasets: tuple[Dataset, ...]
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        if self.role not in ("source", "target"):
            raise DatasetError(f"task set role must be source or target, got {self.role!r}")
        if not self.datasets:
            raise DatasetError("task set has no datasets")

    def all_items(self) -> list[TaskItem]:
        return [it for ds in self.datasets for it in ds.items]


def load_dataset(path: str | Path, format: str = "jsonl") -> Dataset:
    if format != "jsonl":
        raise DatasetError(f"unsupported format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    items: list[TaskItem] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item = TaskItem.from_record(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if item.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {item.id!r} (first seen on line {seen[item.id]})")
            seen[item.id] = lineno
            items.append(item)
    if not items:
        raise DatasetError(f"{path}: empty dataset file")
    name, domain = path.stem, "synthetic"
    meta = path.with_name(path.stem + ".meta.json")
    if meta.is_file():
        m = json.loads(meta.read_text(encoding="utf-8"))
        name = m.get("name", name)
        domain = m.get("domain", domain)
    return Dataset(name=name, items=tuple(items), domain=domain)


def save_dataset(dataset: Dataset, path: str | Path, meta: bool = False) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for it in dataset.items:
            fh.write(json.dumps(it.to_record(), ensure_ascii=False) + "\n")
    if meta:
        path.with_name(path.stem + ".meta.json").write_text(
            json.dumps({"name": dataset.name, "domain": dataset.domain}), encoding="utf-8"
        )
    return path


def split(dataset: Dataset, dev_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle under ``seed`` and cut off ``round(dev_fraction * N)`` items as dev."""
    if not 0 < dev_fraction < 1:
        raise DatasetError("dev_fraction must lie in (0, 1)")
    n = len(dataset)
    if n < 2:
        raise DatasetError("split needs at least 2 items")
    n_dev = round(dev_fraction * n)
    if n_dev == 0 or n_dev == n:
        raise DatasetError(f"dev_fraction {dev_fraction} leaves one side of a {n}-item split empty")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    dev = tuple(dataset.items[i] for i in order[:n_dev])
    test = tuple(dataset.items[i] for i in order[n_dev:])
    return (
        Dataset(name=f"{dataset.name}/dev", items=dev, domain=dataset.domain),
        Dataset(name=f"{dataset.name}/test", items=test, domain=dataset.domain),
    )


def sample_exemplars(dataset: Dataset, n: int, seed: int) -> list[TaskItem]:
    if n < 0 or n > len(dataset):
        raise DatasetError(f"cannot sample {n} exemplars from {len(dataset)} items")
    if n == len(dataset):
        return list(dataset.items)
    return random.Random(seed).sample(list(dataset.items), n)


def synthetic_dataset(name: str, n_items: int, seed: int, n_options: int = 4, domain: str = "synthetic") -> Dataset:
    """Filler questions with random gold letters, for offline runs against the mock scorer."""
    rng = random.Random(seed)
    letters = LETTERS[:n_options]
    items = []
    for i in range(n_items):
        opts = {k: f"option {k.lower()} of item {i}" for k in letters}
        items.append(TaskItem(id=f"{name}-{i:04d}", question=f"Item {i} of set {name}: pick the listed answer.",
                              options=opts, gold=rng.choice(letters)))
    return Dataset(name=name, items=tuple(items), domain=domain)


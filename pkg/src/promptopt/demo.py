"""Planted offline landscape for exercising the optimizer without a real model.

The source scorer rewards instructions containing ``systematically``
(accuracy 0.95 against a 0.5 base). The target scorer rewards
``rigorously`` at 0.95 and still gives ``systematically`` partial credit
(0.75), so good source instructions are a head start on the target.
Both keywords sit in the 16-word mutation vocabulary of the mock
reference model.

    python -m promptopt.demo DIR     # writes datasets and DIR/config-{source,target}.json
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from promptopt.backend import MockProfile
from promptopt.dataset import Dataset, save_dataset, synthetic_dataset

SEED = 42
SOURCE_KEYWORD = "systematically"
TARGET_KEYWORD = "rigorously"
VOCABULARY = (
    "carefully", "precisely", "thoroughly", "concisely",
    "expertly", "clearly", "logically", "calmly",
    "systematically", "rigorously", "methodically", "deliberately",
    "patiently", "strictly", "briefly", "honestly",
)  # fmt: skip
ITEMS_PER_DATASET = 300

_SHAPE = dict(
    base_accuracy=0.5,
    confidence_noise=0.02,
    follow_rate=1.0,
    mutation_vocabulary=VOCABULARY,
    wrong_confidence_drop=0.05,
    hedge_rate=0.15,
    hedge_drop=0.10,
)

SOURCE_PROFILE = MockProfile(keyword_accuracy={SOURCE_KEYWORD: 0.95}, **_SHAPE)
TARGET_PROFILE = MockProfile(keyword_accuracy={TARGET_KEYWORD: 0.95, SOURCE_KEYWORD: 0.75}, **_SHAPE)


def source_datasets(n_items: int = ITEMS_PER_DATASET) -> list[Dataset]:
    return [synthetic_dataset("general-a", n_items, 1), synthetic_dataset("general-b", n_items, 2)]


def target_datasets(n_items: int = ITEMS_PER_DATASET) -> list[Dataset]:
    return [
        synthetic_dataset("clinical-a", n_items, 3, domain="medical"),
        synthetic_dataset("clinical-b", n_items, 4, domain="medical"),
    ]


def _backend(kind: str, profile: MockProfile) -> dict:
    return {"kind": kind, "model_name": kind, "seed": SEED, "mock_profile": profile.to_dict()}


def write_demo(directory: str | Path, stage: str = "source", n_items: int = ITEMS_PER_DATASET, **optimizer) -> Path:
    """Write demo datasets plus a config for ``stage`` and return the config path."""
    d = Path(directory)
    (d / "data").mkdir(parents=True, exist_ok=True)
    paths = {}
    for role, sets in (("source", source_datasets(n_items)), ("target", target_datasets(n_items))):
        paths[role] = []
        for ds in sets:
            save_dataset(ds, d / "data" / f"{ds.name}.jsonl", meta=True)
            paths[role].append(f"data/{ds.name}.jsonl")
    profile = SOURCE_PROFILE if stage == "source" else TARGET_PROFILE
    config = {
        "backends": {"reference": _backend("mock_reference", profile), "scorer": _backend("mock_scorer", profile)},
        "datasets": paths,
        "descriptions": {
            "source": "Answer general multiple-choice questions with a letter and a confidence.",
            "target": "Answer clinical multiple-choice questions with a letter and a confidence.",
        },
        "optimizer": {"rng_seed": SEED, **optimizer},
        "template_id": "palm-style",
        "confidence_mode": "logits",
        "store_root": "runs",
    }
    out = d / f"config-{stage}.json"
    out.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return out


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "demo"
    for stage in ("source", "target"):
        print(write_demo(target, stage))

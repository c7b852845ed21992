"""Run configuration file (JSON).

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from promptopt.backend import BackendConfig, BackendConfigError
from promptopt.dataset import Dataset, DatasetError, TaskSet, load_dataset
from promptopt.evaluator import MODES
from promptopt.metaprompt import BUILTIN_TEMPLATES
from promptopt.optimizer import OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    reference: BackendConfig
    scorer: BackendConfig
    datasets: dict[str, tuple[Path, ...]]
    optimizer: OptimizerConfig
    store_root: Path
    descriptions: dict[str, str] = field(default_factory=dict)
    max_requests: int | None = None
    source_path: Path | None = None

    def task_set(self, role: str) -> TaskSet:
        paths = self.datasets.get(role, ())
        if not paths:
            raise ConfigError(f"config lists no {role} datasets")
        return TaskSet(role=role, datasets=tuple(load_dataset(p) for p in paths), description=self.descriptions.get(role, ""))

    def all_datasets(self) -> list[Dataset]:
        return [load_dataset(p) for paths in self.datasets.values() for p in paths]

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, optimizer=replace(self.optimizer, rng_seed=seed))

    def snapshot(self) -> dict:
        return {
            "backends": {"reference": self.reference.to_dict(), "scorer": self.scorer.to_dict()},
            "datasets": {k: [str(p) for p in v] for k, v in self.datasets.items()},
            "descriptions": dict(self.descriptions),
            "store_root": str(self.store_root),
            "max_requests": self.max_requests,
        }


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    try:
        backends = raw["backends"]
        reference = BackendConfig.from_dict(backends["reference"])
        scorer = BackendConfig.from_dict(backends["scorer"])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing backend entry {exc}") from None
    except BackendConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if set(backends) - {"reference", "scorer"}:
        raise ConfigError(f"{path}: exactly one reference and one scorer backend expected")

    datasets = {}
    for role, paths in raw.get("datasets", {}).items():
        if role not in ("source", "target"):
            raise ConfigError(f"{path}: unknown dataset role {role!r}")
        if isinstance(paths, str):
            paths = [paths]
        resolved = tuple(resolve(p) for p in paths)
        for p in resolved:
            if not p.is_file():
                raise ConfigError(f"dataset path does not exist or is unreadable: {p}")
        datasets[role] = resolved
    if not datasets:
        raise ConfigError(f"{path}: no datasets configured")

    opt = dict(raw.get("optimizer", {}))
    if "template_id" in raw:
        opt["template_id"] = raw["template_id"]
    if "confidence_mode" in raw:
        opt["confidence_mode"] = raw["confidence_mode"]
    if opt.get("confidence_mode", "logits") not in MODES:
        raise ConfigError(f"{path}: unknown confidence_mode {opt['confidence_mode']!r}")
    tid = opt.get("template_id", "palm-style")
    if tid not in BUILTIN_TEMPLATES:
        tpath = resolve(tid)
        if not tpath.is_file():
            raise ConfigError(f"template {tid!r} is neither built in nor an existing file")
        opt["template_id"] = str(tpath)
    try:
        optimizer = OptimizerConfig.from_dict(opt)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: optimizer settings: {exc}") from None

    return RunConfig(
        reference=reference,
        scorer=scorer,
        datasets=datasets,
        optimizer=optimizer,
        store_root=resolve(raw.get("store_root", "runs")),
        descriptions=dict(raw.get("descriptions", {})),
        max_requests=raw.get("max_requests"),
        source_path=path,
    )


def check_datasets(config: RunConfig) -> None:
    """Parse every configured dataset so that bad files fail before any model call."""
    for paths in config.datasets.values():
        for p in paths:
            try:
                load_dataset(p)
            except DatasetError as exc:
                raise ConfigError(str(exc)) from None

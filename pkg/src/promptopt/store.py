"""On-disk run records.

Each run lives in ``<root>/<run_id>/``::

    config.json   run id, stage, creation time, config snapshot
    steps.jsonl   one StepEntry per line, appended and fsynced per step
    best.json     best prompt so far, rewritten atomically after each step
    pool.json     final pool; written on close, so its presence marks completion
    .lock         held by the single writer while the run is open

The step log is the source of truth: ``best`` is recomputed from it on load.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import secrets
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from promptopt.metaprompt import PromptRecord, top_records
from promptopt.metrics import MetricVector

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "best_so_far", "mean_candidate", "scorer_calls")


class StoreError(RuntimeError):
    pass


class RunNotFound(StoreError):
    pass


class IntegrityError(StoreError):
    pass


class StageMismatch(StoreError):
    pass


@dataclass(frozen=True)
class CandidateEntry:
    text: str
    composite: float
    per_dataset: dict[str, MetricVector]
    parent_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "composite": self.composite,
            "per_dataset": {k: v.to_dict() for k, v in self.per_dataset.items()},
            "parent_ids": list(self.parent_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateEntry":
        return cls(
            text=d["text"],
            composite=d["composite"],
            per_dataset={k: MetricVector.from_dict(v) for k, v in d["per_dataset"].items()},
            parent_ids=tuple(d.get("parent_ids", ())),
        )


@dataclass(frozen=True)
class StepEntry:
    step: int
    candidates: tuple[CandidateEntry, ...]
    best_so_far: float
    wall_time: float = 0.0
    scorer_calls: int = 0
    rejected: int = 0

    @property
    def mean_candidate(self) -> float | None:
        if not self.candidates:
            return None
        return math.fsum(c.composite for c in self.candidates) / len(self.candidates)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "candidates": [c.to_dict() for c in self.candidates],
            "best_so_far": self.best_so_far,
            "wall_time": self.wall_time,
            "scorer_calls": self.scorer_calls,
            "rejected": self.rejected,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepEntry":
        return cls(
            step=d["step"],
            candidates=tuple(CandidateEntry.from_dict(c) for c in d["candidates"]),
            best_so_far=d["best_so_far"],
            wall_time=d.get("wall_time", 0.0),
            scorer_calls=d.get("scorer_calls", 0),
            rejected=d.get("rejected", 0),
        )

    def same_payload(self, other: "StepEntry") -> bool:
        # wall time differs between otherwise identical replays
        a, b = self.to_dict(), other.to_dict()
        a.pop("wall_time")
        b.pop("wall_time")
        return a == b


@dataclass
class RunRecord:
    run_id: str
    created_at: str
    stage: str
    config: dict
    step_log: list[StepEntry] = field(default_factory=list)
    final_pool: list[PromptRecord] | None = None
    best: PromptRecord | None = None

    @property
    def completed(self) -> bool:
        return self.final_pool is not None

    def candidate_records(self) -> list[PromptRecord]:
        out = []
        for entry in self.step_log:
            for c in entry.candidates:
                out.append(record_from_candidate(c, self.stage, entry.step))
        return out

    def check_integrity(self) -> None:
        prev_step, prev_best = 0, -math.inf
        running = -math.inf
        for entry in self.step_log:
            if entry.step <= prev_step:
                raise IntegrityError(f"run {self.run_id}: step {entry.step} follows step {prev_step}")
            if entry.best_so_far < prev_best:
                raise IntegrityError(f"run {self.run_id}: best_so_far decreases at step {entry.step}")
            for c in entry.candidates:
                running = max(running, c.composite)
            if entry.candidates or running > -math.inf:
                if entry.best_so_far != running:
                    raise IntegrityError(
                        f"run {self.run_id}: step {entry.step} best_so_far {entry.best_so_far} != log maximum {running}"
                    )
            prev_step, prev_best = entry.step, entry.best_so_far
        if self.best is not None and self.step_log and self.best.composite != running:
            raise IntegrityError(f"run {self.run_id}: best does not match the step log")


def record_from_candidate(c: CandidateEntry, stage: str, step: int) -> PromptRecord:
    return PromptRecord(
        text=c.text,
        composite=c.composite,
        metric_vector=mean_vector(c.per_dataset.values()) if c.per_dataset else None,
        stage=stage,
        step=step,
        parent_ids=c.parent_ids,
        per_dataset=dict(c.per_dataset),
    )


def mean_vector(vectors: Iterable[MetricVector]) -> MetricVector:
    vs = list(vectors)
    n = len(vs)

    def avg(name):
        return min(1.0, max(0.0, math.fsum(getattr(v, name) for v in vs) / n))

    return MetricVector(
        acc=avg("acc"),
        ece=avg("ece"),
        auroc=avg("auroc"),
        pr_p=avg("pr_p"),
        pr_n=avg("pr_n"),
        ifr=avg("ifr"),
        n_scored=sum(v.n_scored for v in vs),
        n_total=sum(v.n_total for v in vs),
        degenerate=tuple(sorted({d for v in vs for d in v.degenerate})),
    )


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def new_run_id() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S") + "-" + secrets.token_hex(3)


class RunStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._last_step: dict[str, StepEntry] = {}

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def _require(self, run_id: str) -> Path:
        d = self.run_dir(run_id)
        if not (d / "config.json").is_file():
            raise RunNotFound(f"unknown run {run_id!r} under {self.root}")
        return d

    def create_run(self, stage: str, config: dict, run_id: str | None = None) -> str:
        run_id = run_id or new_run_id()
        d = self.run_dir(run_id)
        d.mkdir(parents=True, exist_ok=False)
        self._acquire_lock(d)
        meta = {
            "run_id": run_id,
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "stage": stage,
            "config": config,
        }
        _atomic_write(d / "config.json", _dump(meta))
        (d / "steps.jsonl").touch()
        return run_id

    def _acquire_lock(self, d: Path) -> None:
        lock = d / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreError(f"{d} is locked by another writer ({lock})") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))

    def _release_lock(self, d: Path) -> None:
        try:
            (d / ".lock").unlink()
        except FileNotFoundError:
            pass

    def _read_steps(self, d: Path) -> list[StepEntry]:
        entries = []
        path = d / "steps.jsonl"
        if not path.is_file():
            raise IntegrityError(f"missing {path}")
        raw = path.read_text(encoding="utf-8")
        lines = raw.split("\n")
        for i, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                entries.append(StepEntry.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                if i == len(lines) and not raw.endswith("\n"):
                    # torn final append from a crash mid-write; the step never completed
                    log.warning("%s: ignoring torn trailing line", path)
                    break
                raise IntegrityError(f"{path}:{i}: unreadable step entry ({exc})") from None
        return entries

    def record_step(self, run_id: str, entry: StepEntry) -> None:
        d = self._require(run_id)
        if (d / "pool.json").exists():
            raise StoreError(f"run {run_id} is closed")
        last = self._last_step.get(run_id)
        if last is None:
            steps = self._read_steps(d)
            last = steps[-1] if steps else None
        if last is not None:
            if entry.step == last.step and entry.same_payload(last):
                return
            if entry.step <= last.step:
                raise StoreError(f"run {run_id}: step {entry.step} does not follow step {last.step}")
        with (d / "steps.jsonl").open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._last_step[run_id] = entry

    def write_best(self, run_id: str, best: PromptRecord) -> None:
        _atomic_write(self._require(run_id) / "best.json", _dump(best.to_dict()))

    def finalize(self, run_id: str, pool: list[PromptRecord], best: PromptRecord) -> None:
        d = self._require(run_id)
        _atomic_write(d / "best.json", _dump(best.to_dict()))
        _atomic_write(d / "pool.json", _dump([r.to_dict() for r in pool]))
        self._release_lock(d)
        self._last_step.pop(run_id, None)

    def abandon(self, run_id: str) -> None:
        """Release the writer lock of a run that stopped early; it stays incomplete."""
        self._release_lock(self.run_dir(run_id))
        self._last_step.pop(run_id, None)

    def list_runs(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "config.json").is_file())

    def load_run(self, run_id: str) -> RunRecord:
        d = self._require(run_id)
        meta = json.loads((d / "config.json").read_text(encoding="utf-8"))
        rec = RunRecord(
            run_id=meta["run_id"],
            created_at=meta["created_at"],
            stage=meta["stage"],
            config=meta["config"],
            step_log=self._read_steps(d),
        )
        if (d / "pool.json").is_file():
            rec.final_pool = [PromptRecord.from_dict(x) for x in json.loads((d / "pool.json").read_text("utf-8"))]
        cands = rec.candidate_records()
        if cands:
            rec.best = top_records(cands, 1)[0]
        rec.check_integrity()
        return rec

    def load_source_pool(self, run_id: str) -> list[PromptRecord]:
        d = self._require(run_id)
        meta = json.loads((d / "config.json").read_text(encoding="utf-8"))
        if meta["stage"] != "source":
            raise StageMismatch(f"run {run_id} is a {meta['stage']}-stage run, expected source")
        pool_file = d / "pool.json"
        if not pool_file.is_file():
            raise IntegrityError(f"run {run_id} is incomplete: missing {pool_file}")
        pool = [PromptRecord.from_dict(x) for x in json.loads(pool_file.read_text("utf-8"))]
        return sorted(pool, key=lambda r: (-r.composite, r.id))

    def curve_rows(self, run_id: str) -> list[dict]:
        rec = self.load_run(run_id)
        if not rec.step_log:
            raise StoreError(f"run {run_id} has no steps")
        rows = [
            {
                "step": e.step,
                "best_so_far": e.best_so_far,
                "mean_candidate": e.mean_candidate,
                "scorer_calls": e.scorer_calls,
            }
            for e in rec.step_log
        ]
        for a, b in zip(rows, rows[1:]):
            if b["best_so_far"] < a["best_so_far"]:
                raise IntegrityError(f"run {run_id}: best_so_far decreases at step {b['step']}")
        return rows

    def export_curve(self, run_id: str, format: str = "csv", out_path: str | Path | None = None) -> Path:
        if format not in ("csv", "json"):
            raise ValueError(f"unknown export format {format!r}")
        rows = self.curve_rows(run_id)
        path = Path(out_path) if out_path else self.run_dir(run_id) / f"curve.{format}"
        if format == "json":
            _atomic_write(path, json.dumps({"run_id": run_id, "columns": list(CURVE_COLUMNS), "rows": rows}, indent=2))
        else:
            with path.open("w", encoding="utf-8", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
                w.writeheader()
                for r in rows:
                    w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else r[k]) for k in CURVE_COLUMNS})
        return path


def read_curve(path: str | Path) -> list[dict]:
    """Load an exported curve (csv or json) back into rows of numbers."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))["rows"]
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(
                {
                    "step": int(r["step"]),
                    "best_so_far": float(r["best_so_far"]),
                    "mean_candidate": float(r["mean_candidate"]) if r["mean_candidate"] else None,
                    "scorer_calls": int(r["scorer_calls"]),
                }
            )
    return rows

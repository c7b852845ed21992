"""Two-stage instruction search.

Stage ``source`` climbs from a hand-written origin instruction over a set
of related datasets; stage ``target`` restarts from the best source
instructions and climbs over the target datasets. Each step asks the
reference model for ``candidates_per_step`` new instructions, scores the
new ones on every dataset of the task set, and merges them into the pool.
"""

from __future__ import annotations

import logging
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from promptopt.backend import Backend, GenParams
from promptopt.dataset import TaskItem, TaskSet
from promptopt.evaluator import MODES, evaluate_prompt
from promptopt.metaprompt import (
    CandidateRejected,
    PromptRecord,
    build_reference_prompt,
    extract_candidate,
    load_template,
    normalize_text,
    prompt_id,
    top_records,
)
from promptopt.store import CandidateEntry, RunStore, StepEntry, mean_vector

log = logging.getLogger(__name__)

DEFAULT_ORIGIN_PROMPT = (
    "Answer the following multiple-choice questions by selecting the most accurate option from "
    "'A', 'B', 'C', or 'D'. Use your general knowledge across various domains to provide the best answer."
)

CONTINUE = "continue"
STAGNATED = "stagnated"
MAX_STEPS_REACHED = "max_steps_reached"


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    candidates_per_step: int = 8
    max_steps: int = 200
    patience: int = 20
    min_improvement: float = 1e-6
    top_k_history: int = 20
    seed_pool_size: int = 4
    origin_prompt: str = DEFAULT_ORIGIN_PROMPT
    confidence_mode: str = "logits"
    exemplar_count: int = 3
    rng_seed: int = 0
    template_id: str = "palm-style"
    max_candidate_chars: int = 500
    reference_temperature: float = 1.0
    eval_shots: int = 0
    workers: int = 1

    def __post_init__(self):
        counts = ("candidates_per_step", "max_steps", "patience", "top_k_history", "seed_pool_size", "workers")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.exemplar_count < 0 or self.eval_shots < 0:
            raise ValueError("exemplar counts must be >= 0")
        if self.min_improvement < 0:
            raise ValueError("min_improvement must be >= 0")
        if self.confidence_mode not in MODES:
            raise ValueError(f"unknown confidence mode {self.confidence_mode!r}")
        if not self.origin_prompt.strip():
            raise ValueError("origin_prompt is empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown optimizer settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    stage: str
    task_set: TaskSet
    step: int = 0
    pool: list[PromptRecord] = field(default_factory=list)
    best: PromptRecord | None = None
    steps_since_improvement: int = 0
    scorer_calls: int = 0
    log: list[StepEntry] = field(default_factory=list)


def check_termination(state: OptimizerState, config: OptimizerConfig) -> str:
    if state.step >= config.max_steps:
        return MAX_STEPS_REACHED
    if state.steps_since_improvement >= config.patience:
        return STAGNATED
    return CONTINUE


def select_seeds(source_pool: Sequence[PromptRecord], seed_pool_size: int) -> list[PromptRecord]:
    if not source_pool:
        raise OptimizerError("source pool is empty; run the source stage first")
    return top_records(source_pool, seed_pool_size)


def _derived_seed(*parts: object) -> int:
    # random.Random hashes str seeds with SHA-512, stable across processes
    return random.Random(":".join(map(str, parts))).getrandbits(63)


def score_instruction(
    text: str,
    task_set: TaskSet,
    scorer: Backend,
    config: OptimizerConfig,
    *,
    stage: str,
    step: int,
    parent_ids: Sequence[str] = (),
    shots: Sequence[TaskItem] = (),
) -> tuple[PromptRecord, int]:
    """Evaluate ``text`` on every dataset; composite is the plain mean over datasets."""
    per_dataset = {}
    composites = []
    calls = 0
    for ds in task_set.datasets:
        res = evaluate_prompt(
            text,
            ds,
            scorer,
            config.confidence_mode,
            exemplars=shots,
            eval_seed=config.rng_seed,
            workers=config.workers,
        )
        per_dataset[ds.name] = res.metrics
        composites.append(res.composite.value)
        calls += res.scorer_calls
    composite = math.fsum(composites) / len(composites)
    rec = PromptRecord(
        text=text,
        composite=min(1.0, max(0.0, composite)),
        metric_vector=mean_vector(per_dataset.values()),
        stage=stage,
        step=step,
        parent_ids=tuple(parent_ids),
        per_dataset=per_dataset,
    )
    return rec, calls


def _entry(rec: PromptRecord) -> CandidateEntry:
    return CandidateEntry(rec.text, rec.composite, dict(rec.per_dataset), rec.parent_ids)


def _eval_shots(task_set: TaskSet, config: OptimizerConfig) -> list[TaskItem]:
    if not config.eval_shots:
        return []
    items = task_set.all_items()
    return random.Random(_derived_seed(config.rng_seed, "shots")).sample(items, min(config.eval_shots, len(items)))


def _merge(state: OptimizerState, new: Sequence[PromptRecord], config: OptimizerConfig) -> None:
    by_key = {normalize_text(r.text): i for i, r in enumerate(state.pool)}
    for rec in new:
        key = normalize_text(rec.text)
        if key in by_key:
            i = by_key[key]
            if rec.composite > state.pool[i].composite:
                state.pool[i] = rec
        else:
            by_key[key] = len(state.pool)
            state.pool.append(rec)
    best = top_records(state.pool, 1)[0]
    prev = state.best.composite if state.best is not None else -math.inf
    if best.composite > prev + config.min_improvement:
        state.steps_since_improvement = 0
    else:
        state.steps_since_improvement += 1
    state.best = best


def initialize(
    config: OptimizerConfig,
    task_set: TaskSet,
    scorer: Backend,
    seeds: Sequence[PromptRecord] = (),
) -> OptimizerState:
    """Step 1: score the origin instruction (source) or the seed instructions (target)."""
    stage = task_set.role
    state = OptimizerState(stage=stage, task_set=task_set)
    t0 = time.perf_counter()
    state.step = 1
    shots = _eval_shots(task_set, config)
    if stage == "source":
        starts = [(config.origin_prompt.strip(), ())]
    else:
        if not seeds:
            raise OptimizerError("target stage needs seed prompts from a source run")
        starts = [(s.text, (s.id,)) for s in seeds]
    records, calls = [], 0
    seen = set()
    for text, parents in sorted(starts, key=lambda x: prompt_id(x[0])):
        if normalize_text(text) in seen:
            continue
        seen.add(normalize_text(text))
        rec, n = score_instruction(text, task_set, scorer, config, stage=stage, step=1, parent_ids=parents, shots=shots)
        records.append(rec)
        calls += n
    state.pool = list(records)
    state.best = top_records(state.pool, 1)[0]
    state.scorer_calls += calls
    state.log.append(
        StepEntry(
            step=1,
            candidates=tuple(_entry(r) for r in records),
            best_so_far=state.best.composite,
            wall_time=time.perf_counter() - t0,
            scorer_calls=calls,
        )
    )
    return state


def step(state: OptimizerState, config: OptimizerConfig, reference: Backend, scorer: Backend) -> OptimizerState:
    """One generate-score-merge round. Mutates and returns ``state``."""
    if check_termination(state, config) != CONTINUE:
        raise OptimizerError("step() called on a terminated run")
    t0 = time.perf_counter()
    state.step += 1
    t = state.step
    task_set = state.task_set
    items = task_set.all_items()
    rng = random.Random(_derived_seed(config.rng_seed, state.stage, t, "exemplars"))
    exemplars = rng.sample(items, min(config.exemplar_count, len(items)))
    template = load_template(config.template_id)
    meta = build_reference_prompt(state.pool, exemplars, template, config.top_k_history, task_set.description)

    def propose(i: int) -> str:
        params = GenParams(
            temperature=config.reference_temperature,
            max_tokens=512,
            seed=_derived_seed(config.rng_seed, state.stage, t, i),
        )
        return reference.generate(meta, params)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            completions = list(pool.map(propose, range(config.candidates_per_step)))
    else:
        completions = [propose(i) for i in range(config.candidates_per_step)]

    known = {normalize_text(r.text) for r in state.pool}
    fresh: dict[str, str] = {}
    rejected = 0
    for c in completions:
        try:
            text = extract_candidate(c, config.max_candidate_chars)
        except CandidateRejected as exc:
            log.debug("step %d: discarded candidate (%s)", t, exc)
            rejected += 1
            continue
        key = normalize_text(text)
        if key in known or key in fresh:
            continue
        fresh[key] = text

    shots = _eval_shots(task_set, config)
    parent = (state.best.id,) if state.best is not None else ()
    new_records, calls = [], 0
    for text in sorted(fresh.values(), key=prompt_id):
        rec, n = score_instruction(text, task_set, scorer, config, stage=state.stage, step=t, parent_ids=parent, shots=shots)
        new_records.append(rec)
        calls += n
    _merge(state, new_records, config)
    state.scorer_calls += calls
    entry = StepEntry(
        step=t,
        candidates=tuple(_entry(r) for r in new_records),
        best_so_far=state.best.composite,
        wall_time=time.perf_counter() - t0,
        scorer_calls=calls,
        rejected=rejected,
    )
    state.log.append(entry)
    log.info(
        "%s step %d: %d new, best %.4f, stagnant %d",
        state.stage, t, len(new_records), state.best.composite, state.steps_since_improvement,
    )
    return state


@dataclass
class StageResult:
    pool: list[PromptRecord]
    best: PromptRecord
    steps: int
    termination: str
    run_id: str | None
    log: list[StepEntry]
    scorer_calls: int


def run_stage(
    config: OptimizerConfig,
    task_set: TaskSet,
    reference: Backend,
    scorer: Backend,
    store: RunStore | None = None,
    *,
    source_pool: Sequence[PromptRecord] | None = None,
    seed_run: str | None = None,
    run_id: str | None = None,
    extra_config: dict | None = None,
) -> StageResult:
    """Run one stage to termination, persisting every step before the next begins.

    The target stage takes its seeds from ``source_pool`` or from the
    completed source run ``seed_run`` in ``store``.
    """
    stage = task_set.role
    seeds: list[PromptRecord] = []
    if stage == "target":
        if source_pool is None:
            if seed_run is None or store is None:
                raise OptimizerError("target stage needs a source pool or a seed run")
            source_pool = store.load_source_pool(seed_run)
        seeds = select_seeds(source_pool, config.seed_pool_size)
    if store is not None:
        snapshot = {"optimizer": config.to_dict(), "seed_run": seed_run, **(extra_config or {})}
        run_id = store.create_run(stage, snapshot, run_id)

    def persist(state: OptimizerState) -> None:
        if store is not None:
            store.record_step(run_id, state.log[-1])
            store.write_best(run_id, state.best)

    try:
        state = initialize(config, task_set, scorer, seeds)
        persist(state)
        while (reason := check_termination(state, config)) == CONTINUE:
            step(state, config, reference, scorer)
            persist(state)
    except BaseException:
        if store is not None:
            store.abandon(run_id)
        raise
    pool = sorted(state.pool, key=lambda r: (-r.composite, r.id))
    if store is not None:
        store.finalize(run_id, pool, state.best)
    log.info("%s stage finished at step %d (%s), best %.4f", stage, state.step, reason, state.best.composite)
    return StageResult(
        pool=pool,
        best=state.best,
        steps=state.step,
        termination=reason,
        run_id=run_id,
        log=state.log,
        scorer_calls=state.scorer_calls,
    )

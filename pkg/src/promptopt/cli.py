"""Command line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 backend or
request-budget failure (any partial run stays on disk).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from promptopt.backend import BackendConfigError, BackendError, RequestBudget, build_backend
from promptopt.config import ConfigError, RunConfig, check_datasets, load_config
from promptopt.dataset import DatasetError, load_dataset
from promptopt.evaluator import evaluate_prompt
from promptopt.metaprompt import TemplateError
from promptopt.optimizer import OptimizerError, run_stage
from promptopt.store import RunStore, StoreError

log = logging.getLogger("promptopt")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND = 0, 1, 2
TABLE_COLUMNS = (("IFR", "ifr"), ("ACC", "acc"), ("ECE", "ece"), ("ROC", "auroc"), ("PR-P", "pr_p"), ("PR-N", "pr_n"))


class UsageError(Exception):
    pass


def _backends(cfg: RunConfig, items):
    budget = RequestBudget(cfg.max_requests)
    reference = build_backend(cfg.reference, budget=budget)
    scorer = build_backend(cfg.scorer, items, budget=budget)
    return reference, scorer


def cmd_optimize(args) -> int:
    if args.stage == "target" and not args.seed_run:
        raise UsageError("the target stage needs --seed-run <source run id>")
    cfg = load_config(args.config).with_seed(args.seed)
    check_datasets(cfg)
    task_set = cfg.task_set(args.stage)
    store = RunStore(cfg.store_root)
    if args.stage == "target":
        store.load_source_pool(args.seed_run)  # fail before any model call
    reference, scorer = _backends(cfg, task_set.all_items())
    try:
        result = run_stage(
            cfg.optimizer,
            task_set,
            reference,
            scorer,
            store,
            seed_run=args.seed_run,
            extra_config=cfg.snapshot(),
        )
    finally:
        reference.close()
        scorer.close()
    if args.json:
        out = {
            "run_id": result.run_id,
            "stage": args.stage,
            "steps": result.steps,
            "termination": result.termination,
            "best_prompt": result.best.text,
            "best_composite": result.best.composite,
        }
        print(json.dumps(out, indent=2))
    else:
        print(f"run_id: {result.run_id}")
        print(f"best_prompt: {result.best.text}")
        print(f"best_composite: {result.best.composite:.4f}")
        print(f"steps: {result.steps} ({result.termination})")
    return EXIT_OK


def _read_prompt(arg: str) -> str:
    p = Path(arg)
    if len(arg) < 4096 and p.is_file():
        return p.read_text(encoding="utf-8").strip()
    return arg


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config).with_seed(args.seed)
    dataset = load_dataset(args.dataset)
    instruction = _read_prompt(args.prompt)
    _, scorer = _backends(cfg, dataset.items)
    try:
        res = evaluate_prompt(
            instruction,
            dataset,
            scorer,
            cfg.optimizer.confidence_mode,
            eval_seed=cfg.optimizer.rng_seed,
            workers=cfg.optimizer.workers,
        )
    finally:
        scorer.close()
    m = res.metrics
    values = {label: getattr(m, attr) for label, attr in TABLE_COLUMNS}
    values["composite"] = res.composite.value
    if args.json:
        print(
            json.dumps(
                {
                    "dataset": res.dataset_name,
                    "confidence_mode": res.confidence_mode,
                    "n_total": m.n_total,
                    "n_scored": m.n_scored,
                    "degenerate": list(m.degenerate),
                    "metrics": values,
                },
                indent=2,
            )
        )
    else:
        labels = list(values)
        print("  ".join(f"{k:>9}" for k in labels))
        print("  ".join(f"{v:>9.2f}" for v in values.values()))
        if m.degenerate:
            print(f"degenerate (fallback values used): {', '.join(m.degenerate)}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    store = RunStore(cfg.store_root)
    out = store.export_curve(args.run_id, args.format, args.output)
    if not args.no_plot:
        from promptopt.plotting import plot_curve

        fig = plot_curve(store.curve_rows(args.run_id), out.with_suffix(".png"), title=args.run_id)
        log.info("figure written to %s", fig)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration (JSON)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override optimizer.rng_seed")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="promptopt", parents=[common], description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", parents=[common], help="run the source or target stage")
    o.add_argument("stage", choices=("source", "target"))
    o.add_argument("--seed-run", help="completed source run to seed the target stage")
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("evaluate", parents=[common], help="score one instruction on one dataset")
    e.add_argument("prompt", help="instruction text, or a file containing it")
    e.add_argument("--dataset", required=True, help="dataset JSONL file")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", parents=[common], help="export the score curve of a run")
    r.add_argument("run_id")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--output", help="write here instead of the run directory")
    r.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("json", False), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.config is None:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DatasetError, TemplateError, StoreError, BackendConfigError, OptimizerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())

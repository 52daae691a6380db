"""Command line entry point: ``cosmocore {run,ablate,validate-corpus,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from cosmocore.core import ExperimentConfig, ValidationError, desk_config, validate_config
from cosmocore.harness import (
    RunSettings,
    format_summary_csv,
    read_jsonl,
    run_ablations,
    run_experiment,
    summarize_logs,
    write_outputs,
)
from cosmocore.miniworld.corpus import load_corpus, validate_corpus


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(Path(args.config).read_text()) if args.config else desk_config()
    if args.seeds:
        cfg = cfg.replace(seeds=args.seeds)
    if getattr(args, "no_prioritization", False):
        cfg = cfg.replace(use_prioritization=False)
    if getattr(args, "no_pruning", False):
        cfg = cfg.replace(use_pruning=False)
    problems = validate_config(cfg)
    if problems:
        raise ValidationError("invalid config: " + "; ".join(problems))
    return cfg


def _settings(args: argparse.Namespace) -> RunSettings:
    return RunSettings(
        rounds=args.rounds,
        tagger=args.tagger,
        valence_signal=args.valence_signal,
        alg1_compat=getattr(args, "alg1_compat", False),
    )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="ExperimentConfig JSON (default: stock values with capacity 10^4)")
    p.add_argument("--seeds", type=_seeds, help="comma separated seeds, e.g. 1,2,3")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--corpus", help="task corpus JSON (default: shipped corpus)")
    p.add_argument("--rounds", type=int, default=RunSettings.rounds, help="passes over the corpus per seed")
    p.add_argument("--tagger", choices=("heuristic", "mlp"), default="heuristic")
    p.add_argument("--valence-signal", choices=("advantage", "reward"), default="advantage")


def _fmt(value: float | None, spec: str) -> str:
    return "n/a" if value is None else format(value, spec)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg, load_corpus(args.corpus), _settings(args))
    out = write_outputs([result], args.out)
    for name, stats in result.aggregate.items():
        print(f"{result.arm}\t{name}\t{_fmt(stats['mean'], '.4f')} ± {_fmt(stats['std'], '.4f')}")
    for seed, reason in result.aborted.items():
        print(f"seed {seed} aborted: {reason}", file=sys.stderr)
    print(f"wrote {out}")
    return 1 if result.aborted else 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    outcome = run_ablations(cfg, load_corpus(args.corpus), _settings(args))
    results = list(outcome["arms"].values())
    out = write_outputs(results, args.out)
    (out / "ablation.json").write_text(json.dumps(outcome["deltas"], indent=2, sort_keys=True) + "\n")
    for res in results:
        agg = res.aggregate
        print(
            f"{res.arm:18s} hallucination={_fmt(agg['hallucination_rate']['mean'], '.3f')} "
            f"cycles={_fmt(agg['cycles_to_zero_error']['mean'], '.1f')} "
            f"occupancy={_fmt(agg['final_occupancy']['mean'], '.1f')}"
        )
    print(f"wrote {out}")
    return 1 if any(r.aborted for r in results) else 0


def cmd_validate_corpus(args: argparse.Namespace) -> int:
    tasks = load_corpus(args.corpus)
    problems = validate_corpus(tasks)
    for p in problems:
        print(p)
    print(f"{len(tasks)} tasks, {len(problems)} problems")
    return 1 if problems else 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    episodes = read_jsonl(run_dir / "episodes.jsonl")
    consolidation = run_dir / "consolidation.jsonl"
    reports = read_jsonl(consolidation) if consolidation.exists() else []
    text = format_summary_csv(summarize_logs(episodes, reports, RunSettings(window=args.window)))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cosmocore", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration over all seeds")
    _add_common(run)
    run.add_argument("--no-prioritization", action="store_true")
    run.add_argument("--no-pruning", action="store_true")
    run.add_argument("--alg1-compat", action="store_true", help="use the literal pseudocode prune rule")
    run.set_defaults(func=cmd_run)

    ablate = sub.add_parser("ablate", help="run baseline, full, no-prioritization and no-pruning arms")
    _add_common(ablate)
    ablate.set_defaults(func=cmd_ablate)

    val = sub.add_parser("validate-corpus", help="re-execute every reference program")
    val.add_argument("--corpus")
    val.set_defaults(func=cmd_validate_corpus)

    rep = sub.add_parser("report", help="aggregate episodes.jsonl into a CSV summary")
    rep.add_argument("run_dir")
    rep.add_argument("--out", help="CSV path (default: stdout)")
    rep.add_argument("--window", type=int, default=RunSettings.window)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

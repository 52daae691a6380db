"""Experiment orchestration: the evaluation loop and its ablation arms.

One seed runs the per-prompt loop over the corpus for several rounds. Each
iteration samples a program, executes it, tags it, stores it, applies one
on-policy update and, for cringe episodes under prioritization, an
immediate burst of replays. After each task block the buffer is pruned and
a nocturnal consolidation pass runs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from cosmocore.buffer import CosmoBuffer
from cosmocore.core import (
    AffectTag,
    BufferEntry,
    ExperimentConfig,
    Rng,
    Trajectory,
    ValidationError,
    make_rng,
    validate_config,
)
from cosmocore.miniworld.agent import Agent
from cosmocore.miniworld.corpus import TaskSpec, build_candidates
from cosmocore.miniworld.dsl import execute
from cosmocore.miniworld.features import encode_features
from cosmocore.nocturnal import ConsolidationReport, NocturnalState, consolidate
from cosmocore.tagger import MlpTagger, TaggerTrainConfig, affect_from_signal, train

log = logging.getLogger(__name__)

ARMS = ("baseline", "full", "no_prioritization", "no_pruning")
SUMMARY_COLUMNS = (
    "arm",
    "seed",
    "hallucination_rate",
    "mean_reward",
    "mean_entropy",
    "cycles_to_zero_error",
    "recurrence_rate",
    "final_occupancy",
)


@dataclass(frozen=True)
class RunSettings:
    """Knobs of the desk-scale loop that are not part of ExperimentConfig.

    ``valence_signal`` selects what the tagger sees as the normalized
    execution reward: ``"advantage"`` (reward minus the agent's expected
    value, so routine successes carry little valence) or ``"reward"`` (the
    raw execution reward).
    """

    rounds: int = 12
    agent_lr: float = 1.0
    temperature: float = 1.0
    td_scale: float = 2.0
    consolidation_batch: int = 10
    consolidation_batches: int = 1
    window: int = 5
    candidates_per_kind: int = 2
    candidate_seed: int = 0
    tagger: str = "heuristic"
    valence_signal: str = "advantage"
    alg1_compat: bool = False
    accuracy_target: float = 0.8
    accuracy_window: int = 20

    def __post_init__(self) -> None:
        if self.tagger not in ("heuristic", "mlp"):
            raise ValidationError(f"unknown tagger {self.tagger!r}")
        if self.valence_signal not in ("advantage", "reward"):
            raise ValidationError(f"unknown valence signal {self.valence_signal!r}")
        if self.rounds < 1 or self.window < 1 or self.td_scale <= 0:
            raise ValidationError("rounds and window must be >= 1, td_scale > 0")


@dataclass(frozen=True)
class EpisodeRecord:
    arm: str
    seed: int
    round: int
    task_id: str
    iteration: int
    program: str
    feedback: str
    valence: float
    arousal: float
    td_error: float
    reward: float
    replayed: bool
    policy_entropy: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class Tagger(Protocol):
    def tag(self, trajectory: Trajectory, td_error: float, signal: float) -> AffectTag: ...


@dataclass(frozen=True)
class HeuristicTagger:
    td_scale: float = 2.0

    def tag(self, trajectory: Trajectory, td_error: float, signal: float) -> AffectTag:
        return affect_from_signal(trajectory.execution_feedback, signal, td_error, self.td_scale)


@dataclass
class MlpAffectTagger:
    """Wraps a trained MLP; reads everything from the trajectory features."""

    model: MlpTagger

    def tag(self, trajectory: Trajectory, td_error: float, signal: float) -> AffectTag:
        return self.model.tag(trajectory)


# -- metrics ----------------------------------------------------------------


def hallucination_rate(records: Sequence[Any]) -> float:
    """Fraction of iterations whose reward is not positive."""
    if not records:
        raise ValidationError("hallucination_rate needs at least one record")
    return sum(1 for r in records if r.reward <= 0) / len(records)


def cycles_to_zero_error(records: Sequence[Any], window: int = 5) -> tuple[int, bool]:
    """Index of the first episode that opens ``window`` consecutive passes.

    Returns ``(index, censored)``; when no such window exists the index is
    the total number of episodes and ``censored`` is True.
    """
    if window < 1:
        raise ValidationError("window must be >= 1")
    run = 0
    for i, rec in enumerate(records):
        run = run + 1 if rec.reward > 0 else 0
        if run == window:
            return i - window + 1, False
    return len(records), True


def bug_recurrence_rate(records: Sequence[Any]) -> float:
    """Failures among episodes of tasks that had already passed once.

    A task counts as corrected from its first passing episode on; every
    later episode of that task is a post-correction episode. Returns 0.0
    when there are none.
    """
    corrected: set[str] = set()
    post = regress = 0
    for rec in records:
        if rec.task_id in corrected:
            post += 1
            regress += rec.reward <= 0
        elif rec.reward > 0:
            corrected.add(rec.task_id)
    return regress / post if post else 0.0


def episodes_to_accuracy(records: Sequence[Any], target: float = 0.8, window: int = 20) -> tuple[int, bool]:
    """Episodes until the trailing pass rate over ``window`` reaches ``target``."""
    passes = [1 if r.reward > 0 else 0 for r in records]
    total = 0
    for i, p in enumerate(passes):
        total += p
        if i >= window:
            total -= passes[i - window]
        if i + 1 >= window and total / window >= target:
            return i + 1, False
    return len(records), True


@dataclass
class SeedMetrics:
    seed: int
    hallucination_rate: float
    mean_reward: float
    mean_entropy: float
    cycles_to_zero_error: int
    cycles_censored: bool
    bug_recurrence_rate: float
    episodes_to_accuracy: int
    accuracy_censored: bool
    final_occupancy: int
    occupancy_curve: list[int] = field(default_factory=list)
    variance_curve: list[float | None] = field(default_factory=list)
    episodes: int = 0


SCALAR_FIELDS = (
    "hallucination_rate",
    "mean_reward",
    "mean_entropy",
    "cycles_to_zero_error",
    "bug_recurrence_rate",
    "episodes_to_accuracy",
    "final_occupancy",
)


def seed_metrics(
    seed: int,
    records: Sequence[EpisodeRecord],
    reports: Sequence[ConsolidationReport | dict],
    settings: RunSettings,
) -> SeedMetrics:
    reports = [r.to_dict() if isinstance(r, ConsolidationReport) else r for r in reports]
    cycles, censored = cycles_to_zero_error(records, settings.window)
    acc, acc_censored = episodes_to_accuracy(records, settings.accuracy_target, settings.accuracy_window)
    occupancy = [int(r["occupancy_after"]) for r in reports]
    return SeedMetrics(
        seed=seed,
        hallucination_rate=hallucination_rate(records),
        mean_reward=float(np.mean([r.reward for r in records])),
        mean_entropy=float(np.mean([r.policy_entropy for r in records])),
        cycles_to_zero_error=cycles,
        cycles_censored=censored,
        bug_recurrence_rate=bug_recurrence_rate(records),
        episodes_to_accuracy=acc,
        accuracy_censored=acc_censored,
        final_occupancy=occupancy[-1] if occupancy else 0,
        occupancy_curve=occupancy,
        variance_curve=[r["confidence_variance"] for r in reports],
        episodes=len(records),
    )


def aggregate(per_seed: Sequence[SeedMetrics]) -> dict[str, dict[str, float | None]]:
    """Mean and sample standard deviation of every scalar metric across seeds."""
    out: dict[str, dict[str, float | None]] = {}
    for name in SCALAR_FIELDS:
        values = [float(getattr(m, name)) for m in per_seed]
        if not values:
            out[name] = {"mean": None, "std": None, "n": 0}
            continue
        out[name] = {
            "mean": statistics.fmean(values),
            "std": statistics.stdev(values) if len(values) > 1 else None,
            "n": len(values),
        }
    return out


# -- the loop ---------------------------------------------------------------


def arm_config(base: ExperimentConfig, arm: str) -> ExperimentConfig:
    flags = {
        "baseline": (False, False),
        "full": (True, True),
        "no_prioritization": (False, True),
        "no_pruning": (True, False),
    }
    if arm not in flags:
        raise ValidationError(f"unknown arm {arm!r}")
    prio, prune = flags[arm]
    return base.replace(use_prioritization=prio, use_pruning=prune)


def arm_name(cfg: ExperimentConfig) -> str:
    return {
        (False, False): "baseline",
        (True, True): "full",
        (False, True): "no_prioritization",
        (True, False): "no_pruning",
    }[(cfg.use_prioritization, cfg.use_pruning)]


def make_agent(corpus: Sequence[TaskSpec], settings: RunSettings) -> Agent:
    candidates = {
        t.id: build_candidates(t, settings.candidates_per_kind, settings.candidate_seed) for t in corpus
    }
    return Agent(candidates, temperature=settings.temperature, lr=settings.agent_lr)


def tagger_dataset(
    corpus: Sequence[TaskSpec], settings: RunSettings, levels: Iterable[float] = np.linspace(-1.0, 1.0, 9)
) -> list[tuple[np.ndarray, AffectTag]]:
    """Synthetic supervision: rule-based labels over (task, candidate, expectation level)."""
    data = []
    levels = list(levels)
    for task in corpus:
        for prog in build_candidates(task, settings.candidates_per_kind, settings.candidate_seed):
            res = execute(prog, task.tables, task.expected)
            for expected_value in levels:
                td = res.reward - expected_value
                signal = td if settings.valence_signal == "advantage" else res.reward
                feats = encode_features(task.prompt, prog, signal)
                data.append((feats, affect_from_signal(res.feedback, signal, td, settings.td_scale)))
    return data


def fit_mlp_tagger(corpus: Sequence[TaskSpec], settings: RunSettings, rng: Rng) -> tuple[MlpTagger, Any]:
    model = MlpTagger.initialize(rng)
    report = train(
        model,
        tagger_dataset(corpus, settings),
        TaggerTrainConfig(learning_rate=0.05, l2_coefficient=1e-5, batch_size=32, epochs=60),
        rng,
    )
    return model, report


def run_episode_loop(
    cfg: ExperimentConfig,
    corpus: Sequence[TaskSpec],
    tagger: Tagger,
    agent: Agent,
    buffer: CosmoBuffer,
    rng: Rng,
    *,
    seed: int = 0,
    settings: RunSettings = RunSettings(),
    arm: str | None = None,
) -> tuple[list[EpisodeRecord], list[ConsolidationReport]]:
    """Run every round of the per-prompt loop for one seed's components."""
    if not corpus:
        raise ValidationError("corpus is empty")
    arm = arm or arm_name(cfg)
    state = NocturnalState()
    records: list[EpisodeRecord] = []
    reports: list[ConsolidationReport] = []
    mix = None if cfg.use_prioritization else 0.0

    for rnd in range(settings.rounds):
        for task in corpus:
            for it in range(1, cfg.iterations_per_prompt + 1):
                program, _, entropy = agent.act(task.id, rng)
                result = execute(program, task.tables, task.expected)
                td = agent.td_error(task.id, program, result.reward)
                signal = td if settings.valence_signal == "advantage" else result.reward
                traj = Trajectory(
                    encode_features(task.prompt, program, signal),
                    program,
                    result.feedback,
                    result.reward,
                    task.id,
                    result.detail,
                )
                tag = tagger.tag(traj, td, signal)
                entry = BufferEntry.build(traj, tag, td, cfg.lambda_weight)
                buffer.insert(entry)
                agent.learn_update(entry)
                replayed = cfg.use_prioritization and tag.valence < cfg.immediate_replay_gate
                if replayed:
                    for _ in range(cfg.dream_multiplier):
                        agent.learn_update(entry)
                records.append(
                    EpisodeRecord(
                        arm, seed, rnd, task.id, it, program.render(), result.feedback.value,
                        tag.valence, tag.arousal, td, result.reward, replayed, entropy,
                    )
                )
                if result.reward > cfg.success_break_reward:
                    break

            curiosity = agent.mean_entropy()
            if cfg.use_pruning:
                if settings.alg1_compat:
                    _alg1_prune(buffer, rng)
                else:
                    buffer.prune(curiosity, state.prune_scale)
            report = consolidate(
                buffer,
                agent,
                state,
                settings.consolidation_batch,
                settings.consolidation_batches,
                curiosity,
                rng,
                prune=cfg.use_pruning and not settings.alg1_compat,
                mix_fraction=mix,
            )
            report.extra.update(arm=arm, seed=seed, round=rnd, task_id=task.id)
            reports.append(report)
    return records, reports


def _alg1_prune(buffer: CosmoBuffer, rng: Rng) -> int:
    """Literal pseudocode rule: keep if valence < -0.2 or a coin exceeds 0.3."""
    keep = {e.seq for e in buffer if e.tag.valence < -0.2 or rng.random() > 0.3}
    return len(buffer.remove_if(lambda e: e.seq not in keep))


@dataclass
class ArmResult:
    arm: str
    config: ExperimentConfig
    settings: RunSettings
    records: list[EpisodeRecord]
    reports: list[ConsolidationReport]
    per_seed: list[SeedMetrics]
    aborted: dict[int, str]

    @property
    def aggregate(self) -> dict[str, dict[str, float | None]]:
        return aggregate(self.per_seed)


def run_seed(
    cfg: ExperimentConfig, corpus: Sequence[TaskSpec], seed: int, settings: RunSettings, arm: str | None = None
) -> tuple[list[EpisodeRecord], list[ConsolidationReport]]:
    rng = make_rng(seed)
    agent = make_agent(corpus, settings)
    buffer = CosmoBuffer(cfg)
    if settings.tagger == "mlp":
        model, _ = fit_mlp_tagger(corpus, settings, rng)
        tagger: Tagger = MlpAffectTagger(model)
    else:
        tagger = HeuristicTagger(settings.td_scale)
    return run_episode_loop(cfg, corpus, tagger, agent, buffer, rng, seed=seed, settings=settings, arm=arm)


def run_experiment(
    cfg: ExperimentConfig, corpus: Sequence[TaskSpec], settings: RunSettings = RunSettings(), arm: str | None = None
) -> ArmResult:
    """Run every configured seed; a failing seed is logged and skipped."""
    problems = validate_config(cfg)
    if problems:
        raise ValidationError("invalid config: " + "; ".join(problems))
    arm = arm or arm_name(cfg)
    if settings.alg1_compat:
        arm += "+alg1"
    records: list[EpisodeRecord] = []
    reports: list[ConsolidationReport] = []
    per_seed: list[SeedMetrics] = []
    aborted: dict[int, str] = {}
    for seed in cfg.seeds:
        try:
            seed_records, seed_reports = run_seed(cfg, corpus, seed, settings, arm)
        except Exception as exc:  # one seed failing must not sink the others
            log.error("seed %d aborted: %s: %s", seed, type(exc).__name__, exc)
            aborted[seed] = f"{type(exc).__name__}: {exc}"
            continue
        records.extend(seed_records)
        reports.extend(seed_reports)
        per_seed.append(seed_metrics(seed, seed_records, seed_reports, settings))
    return ArmResult(arm, cfg, settings, records, reports, per_seed, aborted)


def run_ablations(
    base_cfg: ExperimentConfig, corpus: Sequence[TaskSpec], settings: RunSettings = RunSettings()
) -> dict[str, Any]:
    """Run all four arms on identical seeds and pair every metric against ``full``."""
    results = {arm: run_experiment(arm_config(base_cfg, arm), corpus, settings, arm) for arm in ARMS}
    full = {m.seed: m for m in results["full"].per_seed}
    deltas: dict[str, dict[str, Any]] = {}
    for arm, res in results.items():
        if arm == "full":
            continue
        per_field: dict[str, Any] = {}
        for name in SCALAR_FIELDS:
            paired = [
                float(getattr(m, name)) - float(getattr(full[m.seed], name)) for m in res.per_seed if m.seed in full
            ]
            per_field[name] = {
                "per_seed": paired,
                "mean": statistics.fmean(paired) if paired else None,
            }
        occupancy = [
            [a - b for a, b in zip(m.occupancy_curve, full[m.seed].occupancy_curve)]
            for m in res.per_seed
            if m.seed in full
        ]
        per_field["occupancy_curve"] = occupancy
        deltas[f"{arm}_minus_full"] = per_field
    return {"arms": results, "deltas": deltas}


# -- output files -----------------------------------------------------------


def summary_rows(per_seed: Sequence[SeedMetrics], arm: str) -> list[dict[str, Any]]:
    return [
        {
            "arm": arm,
            "seed": m.seed,
            "hallucination_rate": m.hallucination_rate,
            "mean_reward": m.mean_reward,
            "mean_entropy": m.mean_entropy,
            "cycles_to_zero_error": m.cycles_to_zero_error,
            "recurrence_rate": m.bug_recurrence_rate,
            "final_occupancy": m.final_occupancy,
        }
        for m in per_seed
    ]


def format_summary_csv(rows: Iterable[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def metrics_document(result: ArmResult) -> dict[str, Any]:
    return {
        "arm": result.arm,
        "config": result.config.to_dict(),
        "settings": asdict(result.settings),
        "per_seed": [asdict(m) for m in result.per_seed],
        "aggregate": result.aggregate,
        "aborted": {str(k): v for k, v in result.aborted.items()},
    }


def write_outputs(results: Sequence[ArmResult], out_dir: str | Path) -> Path:
    """Write episodes.jsonl, consolidation.jsonl, metrics.json and summary.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "episodes.jsonl", "w", encoding="utf-8") as fh:
        for res in results:
            for rec in res.records:
                fh.write(rec.to_json() + "\n")
    with open(out / "consolidation.jsonl", "w", encoding="utf-8") as fh:
        for res in results:
            for rep in res.reports:
                fh.write(rep.to_json() + "\n")
    doc: Any = metrics_document(results[0]) if len(results) == 1 else {r.arm: metrics_document(r) for r in results}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = [row for res in results for row in summary_rows(res.per_seed, res.arm)]
    (out / "summary.csv").write_text(format_summary_csv(rows), encoding="utf-8")
    return out


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize_logs(
    episodes: Sequence[dict[str, Any]], reports: Sequence[dict[str, Any]], settings: RunSettings = RunSettings()
) -> list[dict[str, Any]]:
    """Rebuild summary rows from raw JSON-lines logs, grouped by (arm, seed)."""
    groups: dict[tuple[str, int], list[EpisodeRecord]] = {}
    for item in episodes:
        rec = EpisodeRecord(**item)
        groups.setdefault((rec.arm, rec.seed), []).append(rec)
    by_key: dict[tuple[str, int], list[dict[str, Any]]] = {}
    for rep in reports:
        by_key.setdefault((rep["arm"], int(rep["seed"])), []).append(rep)
    rows = []
    for (arm, seed), recs in groups.items():
        m = seed_metrics(seed, recs, by_key.get((arm, seed), []), settings)
        rows.extend(summary_rows([m], arm))
    return rows


import csv
import io
import json
import os
import statistics
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from cosmocore import cli, harness
from cosmocore.buffer import CosmoBuffer
from cosmocore.core import ValidationError, desk_config, make_rng
from cosmocore.harness import (
    HeuristicTagger,
    RunSettings,
    aggregate,
    bug_recurrence_rate,
    cycles_to_zero_error,
    episodes_to_accuracy,
    hallucination_rate,
    make_agent,
    metrics_document,
    read_jsonl,
    run_ablations,
    run_episode_loop,
    run_experiment,
    summarize_logs,
    write_outputs,
)
from cosmocore.miniworld.agent import Agent
from cosmocore.miniworld.corpus import load_corpus

GOLDEN = Path(__file__).parent / "golden" / "metrics_seed1.json"
CORPUS = load_corpus()
SHORT = RunSettings(rounds=3)


def _recs(rewards, task="t"):
    return [SimpleNamespace(reward=r, task_id=task) for r in rewards]


@pytest.mark.parametrize(
    "rewards, expected", [([1.0] * 5, 0.0), ([-1.0, -0.5], 1.0), ([-0.5] * 13 + [1.0] * 87, 0.13)]
)
def test_hallucination_rate_examples(rewards, expected):
    assert hallucination_rate(_recs(rewards)) == pytest.approx(expected, abs=1e-12)


def test_hallucination_rate_empty():
    with pytest.raises(ValidationError):
        hallucination_rate([])


def test_cycles_to_zero_error_examples():
    assert cycles_to_zero_error(_recs([1.0] * 10), 5) == (0, False)
    assert cycles_to_zero_error(_recs([-1.0, 1.0] * 10), 5) == (20, True)
    # hand-built: errors scattered through episode 43, clean from 44 on
    rewards = [1.0 if i % 3 else -0.5 for i in range(43)] + [-1.0] + [1.0] * 5
    assert cycles_to_zero_error(_recs(rewards), 5) == (44, False)
    with pytest.raises(ValidationError):
        cycles_to_zero_error(_recs([1.0]), 0)


def test_bug_recurrence_rate_examples():
    recs = [
        SimpleNamespace(task_id="a", reward=-1.0),
        SimpleNamespace(task_id="a", reward=1.0),  # corrected
        SimpleNamespace(task_id="a", reward=-0.5),  # regression
        SimpleNamespace(task_id="b", reward=1.0),
        SimpleNamespace(task_id="a", reward=1.0),
        SimpleNamespace(task_id="b", reward=1.0),
    ]
    assert bug_recurrence_rate(recs) == pytest.approx(1 / 3)
    assert bug_recurrence_rate(_recs([-1.0, -1.0])) == 0.0


def test_episodes_to_accuracy():
    assert episodes_to_accuracy(_recs([1.0] * 30), 0.8, 20) == (20, False)
    # window over episodes 2..21 is the first holding 16 of 20 passes
    assert episodes_to_accuracy(_recs([-1.0] * 5 + [1.0] * 30), 0.8, 20) == (21, False)
    assert episodes_to_accuracy(_recs([-1.0] * 30), 0.8, 20) == (30, True)


def test_baseline_occupancy_is_monotone():
    cfg = desk_config(use_prioritization=False, use_pruning=False, seeds=(1,))
    res = run_experiment(cfg, CORPUS, SHORT)
    curve = res.per_seed[0].occupancy_curve
    assert len(curve) == 3 * len(CORPUS)
    assert all(b >= a for a, b in zip(curve, curve[1:]))
    assert curve[-1] == len(res.records)


def test_trivial_task_breaks_at_first_iteration():
    task = CORPUS[0]
    cfg = desk_config(seeds=(1,))
    agent = Agent({task.id: [task.reference]})
    records, reports = run_episode_loop(
        cfg, [task], HeuristicTagger(), agent, CosmoBuffer(cfg), make_rng(1), settings=RunSettings(rounds=1)
    )
    assert len(records) == 1
    assert records[0].iteration == 1 and records[0].reward == 1.0
    assert len(reports) == 1


def test_loop_respects_iteration_cap_and_replay_gate():
    cfg = desk_config(seeds=(1,), iterations_per_prompt=3)
    res = run_experiment(cfg, CORPUS[:4], RunSettings(rounds=2))
    assert max(r.iteration for r in res.records) <= 3
    for r in res.records:
        assert r.replayed == (r.valence < -0.5)
    base = run_experiment(cfg.replace(use_prioritization=False), CORPUS[:4], RunSettings(rounds=2))
    assert not any(r.replayed for r in base.records)


def test_runs_are_deterministic(tmp_path):
    cfg = desk_config(seeds=(1, 2))
    a = write_outputs([run_experiment(cfg, CORPUS, SHORT)], tmp_path / "a")
    b = write_outputs([run_experiment(cfg, CORPUS, SHORT)], tmp_path / "b")
    for name in ("episodes.jsonl", "consolidation.jsonl", "metrics.json", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_aggregate_matches_independent_recomputation(tmp_path):
    cfg = desk_config(seeds=(1, 2, 3))
    res = run_experiment(cfg, CORPUS, SHORT)
    out = write_outputs([res], tmp_path)
    episodes = read_jsonl(out / "episodes.jsonl")
    agg = json.loads((out / "metrics.json").read_text())["aggregate"]
    per_seed_rate = {}
    per_seed_reward = {}
    for seed in cfg.seeds:
        rows = [e for e in episodes if e["seed"] == seed]
        per_seed_rate[seed] = sum(e["reward"] <= 0 for e in rows) / len(rows)
        per_seed_reward[seed] = sum(e["reward"] for e in rows) / len(rows)
    rates = list(per_seed_rate.values())
    assert agg["hallucination_rate"]["mean"] == pytest.approx(sum(rates) / 3, abs=1e-12)
    m = sum(rates) / 3
    assert agg["hallucination_rate"]["std"] == pytest.approx((sum((x - m) ** 2 for x in rates) / 2) ** 0.5, abs=1e-12)
    assert agg["mean_reward"]["mean"] == pytest.approx(statistics.fmean(per_seed_reward.values()), abs=1e-12)


def test_aggregate_single_seed_has_no_std():
    res = run_experiment(desk_config(seeds=(4,)), CORPUS, SHORT)
    assert res.aggregate["hallucination_rate"]["std"] is None
    assert aggregate([])["hallucination_rate"]["n"] == 0


def test_summary_rebuilt_from_logs(tmp_path):
    res = run_experiment(desk_config(seeds=(1, 2)), CORPUS, SHORT)
    out = write_outputs([res], tmp_path)
    rows = summarize_logs(read_jsonl(out / "episodes.jsonl"), read_jsonl(out / "consolidation.jsonl"), SHORT)
    assert harness.format_summary_csv(rows) == (out / "summary.csv").read_text()
    header = next(csv.reader(io.StringIO((out / "summary.csv").read_text())))
    assert header == list(harness.SUMMARY_COLUMNS)


def test_golden_metrics_reproduced():
    doc = metrics_document(run_experiment(desk_config(seeds=(1,)), CORPUS))
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if os.environ.get("COSMOCORE_REGEN_GOLDEN"):
        GOLDEN.write_text(text)
    assert text == GOLDEN.read_text()


def test_ablation_pairs_and_occupancy_order():
    outcome = run_ablations(desk_config(seeds=(1, 2)), CORPUS, SHORT)
    arms = outcome["arms"]
    assert set(arms) == {"baseline", "full", "no_prioritization", "no_pruning"}
    deltas = outcome["deltas"]["no_pruning_minus_full"]
    assert all(d >= 0 for curve in deltas["occupancy_curve"] for d in curve)
    full = {m.seed: m.final_occupancy for m in arms["full"].per_seed}
    paired = [m.final_occupancy - full[m.seed] for m in arms["no_pruning"].per_seed]
    assert deltas["final_occupancy"]["per_seed"] == paired


def test_alg1_compat_runs_and_differs():
    cfg = desk_config(seeds=(1,))
    canon = run_experiment(cfg, CORPUS, SHORT)
    compat = run_experiment(cfg, CORPUS, RunSettings(rounds=3, alg1_compat=True))
    assert compat.arm == "full+alg1"
    assert compat.per_seed[0].final_occupancy != canon.per_seed[0].final_occupancy


def test_mlp_tagger_option_runs():
    res = run_experiment(desk_config(seeds=(1,)), CORPUS[:6], RunSettings(rounds=2, tagger="mlp"))
    assert not res.aborted and res.records
    assert all(-1 <= r.valence <= 1 and 0 <= r.arousal <= 1 for r in res.records)


def test_failing_seed_is_recorded_and_others_continue(monkeypatch):
    real = harness.run_seed

    def flaky(cfg, corpus, seed, settings, arm=None):
        if seed == 2:
            raise RuntimeError("boom")
        return real(cfg, corpus, seed, settings, arm)

    monkeypatch.setattr(harness, "run_seed", flaky)
    res = run_experiment(desk_config(seeds=(1, 2, 3)), CORPUS, SHORT)
    assert set(res.aborted) == {2} and "boom" in res.aborted[2]
    assert [m.seed for m in res.per_seed] == [1, 3]
    assert res.aggregate["hallucination_rate"]["n"] == 2


def test_invalid_settings_and_config():
    with pytest.raises(ValidationError):
        RunSettings(tagger="gpt")
    with pytest.raises(ValidationError):
        run_experiment(desk_config(capacity=0), CORPUS)
    with pytest.raises(ValidationError):
        run_episode_loop(desk_config(), [], HeuristicTagger(), make_agent(CORPUS, SHORT), CosmoBuffer(desk_config()), make_rng(0))


def test_cli_run_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", "--seeds", "1,2", "--rounds", "2", "--out", str(out)]) == 0
    for name in ("episodes.jsonl", "metrics.json", "summary.csv", "consolidation.jsonl"):
        assert (out / name).exists()
    report = tmp_path / "again.csv"
    assert cli.main(["report", str(out), "--out", str(report)]) == 0
    assert report.read_text() == (out / "summary.csv").read_text()
    assert "hallucination_rate" in capsys.readouterr().out


def test_cli_flags_map_to_config(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(desk_config(iterations_per_prompt=2).to_json())
    out = tmp_path / "r"
    code = cli.main(["run", "--config", str(cfg_path), "--seeds", "3", "--rounds", "1",
                     "--no-prioritization", "--no-pruning", "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["arm"] == "baseline"
    assert doc["config"]["iterations_per_prompt"] == 2 and doc["config"]["seeds"] == [3]


def test_cli_ablate_and_validate(tmp_path, capsys):
    assert cli.main(["ablate", "--seeds", "1", "--rounds", "1", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "summary.csv").read_text())))
    assert {r["arm"] for r in rows} == {"baseline", "full", "no_pruning", "no_prioritization"}
    assert "no_pruning_minus_full" in json.loads((tmp_path / "ablation.json").read_text())
    assert cli.main(["validate-corpus"]) == 0
    assert "0 problems" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"capacity": 0}))
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "capacity < 1" in capsys.readouterr().err

    def boom(*args, **kwargs):
        raise RuntimeError("seed failure")

    monkeypatch.setattr(harness, "run_seed", boom)
    assert cli.main(["run", "--seeds", "1", "--rounds", "1", "--out", str(tmp_path / "y")]) == 1


def test_episode_record_round_trip():
    res = run_experiment(desk_config(seeds=(1,)), CORPUS[:2], RunSettings(rounds=1))
    rec = res.records[0]
    assert harness.EpisodeRecord(**json.loads(rec.to_json())) == rec
    assert np.isfinite(rec.td_error)

import csv
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import pytest

from replaybench import cli, runner
from replaybench.config import RunConfig, StreamConfig
from replaybench.errors import PlanError

ROOT = Path(__file__).resolve().parent.parent
SMOKE = ROOT / "plans" / "smoke.ini"
TINY_STREAM = """
[stream]
dataset = synthetic
n_tasks = 2
dims = 4
per_task_n = 30
test_n = 10
"""


def write_plan(tmp_path, plan, train="epochs = 1\nhidden = 8", stream=TINY_STREAM, name="plan.ini"):
    path = tmp_path / name
    path.write_text(f"[plan]\n{plan}\n[train]\n{train}\n{stream}")
    return path


def fake_row(acc, fgt=0.1, strategy="random", seed=0, t=1.0, order="identity"):
    return {"run_id": f"experience-{strategy}-simple-{order}-s{seed}", "strategy": strategy, "mode": "simple",
            "replay_kind": "experience", "scenario": "class_incremental", "seed": str(seed),
            "accuracy": repr(acc), "forgetting_rate": repr(fgt), "wall_time_s": repr(t), "config_fingerprint": "x"}


# --- plan parsing --------------------------------------------------------------------

def test_cartesian_expansion():
    plan = runner.parse_plan(SMOKE)
    assert len(plan) == 6
    ids = [r.run_id for r in plan.runs]
    assert len(set(ids)) == 6
    assert {(r.config.strategy, r.config.seed) for r in plan.runs} == {
        (s, k) for s in ("random", "entropy") for k in (1, 2, 3)}
    assert all(r.config.epochs == 5 and r.config.hidden == (32, 16) for r in plan.runs)
    assert all(r.config.stream.dataset == "synthetic" for r in plan.runs)


def test_seed_override():
    plan = runner.parse_plan(SMOKE, seeds=[7])
    assert [r.config.seed for r in plan.runs] == [7, 7]


def test_empty_seeds_rejected(tmp_path):
    with pytest.raises(PlanError, match="seed"):
        runner.parse_plan(write_plan(tmp_path, "strategies = random\nseeds ="))


def test_unknown_strategy_names_valid_ids(tmp_path):
    with pytest.raises(PlanError) as err:
        runner.parse_plan(write_plan(tmp_path, "strategies = herding\nseeds = 1"))
    msg = str(err.value)
    assert "herding" in msg
    assert all(s in msg for s in ("random", "entropy", "coreset", "mir"))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(PlanError, match="learning_rat"):
        runner.parse_plan(write_plan(tmp_path, "strategies = random\nseeds = 1", train="learning_rat = 0.1"))


def test_non_experience_kinds_collapse_strategies(tmp_path):
    plan = runner.parse_plan(write_plan(
        tmp_path, "strategies = random, entropy\nreplay_kinds = experience, generative, none\nseeds = 0"))
    kinds = [r.config.replay_kind for r in plan.runs]
    assert kinds.count("experience") == 2
    assert kinds.count("generative") == kinds.count("none") == 1


def test_fingerprint_tracks_every_field():
    base = RunConfig()
    fp = base.fingerprint()
    assert RunConfig().fingerprint() == fp
    changed = {"strategy": "mir", "mode": "difficult", "replay_kind": "none", "n_subsample": 51,
               "n_replay": 11, "epochs": 2, "batch_size": 31, "learning_rate": 0.04, "dropout_rate": 0.1,
               "mc_passes": 9, "mc_dropout_rate": 0.4, "buffer_capacity": 100, "hidden": (64, 32),
               "kmeans_iters": 10, "vae_latent": 4, "vae_hidden": 64, "vae_learning_rate": 0.02,
               "vae_steps": 2, "seed": 1, "order": "hard_first", "stream": StreamConfig(n_tasks=4)}
    assert set(changed) == {f.name for f in fields(RunConfig)}
    for name, value in changed.items():
        assert replace(base, **{name: value}).fingerprint() != fp, name


def test_config_dict_round_trip():
    c = RunConfig(strategy="bald", hidden=(10, 5), order=(1, 0), stream=StreamConfig(difficulty=("easy", "hard")))
    assert RunConfig.from_dict(c.to_dict()) == c


# --- execution -----------------------------------------------------------------------

def test_single_run_writes_one_file_and_row(tmp_path):
    plan = runner.parse_plan(write_plan(tmp_path, "strategies = random\nseeds = 0"))
    out = tmp_path / "res"
    results = runner.execute(plan, out)
    assert len(results) == 1
    assert len(list((out / "matrices").glob("*.csv"))) == 1
    rows = runner.load_rows(out)
    assert len(rows) == 1 and list(rows[0]) == runner.CSV_HEADER
    r = results[0]
    assert float(rows[0]["accuracy"]) == r.accuracy
    task_ids, R = runner.read_matrix(out / "matrices" / f"{rows[0]['run_id']}.csv")
    assert task_ids == r.task_ids and np.array_equal(R, r.accuracy_matrix)


def test_resume_skips_completed(tmp_path):
    out = tmp_path / "res"
    runner.execute(runner.parse_plan(write_plan(tmp_path, "strategies = random\nseeds = 0, 1")), out)
    plan = runner.parse_plan(write_plan(tmp_path, "strategies = random\nseeds = 0, 1, 2"))
    fresh = runner.execute(plan, out, resume=True)
    assert [r.seed for r in fresh] == [2]
    assert len(runner.load_rows(out)) == 3
    assert runner.execute(plan, out, resume=True) == []


def test_failures_are_isolated(tmp_path, monkeypatch):
    plan = runner.parse_plan(write_plan(tmp_path, "strategies = random\nseeds = 0, 1"))
    real = runner._execute_one

    def flaky(run_id, cfg_dict, data_root):
        if cfg_dict["seed"] == 1:
            raise FloatingPointError("boom")
        return real(run_id, cfg_dict, data_root)

    monkeypatch.setattr(runner, "_execute_one", flaky)
    out = tmp_path / "res"
    assert len(runner.execute(plan, out)) == 1
    assert len(runner.load_rows(out)) == 1
    assert "boom" in (out / "failures.csv").read_text()


def _metric_columns(out):
    rows = runner.load_rows(out)
    return sorted((r["run_id"], r["accuracy"], r["forgetting_rate"], r["config_fingerprint"]) for r in rows)


def test_parallel_matches_serial(tmp_path):
    plan = runner.parse_plan(write_plan(tmp_path, "strategies = random, entropy\nseeds = 0, 1"))
    runner.execute(plan, tmp_path / "a", parallel=1)
    runner.execute(plan, tmp_path / "b", parallel=2)
    assert _metric_columns(tmp_path / "a") == _metric_columns(tmp_path / "b")


# --- summaries -----------------------------------------------------------------------

def test_summary_single_run():
    (s,) = runner.summarize([fake_row(0.85)])
    assert runner.pm(s.accuracy_mean, s.accuracy_std) == "0.850 +/- 0.000"


def test_summary_two_runs():
    (s,) = runner.summarize([fake_row(0.8, t=2.0), fake_row(0.9, seed=1, t=4.0)])
    assert s.accuracy_mean == pytest.approx(0.85)
    assert s.accuracy_std == pytest.approx(0.0707, abs=5e-5)
    assert runner.pm(s.accuracy_mean, s.accuracy_std) == "0.850 +/- 0.071"
    assert s.average_time == 3.0 and s.n_runs == 2


def test_summary_groups():
    rows = [fake_row(0.8), fake_row(0.7, strategy="mir"), fake_row(0.6, order="hard_first")]
    summary = runner.summarize(rows)
    assert len(summary) == 3
    assert "mir" in runner.render_table(summary)
    with pytest.raises(ValueError):
        runner.summarize([])


def test_summary_from_results_matches_csv(tmp_path):
    plan = runner.parse_plan(write_plan(tmp_path, "strategies = random\nseeds = 0, 1"))
    results = runner.execute(plan, tmp_path / "res")
    assert runner.summarize(results) == runner.summarize(runner.load_rows(tmp_path / "res"))


# --- command line --------------------------------------------------------------------

def test_cli_run_and_summarize(tmp_path, capsys):
    plan = write_plan(tmp_path, "strategies = random\nseeds = 0")
    out = tmp_path / "res"
    assert cli.main(["run", str(plan), "--out", str(out), "--seed", "3,4"]) == 0
    assert {r["seed"] for r in runner.load_rows(out)} == {"3", "4"}
    assert cli.main(["run", str(plan), "--out", str(out), "--seed", "3,4", "--resume"]) == 0
    assert len(runner.load_rows(out)) == 2
    assert cli.main(["summarize", str(out)]) == 0
    assert "+/-" in capsys.readouterr().out
    with open(out / "summary.csv", newline="") as fh:
        (row,) = list(csv.DictReader(fh))
    assert row["n_runs"] == "2"
    assert (out / "curves.csv").exists()


def test_cli_bad_plan_exit_code(tmp_path, capsys):
    bad = write_plan(tmp_path, "strategies = herding\nseeds = 1")
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "herding" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 2


def test_cli_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        cli.main(["run", "--help"])
    text = capsys.readouterr().out
    assert "n_subsample" in text and "50" in text


def test_cli_gen_data(tmp_path):
    spec = tmp_path / "spec.ini"
    spec.write_text(TINY_STREAM)
    out = tmp_path / "synth"
    assert cli.main(["gen-data", str(spec), "--out", str(out), "--seed", "5"]) == 0
    files = sorted(p.name for p in out.glob("*.csv"))
    assert files == ["task0_test.csv", "task0_train.csv", "task1_test.csv", "task1_train.csv"]
    with open(out / "task0_train.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["label", "x0", "x1", "x2", "x3"]
    assert len(rows) == 31
    first = (out / "task0_train.csv").read_text()
    cli.main(["gen-data", str(spec), "--out", str(out), "--seed", "5"])
    assert (out / "task0_train.csv").read_text() == first

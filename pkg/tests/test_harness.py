import csv
from pathlib import Path

import pytest
import yaml
from typer.testing import CliRunner

from rgrl import __version__
from rgrl.errors import ConfigError, NoConvergence
from rgrl.harness.cli import app
from rgrl.harness.config import build_run_config, load_run_config, with_overrides, worker_limit
from rgrl.harness.metrics import SUMMARY_FIELDS
from rgrl.harness.runner import run_ablation, run_eval, summary_from_logs
from rgrl.rl import Algorithm

runner = CliRunner()

QUICK_TRAIN = {
    "batch_size": 8,
    "buffer_capacity": 100,
    "hidden": 16,
    "warmup": 8,
    "eval_every": 10,
    "eval_episodes": 1,
}


def write_config(path: Path, **values) -> Path:
    path.write_text(yaml.safe_dump(values), encoding="utf-8")
    return path


@pytest.fixture
def one_thread(monkeypatch):
    monkeypatch.setenv("RGRL_THREADS", "1")


# ============================================================================
# RUN CONFIG
# ============================================================================

@pytest.mark.parametrize("name", ["safe-cartpole", "cartpole", "Safe-CartPole"])
def test_benchmark_aliases(name):
    run = build_run_config(name)
    assert run.benchmark == "cartpole"
    assert run.train.pipeline.K_eval == 50


def test_unknown_benchmark_is_a_config_error():
    with pytest.raises(ConfigError):
        build_run_config("acrobot")


def test_explicit_values_win_over_train_overrides():
    run = build_run_config("opf-battery", algorithm="rpo-sac", epochs=5, seeds=3, train={"epochs": 9, "seed": 4})
    assert run.benchmark == "opf"
    assert run.train.algorithm is Algorithm.RPO_SAC
    assert run.train.epochs == 5
    assert run.seeds == 3
    assert run.seed_config(2).seed == 6


def test_load_run_config_layers_file_and_flags(tmp_path):
    path = write_config(
        tmp_path / "run.yaml",
        benchmark="spring-pendulum",
        seeds=2,
        train={"algorithm": "sac-l", "batch_size": 32, "pipeline": {"K": 3}},
    )
    run = load_run_config(path, epochs=100, out=tmp_path / "out")
    assert run.benchmark == "pendulum"
    assert run.train.algorithm is Algorithm.SAC_L
    assert run.train.batch_size == 32
    assert run.train.pipeline.K == 3
    assert run.train.pipeline.K_eval == 50
    assert run.train.epochs == 100
    assert run.out == tmp_path / "out"

    flagged = load_run_config(path, benchmark="cartpole", algorithm="rpo-ddpg")
    assert flagged.benchmark == "cartpole"
    assert flagged.train.algorithm is Algorithm.RPO_DDPG


@pytest.mark.parametrize(
    "content",
    [
        "benchmark: cartpole\nlearning_rate: 0.1\n",
        "seeds: 2\n",
        "- cartpole\n",
        "benchmark: cartpole\ntrain: 3\n",
        "benchmark: cartpole\ntrain:\n  momentum: 0.9\n",
        "benchmark: [unclosed\n",
    ],
)
def test_bad_config_files(tmp_path, content):
    path = tmp_path / "run.yaml"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.yaml")


def test_with_overrides():
    cfg = build_run_config("cartpole").train
    updated = with_overrides(cfg, {"pipeline": {"K": 0}})
    assert updated.pipeline.K == 0
    assert updated.pipeline.eta_a == cfg.pipeline.eta_a
    with pytest.raises(ConfigError):
        with_overrides(cfg, {"gamma": 2.0})


def test_resolved_config_records_hash():
    run = build_run_config("cartpole")
    resolved = run.resolved()
    assert resolved["config_hash"] == run.train.config_hash()
    assert resolved["train"]["pipeline"]["K"] == 10
    assert resolved["update_interval"] == 4


def test_worker_limit(monkeypatch, tmp_path):
    monkeypatch.setenv("RGRL_THREADS", "3")
    assert worker_limit() == 3
    monkeypatch.setenv("RGRL_THREADS", "zero")
    with pytest.raises(ConfigError):
        worker_limit()
    monkeypatch.setenv("RGRL_THREADS", "0")
    with pytest.raises(ConfigError):
        worker_limit()

    monkeypatch.delenv("RGRL_THREADS")
    env_file = tmp_path / ".env"
    env_file.write_text("RGRL_THREADS=2\n", encoding="utf-8")
    assert worker_limit(env_file) == 2
    # load_dotenv exported the value into this process
    monkeypatch.delenv("RGRL_THREADS")


# ============================================================================
# COMMAND LINE
# ============================================================================

def test_version_command():
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_unknown_benchmark_exit_code(tmp_path):
    result = runner.invoke(app, ["train", "--benchmark", "acrobot", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "Usage" in result.output


def test_train_needs_a_benchmark():
    assert runner.invoke(app, ["train"]).exit_code == 2


def test_missing_checkpoint_exit_code(tmp_path):
    result = runner.invoke(app, ["eval", "--checkpoint", str(tmp_path / "none.pt")])
    assert result.exit_code == 3
    assert "CheckpointError" in result.output


def test_unknown_ablation_exit_code(tmp_path):
    result = runner.invoke(app, ["ablate", "k-swoop", "--benchmark", "cartpole", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_ablation_of_a_baseline_is_a_usage_error(tmp_path):
    result = runner.invoke(app, ["ablate", "k-sweep", "--benchmark", "cartpole", "--algo", "sac-l", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "Usage" in result.output


def test_unknown_algorithm_exit_code(tmp_path):
    result = runner.invoke(app, ["train", "--benchmark", "cartpole", "--algo", "ppo", "--out", str(tmp_path)])
    assert result.exit_code == 2


@pytest.mark.parametrize("error", [ValueError("shapes (3,) and (4,) not aligned"), NoConvergence("no solution", 1.0, 50)])
def test_failures_inside_a_run_exit_with_one(monkeypatch, tmp_path, error):
    def fail(*args, **kwargs):
        raise error

    monkeypatch.setattr("rgrl.harness.cli.run_train", fail)
    result = runner.invoke(app, ["train", "--benchmark", "cartpole", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert type(error).__name__ in result.output
    assert "Usage" not in result.output


def test_train_and_eval_from_config_file(tmp_path, one_thread):
    out = tmp_path / "run"
    path = write_config(
        tmp_path / "run.yaml",
        benchmark="safe-cartpole",
        seeds=2,
        out=str(out),
        train={"epochs": 20, **QUICK_TRAIN},
    )
    result = runner.invoke(app, ["train", "--config", str(path), "--no-progress"])
    assert result.exit_code == 0, result.output

    for k in range(2):
        seed_dir = out / f"seed_{k}"
        for name in ("config.yaml", "metrics.csv", "curve.csv", "checkpoint.pt"):
            assert (seed_dir / name).is_file()
        resolved = yaml.safe_load((seed_dir / "config.yaml").read_text(encoding="utf-8"))
        assert resolved["train"]["seed"] == k
        assert resolved["benchmark"] == "cartpole"
        curve = (seed_dir / "curve.csv").read_text(encoding="utf-8").splitlines()
        assert curve[0] == "epoch,reward"
        assert [line.split(",")[0] for line in curve[1:]] == ["10", "20"]

    summary = yaml.safe_load((out / "summary.yaml").read_text(encoding="utf-8"))
    assert summary["seeds"] == 2
    assert summary["policy_update_interval"] == 4
    assert set(summary["final"]) == set(SUMMARY_FIELDS)
    recomputed = summary_from_logs(out, 2)
    for name in SUMMARY_FIELDS:
        assert recomputed[name]["mean"] == pytest.approx(summary["final"][name]["mean"], abs=1e-12)
        assert recomputed[name]["std"] == pytest.approx(summary["final"][name]["std"], abs=1e-12)

    checkpoint = out / "seed_0" / "checkpoint.pt"
    result = runner.invoke(app, ["eval", "--checkpoint", str(checkpoint), "--episodes", "2", "--benchmark", "cartpole"])
    assert result.exit_code == 0, result.output
    result = runner.invoke(app, ["eval", "--checkpoint", str(checkpoint), "--benchmark", "opf"])
    assert result.exit_code == 3

    first, episodes = run_eval(checkpoint, episodes=2, seed=5)
    second, _ = run_eval(checkpoint, episodes=2, seed=5)
    assert len(episodes) == 2
    assert first.model_dump(exclude={"wall_seconds"}) == second.model_dump(exclude={"wall_seconds"})
    assert first.reward >= 1.0


# ============================================================================
# ABLATIONS
# ============================================================================

def test_ablation_rejects_baselines_and_unknown_names(tmp_path):
    baseline = build_run_config("cartpole", algorithm="ddpg-l", out=tmp_path)
    with pytest.raises(ConfigError):
        run_ablation("k-sweep", baseline)
    with pytest.raises(ConfigError):
        run_ablation("k-swoop", build_run_config("cartpole", out=tmp_path))


def test_gradient_ablation_writes_comparison(tmp_path, one_thread):
    run = build_run_config("cartpole", epochs=10, out=tmp_path, train=QUICK_TRAIN)
    rows = run_ablation("partial-vs-complete-gradient", run, progress=False)
    assert [row["arm"] for row in rows] == ["complete", "partial"]
    for arm in ("complete", "partial"):
        assert (tmp_path / arm / "summary.yaml").is_file()

    with open(tmp_path / "comparison.csv", "r", encoding="utf-8", newline="") as f:
        table = list(csv.DictReader(f))
    assert [row["arm"] for row in table] == ["complete", "partial"]
    assert set(table[0]) == {"arm", *SUMMARY_FIELDS}
    for row, written in zip(rows, table):
        assert float(written["reward"]) == row["reward"]

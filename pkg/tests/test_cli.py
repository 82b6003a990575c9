import csv
import io
import math

import numpy as np
import pytest

from discrl.checkpoint import from_trainer, save_checkpoint
from discrl.cli import main
from discrl.config import TrainConfig, parse_text
from discrl.runs import (METRIC_COLUMNS, MetricsWriter, RunManifest, improvement_factor, moving_average,
                         parse_seeds, read_metrics, read_summary, run_train, summarize, write_metrics)
from discrl.trainer import Trainer

TINY = dict(horizon=64, steps_per_epoch=2, epochs=1, env_action_dim=2, env_episode_cap=20, eval_episodes=1,
            replay_length=3, total_iterations=3)
TINY_TEXT = "".join(f"{k}={v}\n" for k, v in TINY.items())


def tiny_config(mode="disc"):
    return parse_text(TINY_TEXT, mode)


# -- metrics CSV ------------------------------------------------------------------

def test_all_zero_row():
    buf = io.StringIO()
    w = MetricsWriter(buf)
    write_metrics(w, [0] * len(METRIC_COLUMNS))
    header, row = buf.getvalue().splitlines()
    assert header.split(",") == list(METRIC_COLUMNS)
    assert row == ",".join(["0"] * len(METRIC_COLUMNS))
    with pytest.raises(ValueError, match="expected"):
        w.write([0, 0])


def test_column_order_is_a_contract():
    assert METRIC_COLUMNS == ("iteration", "env_steps", "eval_return", "mean_rho_dev", "mean_rho_dev_dim",
                              "frac_clipped", "batches_selected", "alpha_is", "j_is", "policy_loss",
                              "value_loss", "lr")


def test_ten_significant_digits():
    buf = io.StringIO()
    w = MetricsWriter(buf, ("a", "b", "c"))
    w.write([math.pi, 1e-20, 7])
    assert buf.getvalue().splitlines()[1] == "3.141592654,1e-20,7"


def test_thousand_rows_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = [[i, 64 * i, *rng.normal(size=4) * 10.0 ** rng.integers(-6, 6, size=4), i % 7, *rng.random(5)]
            for i in range(1000)]
    path = tmp_path / "m.csv"
    with open(path, "w", newline="") as fh:
        w = MetricsWriter(fh)
        for r in rows:
            w.write(r)
    with open(path, newline="") as fh:
        parsed = list(csv.reader(fh))
    assert len(parsed) == 1001 and all(len(r) == len(METRIC_COLUMNS) for r in parsed)
    back = read_metrics(path)
    for j, c in enumerate(METRIC_COLUMNS):
        np.testing.assert_allclose(back[c], [r[j] for r in rows], rtol=1e-9)


def test_read_metrics_rejects_wrong_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="columns"):
        read_metrics(p)


# -- helpers -----------------------------------------------------------------------

def test_parse_seeds():
    assert parse_seeds("0, 1,2") == (0, 1, 2)
    for bad in ("", " , ", "1,1", "-1", "a"):
        with pytest.raises(ValueError):
            parse_seeds(bad)


def test_moving_average_is_trailing():
    x = np.arange(1.0, 13.0)
    ma = moving_average(x, 10)
    assert ma[0] == 1.0 and ma[1] == 1.5 and ma[9] == 5.5 and ma[11] == np.mean(x[2:12])


def test_improvement_factor_direction():
    assert improvement_factor(-100.0, -25.0) == 4.0
    assert improvement_factor(10.0, 30.0) == 3.0
    assert improvement_factor(-100.0, -200.0) == 0.5
    assert math.isnan(improvement_factor(-1.0, 1.0))


def test_manifest_round_trip():
    m = RunManifest(tiny_config("ppo_amber"), (4, 1, 9))
    back = RunManifest.from_text(m.to_text())
    assert back == m and back.run_id == m.run_id and len(m.run_id) == 12
    assert RunManifest(tiny_config("ppo"), (4, 1, 9)).run_id != m.run_id
    with pytest.raises(ValueError):
        RunManifest.from_text("seeds=1\n")


# -- run directories -------------------------------------------------------------------

@pytest.fixture(scope="module")
def five_seed_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run5")
    run_train(tiny_config(), [0, 1, 2, 3, 4], out)
    return out


def test_five_seeds_three_iterations(five_seed_run):
    out = five_seed_run
    for s in range(5):
        lines = (out / f"seed_{s}" / "metrics.csv").read_text().splitlines()
        assert len(lines) == 4 and lines[0] == ",".join(METRIC_COLUMNS)
        assert (out / f"seed_{s}" / "final.ckpt").exists()
    summary_lines = (out / "summary.csv").read_text().splitlines()
    assert len(summary_lines) == 4
    assert {"manifest.txt", "seeds.csv", "summary.csv", "summary.txt"} <= {p.name for p in out.iterdir()}
    assert (out / "figures" / "return.png").stat().st_size > 0
    assert (out / "figures" / "diagnostics.png").stat().st_size > 0


def test_summary_statistics(five_seed_run):
    out = five_seed_run
    per_seed = [read_metrics(out / f"seed_{s}" / "metrics.csv") for s in range(5)]
    rets = np.stack([m["eval_return"] for m in per_seed])
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    np.testing.assert_allclose([float(r["eval_return_mean"]) for r in rows], rets.mean(axis=0), rtol=1e-9)
    np.testing.assert_allclose([float(r["eval_return_std"]) for r in rows], rets.std(axis=0), rtol=1e-9)
    ma = np.stack([moving_average(r) for r in rets])
    s = read_summary(out / "summary.txt")
    best = int(np.argmax(ma.mean(axis=0)))
    assert float(s["max_average_return"]) == pytest.approx(ma.mean(axis=0)[best], rel=1e-9)
    assert float(s["max_average_return_std"]) == pytest.approx(ma[:, best].std(), rel=1e-9, abs=1e-12)
    assert s["mode"] == "disc" and s["seeds"] == "0,1,2,3,4" and s["iterations"] == "3"
    with open(out / "seeds.csv", newline="") as fh:
        inits = [float(r["initial_return"]) for r in csv.DictReader(fh)]
    assert float(s["initial_return"]) == pytest.approx(np.mean(inits), rel=1e-9)


def test_cli_rerun_from_manifest_is_byte_identical(five_seed_run, tmp_path):
    out = tmp_path / "again"
    assert main(["train", "--manifest", str(five_seed_run / "manifest.txt"), "--seeds", "0,3",
                 "--out", str(out), "--no-figures"]) == 0
    for s in (0, 3):
        assert (out / f"seed_{s}" / "metrics.csv").read_bytes() == \
               (five_seed_run / f"seed_{s}" / "metrics.csv").read_bytes()


def test_summarize_requires_runs(tmp_path):
    with pytest.raises(FileNotFoundError):
        summarize(tmp_path)
    assert main(["summarize", "--dir", str(tmp_path)]) == 1


# -- command line ----------------------------------------------------------------------

def test_cli_train_and_summarize(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY_TEXT + "total_iterations=2\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--seeds", "5", "--out", str(out), "--mode", "ppo",
                 "--no-figures"]) == 0
    manifest = RunManifest.from_text((out / "manifest.txt").read_text())
    assert manifest.config.mode == "ppo" and manifest.config.clip_eps == 0.2 and manifest.seeds == (5,)
    assert len((out / "seed_5" / "metrics.csv").read_text().splitlines()) == 3
    capsys.readouterr()
    assert main(["summarize", "--dir", str(out), "--no-figures"]) == 0
    assert "max_average_return=" in capsys.readouterr().out


def test_cli_set_overrides(tmp_path):
    out = tmp_path / "run"
    args = ["train", "--seeds", "0", "--out", str(out), "--mode", "ppo_amber", "--no-figures"]
    args += sum((["--set", f"{k}={v}"] for k, v in TINY.items()), []) + ["--set", "total_iterations=1"]
    assert main(args) == 0
    cfg = RunManifest.from_text((out / "manifest.txt").read_text()).config
    assert cfg.mode == "ppo_amber" and cfg.horizon == 64 and cfg.total_iterations == 1


@pytest.mark.parametrize("argv", [
    ["train", "--seeds", "", "--out", "x"],
    ["train", "--out", "x"],
    ["train", "--seeds", "1,1", "--out", "x"],
    ["train", "--seeds", "0", "--out", "x", "--mode", "trpo"],
    ["eval", "--ckpt", "x", "--episodes", "0"],
])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_run_train_rejects_empty_seeds(tmp_path):
    with pytest.raises(ValueError):
        run_train(tiny_config(), [], tmp_path)


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("gamma=1.5\n")
    assert main(["train", "--config", str(cfg), "--seeds", "0", "--out", str(tmp_path / "o")]) == 1
    assert "gamma" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_eval_output_is_repeatable_and_matches_trainer(tmp_path, capsys):
    cfg = TrainConfig(env_action_dim=4, eval_episodes=3, seed=7)
    t = Trainer(cfg)
    path = tmp_path / "fresh.ckpt"
    save_checkpoint(path, from_trainer(t))
    outs = []
    for _ in range(2):
        assert main(["eval", "--ckpt", str(path)]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    lines = outs[0].splitlines()
    assert lines[0].startswith("mean_return=") and len(lines) == 4
    mean, returns = t.evaluate()
    assert lines[0] == f"mean_return={format(mean, '.10g')}"  # exact agreement is checked below
    for k, r in enumerate(returns):
        assert lines[k + 1] == f"episode {k} return={format(r, '.10g')}"


def test_eval_exact_cross_path(tmp_path):
    from discrl.checkpoint import load_checkpoint
    from discrl.trainer import deterministic_eval
    t = Trainer(TrainConfig(env_action_dim=4, eval_episodes=5, seed=2))
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, from_trainer(t))
    ck = load_checkpoint(path)
    a, _ = deterministic_eval(ck.config.env_spec(), ck.policy, ck.obs_filter, 5, ck.config.seed)
    b, _ = t.evaluate()
    assert abs(a - b) <= 1e-12


def test_eval_bad_checkpoint(tmp_path, capsys):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"garbage")
    assert main(["eval", "--ckpt", str(p)]) == 1
    assert "bad header" in capsys.readouterr().err


import json

import pytest

from lipgail.cli import ExperimentConfig, main, thread_limit
from lipgail.gail import ConfigError

TINY = {"train": {"steps_per_iter": 256, "minibatch_size": 64, "total_env_steps": 512,
                  "ppo_epochs": 2, "disc_updates_per_iter": 2, "disc_batch_size": 128},
        "eval": {"episodes": 4}, "paths": {"n_demos": 3}, "seed": 1}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture
def trained(tmp_path, config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    return out


def test_gen_demos(tmp_path):
    out = tmp_path / "d.jsonl"
    assert main(["gen-demos", "--env", "SpringPendulum", "--n", "3", "--seed", "2", "--out", str(out)]) == 0
    recs = [json.loads(x) for x in out.read_text().splitlines()]
    assert len(recs) == 3 and recs[0]["seed"] == 2 and recs[0]["version_tag"] == "lipgail-0.1"
    assert "config_hash" in recs[0]


def test_gen_demos_argument_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["gen-demos", "--out", str(tmp_path / "d.jsonl")])
    assert e.value.code == 2 and "usage" in capsys.readouterr().err
    assert main(["gen-demos", "--env", "DoubleIntegrator1D", "--n", "0", "--out", str(tmp_path / "d")]) == 2


def test_gen_demos_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen-demos", "--env", "DoubleIntegrator1D", "--n", "1", "--out", str(blocker / "x.jsonl")]) == 3


def test_train_writes_artifacts_and_is_reproducible(tmp_path, config, trained):
    for name in ("metrics.csv", "checkpoint.json", "config.json", "experiment.json", "summary.json", "demos.jsonl"):
        assert (trained / name).exists(), name
    summary = json.loads((trained / "summary.json").read_text())
    assert {"config_hash", "seed", "version_tag"} <= set(summary) and summary["seed"] == 1
    again = tmp_path / "again"
    assert main(["train", "--config", str(config), "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
    assert (again / "checkpoint.json").read_bytes() == (trained / "checkpoint.json").read_bytes()


def test_seed_override_changes_run(tmp_path, config, trained):
    out = tmp_path / "s2"
    assert main(["train", "--config", str(config), "--seed", "2", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["seed"] == 2
    assert (out / "metrics.csv").read_bytes() != (trained / "metrics.csv").read_bytes()


def test_malformed_config_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"seed": 1,\n  "train": {"lr": }\n}')
    assert main(["train", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "column" in err


@pytest.mark.parametrize("doc", [{"trian": {}}, {"train": {"lr_rate": 1}}, {"eval": {"episodes": 0}},
                                 {"train": {"env": "Nope"}}, {"train": {"env_params": {"mass2": 1}}},
                                 {"eval": {"ellc_radii": [0.1, 0.0]}}])
def test_invalid_configs_exit_2(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_is_io_error(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.json")]) == 3


def test_evaluate_reproduces_training_time_eval(tmp_path, trained):
    out = tmp_path / "noise.csv"
    assert main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"), "--noise-levels", "0",
                 "--episodes", "4", "--seed", "1", "--out", str(out)]) == 0
    from lipgail.evaluation import read_report_csv
    meta, rows = read_report_csv(out)
    summary = json.loads((trained / "summary.json").read_text())
    assert rows[0]["mean_return"] == pytest.approx(summary["final_eval_return"], rel=1e-12)
    assert meta["version_tag"] == "lipgail-0.1" and meta["seed"] == "1"


def test_evaluate_output_is_byte_stable(tmp_path, trained):
    outs = [tmp_path / f"{i}.csv" for i in range(2)]
    for o in outs:
        assert main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"), "--noise-levels", "0,0.2",
                     "--episodes", "3", "--out", str(o)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_evaluate_argument_errors(tmp_path, trained):
    ck = str(trained / "checkpoint.json")
    assert main(["evaluate", "--checkpoint", ck, "--noise-levels", "a,b"]) == 2
    assert main(["evaluate", "--checkpoint", ck, "--noise-levels", "-0.1"]) == 2
    assert main(["evaluate", "--checkpoint", str(tmp_path / "missing.json")]) == 3


def test_ellc_command(tmp_path, trained, capsys):
    ck = str(trained / "checkpoint.json")
    assert main(["ellc", "--checkpoint", ck, "--radii", "0.1,0.2"]) == 0
    out = capsys.readouterr().out
    assert "# samples=3840" in out and "radius,ellc" in out
    assert main(["ellc", "--checkpoint", ck, "--radii", "0.1,0"]) == 2
    assert main(["ellc", "--checkpoint", ck, "--radii", "-1"]) == 2


def test_verify_theory(capsys):
    assert main(["verify-theory", "--mdp", "linear_1d"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pass"] is True and doc["bound"] == pytest.approx(1 / 0.19)
    assert {"mdp", "L", "C", "gamma", "bound", "max_grad", "probes"} <= set(doc)


def test_nan_abort_exit_code(tmp_path, config, monkeypatch):
    import numpy as np
    from lipgail import gail
    monkeypatch.setattr(gail, "surrogate_reward", lambda *a, **k: np.full(256, np.nan))
    assert main(["train", "--config", str(config), "--out", str(tmp_path / "nan")]) == 4
    assert (tmp_path / "nan" / "checkpoint_last_good.json").exists()


def test_thread_env_var(monkeypatch, config, tmp_path):
    assert thread_limit({}) == 1 and thread_limit({"LIPGAIL_THREADS": "3"}) == 3
    with pytest.raises(ConfigError):
        thread_limit({"LIPGAIL_THREADS": "0"})
    monkeypatch.setenv("LIPGAIL_THREADS", "many")
    assert main(["verify-theory"]) == 2


def test_experiment_config_roundtrip():
    cfg = ExperimentConfig.from_dict(TINY)
    assert ExperimentConfig.from_dict(cfg.to_dict()).config_hash() == cfg.config_hash()
    assert cfg.train.seed == 1
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seed": 1, "train": {"seed": 2}})

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lipgail import GAILImitator
from lipgail.envs import DoubleIntegrator1D, gen_demos
from lipgail.gail import ConfigError

SMALL = {"steps_per_iter": 256, "minibatch_size": 64, "ppo_epochs": 2}


def test_params_and_clone():
    est = GAILImitator(mode="reg_gen", reg_weight=0.05, radius=0.2)
    p = est.get_params()
    assert p["mode"] == "reg_gen" and p["radius"] == 0.2
    c = clone(est).set_params(seed=3)
    assert c.seed == 3 and est.seed == 0
    cfg = est.to_config()
    assert cfg.perturbation.radius == 0.2 and cfg.reg_gen_active


def test_extra_cannot_shadow_parameters():
    with pytest.raises(ConfigError):
        GAILImitator(extra={"seed": 4}).to_config()
    with pytest.raises(ConfigError):
        GAILImitator(extra={"not_a_field": 1}).to_config()


def test_fit_predict_score(tmp_path):
    path = tmp_path / "demos.jsonl"
    gen_demos(DoubleIntegrator1D(), 3, 0, path)
    est = GAILImitator(total_env_steps=512, disc_updates_per_iter=2, disc_batch_size=64, extra=SMALL)
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 2)))
    est.fit(path)
    assert len(est.metrics_) == 2 and est.n_features_in_ == 2
    assert est.predict(np.zeros((4, 2))).shape == (4, 1)
    with pytest.raises(ValueError):
        est.predict(np.zeros((4, 3)))
    assert np.isfinite(est.score(episodes=2))
    assert est.ellc(0.1) >= 0
    assert len(est.noise_sweep([0.0, 0.1], episodes=2).rows) == 2


def test_fit_rejects_non_trajectories():
    with pytest.raises(ValueError):
        GAILImitator().fit([np.zeros((3, 2))])

"""Scikit-learn style wrapper: ``fit`` on demonstrations, ``predict`` mean actions."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .envs import Trajectory, load_demos, make_env
from .evaluation import ellc, eval_noise
from .gail import ConfigError, TrainConfig, train
from .perturb import PerturbationSpec


class GAILImitator(BaseEstimator):
    """Imitation policy trained with (optionally Lipschitz-regularized) GAIL.

    Hyperparameters mirror :class:`~lipgail.gail.TrainConfig`; anything not
    exposed here goes through ``extra`` as a dict of TrainConfig fields.

    Attributes after ``fit``: ``agent_``, ``metrics_``, ``n_features_in_``.
    """

    def __init__(self, env="DoubleIntegrator1D", mode="natural", reg_weight=0.0,
                 radius=0.05, norm="l2", pga_steps=10, noise_level=0.0, noise_kind="linf",
                 total_env_steps=300_000, disc_updates_per_iter=20, disc_batch_size=512,
                 log_std_init=-0.7, seed=0, extra=None):
        self.env = env
        self.mode = mode
        self.reg_weight = reg_weight
        self.radius = radius
        self.norm = norm
        self.pga_steps = pga_steps
        self.noise_level = noise_level
        self.noise_kind = noise_kind
        self.total_env_steps = total_env_steps
        self.disc_updates_per_iter = disc_updates_per_iter
        self.disc_batch_size = disc_batch_size
        self.log_std_init = log_std_init
        self.seed = seed
        self.extra = extra

    def to_config(self) -> TrainConfig:
        doc = dict(env=self.env, mode=self.mode, reg_weight=self.reg_weight,
                   perturbation=PerturbationSpec(self.norm, self.radius, self.pga_steps),
                   noise_level=self.noise_level, noise_kind=self.noise_kind,
                   total_env_steps=self.total_env_steps,
                   disc_updates_per_iter=self.disc_updates_per_iter,
                   disc_batch_size=self.disc_batch_size, log_std_init=self.log_std_init,
                   seed=self.seed)
        clash = sorted(set(self.extra or {}) & set(doc))
        if clash:
            raise ConfigError(f"extra repeats constructor parameters: {clash}")
        doc.update(self.extra or {})
        return TrainConfig.from_dict(doc)

    def fit(self, X, y=None):
        """``X``: list of :class:`Trajectory` or a path to a demo JSON-lines file."""
        demos = load_demos(X) if isinstance(X, (str, bytes)) or hasattr(X, "__fspath__") else list(X)
        if not demos or not all(isinstance(t, Trajectory) for t in demos):
            raise ValueError("X must be a nonempty list of Trajectory objects or a demo file path")
        res = train(self.to_config(), demos)
        self.agent_ = res.agent
        self.metrics_ = res.metrics
        self.n_features_in_ = res.agent.policy.state_dim
        return self

    def predict(self, X):
        """Mean (deterministic) actions for raw states ``X`` of shape (n, state_dim)."""
        check_is_fitted(self, "agent_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.agent_.act(X)

    def score(self, X=None, y=None, episodes=20, seed=0):
        """Mean noiseless return of the mean-action policy (``X``/``y`` ignored)."""
        check_is_fitted(self, "agent_")
        return eval_noise(self.agent_, [0.0], episodes, seed).rows[0]["mean_return"]

    def noise_sweep(self, levels, episodes=20, seed=0, kind="gaussian"):
        check_is_fitted(self, "agent_")
        return eval_noise(self.agent_, levels, episodes, seed, kind)

    def ellc(self, radius, seed=0):
        check_is_fitted(self, "agent_")
        return ellc(self.agent_, radius, seed, make_env(self.env, **self.to_config().env_params))

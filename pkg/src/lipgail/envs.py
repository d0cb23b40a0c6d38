"""Deterministic toy continuous-control environments, scripted experts and demos.

All environments are batched: states are (n, state_dim) arrays and ``step``
is a pure function of ``(states, actions)``. Every episode lasts exactly
``horizon`` steps (no early termination).

Rewards are a Gaussian bump around the goal,
``r(s) = exp(-(|pos|^2 + vel_weight * |vel|^2) / (2 * width^2))``, which keeps
per-step reward in (0, 1] and is globally Lipschitz with constant
``exp(-1/2) / width`` whenever ``vel_weight <= 1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NonFiniteStateError(ValueError):
    """Raised when a state fed to ``step`` contains NaN or Inf."""


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"  # "gaussian" (per-dim std) or "linf" (uniform in the L-inf ball)
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "linf"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.level < 0:
            raise ValueError("noise level must be non-negative")


def noisy_obs(s, noise: NoiseSpec, rng, scale=None):
    """Corrupt raw observations; ``scale`` (per-dim) converts normalized units to raw ones.

    A zero level returns ``s`` untouched and draws nothing from ``rng``.
    """
    s = np.asarray(s, dtype=np.float64)
    if noise.level == 0.0:
        return s
    if noise.kind == "gaussian":
        eps = noise.level * rng.standard_normal(s.shape)
    else:
        eps = rng.uniform(-noise.level, noise.level, size=s.shape)
    if scale is not None:
        eps = eps * scale
    return s + eps


def _spectral_norm(J):
    return float(np.linalg.svd(J, compute_uv=False)[0])


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    env_rewards: np.ndarray | None = None
    env_return: float | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if len(self.states) != len(self.actions):
            raise ValueError("states and actions must align (terminal state not stored)")
        if self.env_rewards is not None:
            self.env_rewards = np.asarray(self.env_rewards, dtype=np.float64)
            if self.env_return is None:
                self.env_return = float(self.env_rewards.sum())

    def __len__(self):
        return len(self.actions)


@dataclass
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int = 128
    action_low: tuple = ()
    action_high: tuple = ()
    init_low: tuple = ()
    init_high: tuple = ()
    dt: float = 0.1
    mass: float = 1.0
    damping: float = 0.0
    width: float = 0.25
    vel_weight: float = 0.1
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = dict(self.__dict__)
        for k in ("action_low", "action_high", "init_low", "init_high"):
            d[k] = list(d[k])
        return d


class Env:
    """Shared machinery: bounded actions, Gaussian-bump reward, batched rollouts."""

    spec: EnvSpec
    n_pos: int

    @property
    def state_dim(self):
        return self.spec.state_dim

    @property
    def action_dim(self):
        return self.spec.action_dim

    @property
    def horizon(self):
        return self.spec.horizon

    def reset(self, rng, n=None):
        lo, hi = np.array(self.spec.init_low), np.array(self.spec.init_high)
        size = (self.state_dim,) if n is None else (n, self.state_dim)
        return rng.uniform(lo, hi, size=size)

    def clip_action(self, a):
        return np.clip(a, self.spec.action_low, self.spec.action_high)

    def _cost(self, s):
        pos, vel = s[..., :self.n_pos], s[..., self.n_pos:]
        return ((pos * pos).sum(-1) + self.spec.vel_weight * (vel * vel).sum(-1)) / (2 * self.spec.width ** 2)

    def reward(self, s):
        return np.exp(-self._cost(np.asarray(s, dtype=np.float64)))

    @property
    def reward_lipschitz(self):
        if self.spec.vel_weight > 1:
            raise ValueError("declared reward constant assumes vel_weight <= 1")
        return float(np.exp(-0.5) / self.spec.width)

    def step(self, s, a):
        """Returns ``(next_state, reward, done)``; reward is r(s) of the pre-step state."""
        s = np.asarray(s, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise NonFiniteStateError(f"{self.spec.name}: non-finite state")
        a = self.clip_action(np.asarray(a, dtype=np.float64))
        return self.dynamics(s, a), self.reward(s), False

    def dynamics(self, s, a):
        raise NotImplementedError

    def expert(self, s):
        raise NotImplementedError

    def rollout(self, act_fn, s0, obs_fn=None):
        """Run ``horizon`` steps from a batch of starts.

        ``act_fn`` maps an (n, state_dim) observation batch to actions;
        ``obs_fn`` (optional) maps true states to what the agent observes.
        Returns true states (n, T, ds), raw actions (n, T, da), rewards (n, T).
        """
        s = np.atleast_2d(np.asarray(s0, dtype=np.float64))
        n, T = s.shape[0], self.horizon
        S = np.empty((n, T, self.state_dim))
        A = np.empty((n, T, self.action_dim))
        R = np.empty((n, T))
        for t in range(T):
            S[:, t] = s
            a = act_fn(s if obs_fn is None else obs_fn(s))
            A[:, t] = a
            s, R[:, t], _ = self.step(s, a)
        return S, A, R


class _PointMass(Env):
    """Semi-implicit Euler point mass per axis: v' = v + dt (a/m - d v); x' = x + dt v'."""

    kp = 4.0
    kd = 3.0

    def dynamics(self, s, a):
        sp = self.spec
        k = self.n_pos
        x, v = s[..., :k], s[..., k:]
        v2 = v + sp.dt * (a / sp.mass - sp.damping * v)
        x2 = x + sp.dt * v2
        return np.concatenate([x2, v2], axis=-1)

    def axis_jacobian(self):
        sp = self.spec
        keep = 1.0 - sp.damping * sp.dt
        return np.array([[1.0, sp.dt * keep], [0.0, keep]])

    @property
    def dynamics_lipschitz(self):
        # block-diagonal per axis, so the axis block's spectral norm is exact
        return _spectral_norm(self.axis_jacobian())

    def expert(self, s):
        """Saturated PD controller toward the origin, damping-compensated."""
        s = np.asarray(s, dtype=np.float64)
        k, sp = self.n_pos, self.spec
        x, v = s[..., :k], s[..., k:]
        u = sp.mass * (-self.kp * x - self.kd * v + sp.damping * v)
        return self.clip_action(u)


class DoubleIntegrator1D(_PointMass):
    n_pos = 1

    def __init__(self, horizon=128, dt=0.1, mass=1.0, damping=0.0, width=0.1, vel_weight=0.1,
                 kp=10.0, kd=5.0):
        self.kp, self.kd = kp, kd
        self.spec = EnvSpec("DoubleIntegrator1D", 2, 1, horizon, (-1.0,), (1.0,),
                            (-1.0, -0.1), (1.0, 0.1), dt, mass, damping, width, vel_weight)


class PointReach2D(_PointMass):
    n_pos = 2

    def __init__(self, horizon=128, dt=0.1, mass=1.0, damping=0.5, width=0.25, vel_weight=0.1):
        self.spec = EnvSpec("PointReach2D", 4, 2, horizon, (-1.0, -1.0), (1.0, 1.0),
                            (-1.0, -1.0, -0.1, -0.1), (1.0, 1.0, 0.1, 0.1),
                            dt, mass, damping, width, vel_weight)


class SpringPendulum(Env):
    """Pendulum with an extra torsion spring, semi-implicit Euler.

    w' = w + dt (-k th - g sin(th) - c w + a);  th' = th + dt w'.
    The Jacobian is affine in cos(th), so its spectral norm peaks at cos = +/-1.
    """

    n_pos = 1
    kp = 6.0
    kd = 2.5

    def __init__(self, horizon=128, dt=0.05, spring=1.0, gravity=4.0, damping=0.1,
                 width=0.3, vel_weight=0.1):
        self.spec = EnvSpec("SpringPendulum", 2, 1, horizon, (-2.0,), (2.0,),
                            (-1.2, -0.2), (1.2, 0.2), dt, 1.0, damping, width, vel_weight,
                            {"spring": spring, "gravity": gravity})

    def _stiffness(self, cos_th):
        return self.spec.extra["spring"] + self.spec.extra["gravity"] * cos_th

    def dynamics(self, s, a):
        sp, ex = self.spec, self.spec.extra
        th, w = s[..., :1], s[..., 1:]
        w2 = w + sp.dt * (-ex["spring"] * th - ex["gravity"] * np.sin(th) - sp.damping * w + a)
        th2 = th + sp.dt * w2
        return np.concatenate([th2, w2], axis=-1)

    def jacobian(self, cos_th):
        sp = self.spec
        dw_dth = -sp.dt * self._stiffness(cos_th)
        dw_dw = 1.0 - sp.damping * sp.dt
        return np.array([[1.0 + sp.dt * dw_dth, sp.dt * dw_dw], [dw_dth, dw_dw]])

    @property
    def dynamics_lipschitz(self):
        return max(_spectral_norm(self.jacobian(c)) for c in (-1.0, 1.0))

    def expert(self, s):
        s = np.asarray(s, dtype=np.float64)
        th, w = s[..., :1], s[..., 1:]
        ex = self.spec.extra
        u = ex["spring"] * th + ex["gravity"] * np.sin(th) - self.kp * th - self.kd * w
        return self.clip_action(u)


ENVS = {"DoubleIntegrator1D": DoubleIntegrator1D, "PointReach2D": PointReach2D,
        "SpringPendulum": SpringPendulum}


def make_env(name, **params):
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None
    return cls(**params)


def scripted_expert(env: Env, s):
    return env.expert(s)


def expert_returns(env: Env, rng, n):
    _, _, R = env.rollout(env.expert, env.reset(rng, n))
    return R.sum(axis=1)


def gen_demos(env: Env, n_traj, seed, path=None, meta=None):
    """Roll the scripted expert; one JSON object per line, deterministic in ``seed``.

    ``meta`` (optional) is merged into every written record, e.g. provenance keys.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    rng = np.random.default_rng(seed)
    S, A, R = env.rollout(env.expert, env.reset(rng, n_traj))
    extra = dict(meta or {})
    lines = [json.dumps({"states": S[i].tolist(), "actions": A[i].tolist(),
                         "env_return": float(R[i].sum()), **extra}) for i in range(n_traj)]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return [Trajectory(S[i], A[i], R[i]) for i in range(n_traj)]


def load_demos(path):
    trajs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                trajs.append(Trajectory(doc["states"], doc["actions"], env_return=doc["env_return"]))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed demo record ({exc})") from exc
    if not trajs:
        raise ValueError(f"{path}: no demonstrations")
    return trajs

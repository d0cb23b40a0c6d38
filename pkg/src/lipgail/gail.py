"""GAIL training with optional local-Lipschitz regularizers and noisy baselines.

One iteration collects ``steps_per_iter`` environment steps with the current
policy, takes ``disc_updates_per_iter`` Adam steps on the discriminator, scores
the rollouts with the surrogate reward ``-log D(s, a)`` and runs minibatched
clipped-PPO epochs on the policy and value networks.

Modes:

``natural``     plain GAIL
``noisy_disc``  random observation noise on discriminator inputs while training
``noisy_gen``   random observation noise on the policy's inputs while training
``reg_disc``    discriminator loss + reg_weight * R_d (adversarial |D| variation)
``reg_gen``     generator loss + reg_weight * R_g (adversarial Jeffreys divergence)
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ParamStore, adam_step, clip_grad_norm
from .envs import NoiseSpec, load_demos, make_env, noisy_obs
from .nets import HALF_LOG_2PI, DiscriminatorNet, ObsNormalizer, PolicyNet, ValueNet
from .perturb import PerturbationSpec, reg_disc, reg_gen, pga_gen

log = logging.getLogger(__name__)

VERSION_TAG = "lipgail-0.1"
MODES = ("natural", "noisy_disc", "noisy_gen", "reg_disc", "reg_gen")
METRIC_COLUMNS = ["iter", "env_steps", "disc_bce", "disc_reg", "gen_ppo_loss", "gen_reg",
                  "entropy", "rollout_env_return_mean"]


class ConfigError(ValueError):
    """Invalid or unknown configuration values."""


class TrainingDiverged(RuntimeError):
    """A loss or gradient became non-finite."""

    def __init__(self, msg, checkpoint=None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    env: str = "DoubleIntegrator1D"
    env_params: dict = field(default_factory=dict)
    mode: str = "natural"
    discount: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    ppo_epochs: int = 10
    ppo_clip: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5  # 0 disables clipping
    steps_per_iter: int = 2048
    minibatch_size: int = 256
    total_env_steps: int = 300_000
    disc_updates_per_iter: int = 1
    disc_batch_size: int = 0  # 0: every rollout pair plus as many demo pairs
    reg_weight: float = 0.0
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    noise_kind: str = "linf"
    noise_level: float = 0.0
    reg_gen_per_epoch: bool = True
    reward_form: str = "neg_log_d"
    log_std_init: float = 0.0
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.perturbation, dict):
            try:
                self.perturbation = PerturbationSpec(**self.perturbation)
            except TypeError as exc:
                raise ConfigError(f"perturbation: {exc}") from exc
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("discount must lie in (0, 1)")
        if self.reg_weight < 0:
            raise ConfigError("reg_weight must be >= 0")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if self.noise_kind not in ("gaussian", "linf"):
            raise ConfigError(f"noise_kind must be 'gaussian' or 'linf', got {self.noise_kind!r}")
        if self.reward_form not in ("neg_log_d", "log_one_minus_d"):
            raise ConfigError(f"unknown reward_form {self.reward_form!r}")
        for name in ("ppo_epochs", "steps_per_iter", "minibatch_size", "total_env_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.disc_updates_per_iter < 0 or self.disc_batch_size < 0:
            raise ConfigError("disc_updates_per_iter and disc_batch_size must be >= 0")

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["perturbation"] = self.perturbation.to_dict()
        return d

    def config_hash(self):
        return config_hash(self.to_dict())

    @property
    def reg_disc_active(self):
        return self.mode == "reg_disc" and self.reg_weight > 0 and not self.perturbation.trivial

    @property
    def reg_gen_active(self):
        return self.mode == "reg_gen" and self.reg_weight > 0 and not self.perturbation.trivial

    @property
    def noise(self):
        return NoiseSpec(self.noise_kind, self.noise_level)


def config_hash(doc):
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RolloutBatch:
    raw_states: np.ndarray      # (N, ds) true states
    states: np.ndarray          # (N, ds) normalized policy inputs (noisy in noisy_gen mode)
    actions: np.ndarray         # (N, da) sampled, unclipped
    old_log_probs: np.ndarray
    values: np.ndarray
    surrogate_rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    env_return_mean: float = 0.0


@dataclass
class Agent:
    """Everything a trained run produces; serializable as one checkpoint document."""

    config: TrainConfig
    policy: PolicyNet
    value: ValueNet
    disc: DiscriminatorNet
    normalizer: ObsNormalizer
    iteration: int = 0

    @classmethod
    def initialize(cls, cfg: TrainConfig, env, rng):
        policy = PolicyNet(env.state_dim, env.action_dim, rng=rng, log_std_init=cfg.log_std_init)
        value = ValueNet(env.state_dim, rng=rng)
        disc = DiscriminatorNet(env.state_dim, env.action_dim, rng=rng)
        return cls(cfg, policy, value, disc, ObsNormalizer())

    def act(self, raw_states, deterministic=True, rng=None):
        obs = self.normalizer.transform(np.atleast_2d(raw_states))
        mean = self.policy.mean_np(obs)
        if deterministic:
            return mean
        return mean + np.exp(self.policy.log_std_np()) * rng.standard_normal(mean.shape)

    def to_dict(self):
        return {
            "version_tag": VERSION_TAG,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "iteration": self.iteration,
            "dims": {"state": self.policy.state_dim, "action": self.policy.action_dim},
            "policy": self.policy.params.to_dict(),
            "value": self.value.params.to_dict(),
            "disc": self.disc.params.to_dict(),
            "normalizer": self.normalizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        cfg = TrainConfig.from_dict(doc["config"])
        ds, da = doc["dims"]["state"], doc["dims"]["action"]
        return cls(
            cfg,
            PolicyNet.from_params(ParamStore.from_dict(doc["policy"]), ds, da),
            ValueNet.from_params(ParamStore.from_dict(doc["value"]), ds),
            DiscriminatorNet.from_params(ParamStore.from_dict(doc["disc"]), ds, da),
            ObsNormalizer.from_dict(doc["normalizer"]),
            doc.get("iteration", 0),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# reward and advantage --------------------------------------------------------

def surrogate_reward(disc: DiscriminatorNet, s_norm, a, form="neg_log_d"):
    """-log D(s, a) with D clamped to [1e-8, 1 - 1e-8]; ``log_one_minus_d`` gives log(1 - D)."""
    d = np.clip(disc.prob_np(s_norm, a), 1e-8, 1.0 - 1e-8)
    if form == "neg_log_d":
        return -np.log(d)
    return np.log1p(-d)


def gae(rewards, values, bootstrap_value, gamma, lam):
    """Generalized advantage estimation along the last axis.

    ``bootstrap_value`` is V of the state after the final step (0 for a true terminal).
    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(f"rewards {rewards.shape} and values {values.shape} must align")
    T = rewards.shape[-1]
    adv = np.zeros_like(rewards)
    next_v = np.asarray(bootstrap_value, dtype=np.float64)
    running = np.zeros_like(next_v)
    for t in range(T - 1, -1, -1):
        delta = rewards[..., t] + gamma * next_v - values[..., t]
        running = delta + gamma * lam * running
        adv[..., t] = running
        next_v = values[..., t]
    return adv, adv + values


# losses ------------------------------------------------------------------

def disc_loss(disc: DiscriminatorNet, gen_s, gen_a, demo_s, demo_a, cfg: TrainConfig, rng=None):
    """Negated regularized GAIL discriminator objective.

    Returns ``(total, bce, reg)`` tensors; ``reg`` is a zero constant when inactive.
    """
    z_gen = disc.logits(gen_s, gen_a)
    z_demo = disc.logits(demo_s, demo_a)
    # -[log D | gen] - [log(1 - D) | demo], via softplus for stability
    bce = ad.softplus(-z_gen).mean() + ad.softplus(z_demo).mean()
    if not cfg.reg_disc_active:
        return bce, bce, ad.Tensor(0.0)
    reg, _ = reg_disc(disc, np.concatenate([gen_s, demo_s]), np.concatenate([gen_a, demo_a]),
                      cfg.perturbation, rng)
    return bce + reg * cfg.reg_weight, bce, reg


def disc_update(disc, adam: AdamState, gen_s, gen_a, demo_s, demo_a, cfg: TrainConfig, rng=None):
    """One Adam step on the discriminator; returns ``{"bce", "reg"}``."""
    if len(gen_s) == 0 or len(demo_s) == 0:
        raise ValueError("discriminator update needs nonempty generator and demo batches")
    if cfg.mode == "noisy_disc":
        gen_s = noisy_obs(gen_s, cfg.noise, rng)
        demo_s = noisy_obs(demo_s, cfg.noise, rng)
    total, bce, reg = disc_loss(disc, gen_s, gen_a, demo_s, demo_a, cfg, rng)
    if not np.isfinite(total.data):
        raise TrainingDiverged(f"non-finite discriminator loss {total.data}")
    disc.params.zero_grads()
    ad.backward(total)
    adam_step(disc.params, adam)
    return {"bce": float(bce.data), "reg": float(reg.data)}


def ppo_loss(policy, value, states, actions, old_log_probs, advantages, returns, cfg: TrainConfig,
             deltas=None):
    """Clipped-surrogate PPO + value MSE - entropy bonus + reg_weight * R_g.

    Returns ``(total, parts)`` where ``parts`` maps component name to tensor.
    """
    dist = policy.dist(states)
    ratio = ad.exp(dist.log_prob(actions) - old_log_probs)
    clipped = ad.clamp(ratio, 1.0 - cfg.ppo_clip, 1.0 + cfg.ppo_clip)
    surrogate = -ad.minimum(ratio * advantages, clipped * advantages).mean()
    ent = dist.entropy().mean()
    vf = ad.square(value(states) - returns).mean()
    total = surrogate + vf * cfg.value_coef
    if cfg.entropy_coef:
        total = total - ent * cfg.entropy_coef
    parts = {"ppo": surrogate, "value": vf, "entropy": ent, "reg": ad.Tensor(0.0)}
    if cfg.reg_gen_active:
        reg, _ = reg_gen(policy, states, cfg.perturbation, deltas=deltas)
        parts["reg"] = reg
        total = total + reg * cfg.reg_weight
    return total, parts


def gen_update(policy, value, pi_adam, v_adam, batch: RolloutBatch, cfg: TrainConfig, rng, pga_rng=None):
    """``ppo_epochs`` passes of minibatched PPO; returns mean ``{ppo, entropy, reg, value}``.

    ``rng`` shuffles minibatches; ``pga_rng`` only feeds random PGA starts.
    """
    n = len(batch.states)
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    sums = {"ppo": 0.0, "entropy": 0.0, "reg": 0.0, "value": 0.0}
    count = 0
    deltas = None
    if cfg.reg_gen_active and not cfg.reg_gen_per_epoch:
        deltas, _ = pga_gen(policy, batch.states, cfg.perturbation, pga_rng)
    for _ in range(cfg.ppo_epochs):
        if cfg.reg_gen_active and cfg.reg_gen_per_epoch:
            deltas, _ = pga_gen(policy, batch.states, cfg.perturbation, pga_rng)
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            total, parts = ppo_loss(
                policy, value, batch.states[idx], batch.actions[idx], batch.old_log_probs[idx],
                adv[idx], batch.returns[idx], cfg, None if deltas is None else deltas[idx])
            if not np.isfinite(total.data):
                raise TrainingDiverged(f"non-finite generator loss {total.data}")
            policy.params.zero_grads()
            value.params.zero_grads()
            ad.backward(total)
            if cfg.max_grad_norm:
                clip_grad_norm(policy.params, cfg.max_grad_norm)
                clip_grad_norm(value.params, cfg.max_grad_norm)
            adam_step(policy.params, pi_adam)
            adam_step(value.params, v_adam)
            for k in sums:
                sums[k] += float(parts[k].data)
            count += 1
    return {k: v / count for k, v in sums.items()}


# rollouts ----------------------------------------------------------------

def collect_rollouts(env, agent: Agent, n_envs, rng, cfg: TrainConfig, noise_rng=None):
    """Sample ``n_envs`` full-horizon episodes with the stochastic policy."""
    policy, norm = agent.policy, agent.normalizer
    T, ds, da = env.horizon, env.state_dim, env.action_dim
    std = np.exp(policy.log_std_np())
    log_norm = policy.log_std_np().sum() + da * HALF_LOG_2PI
    raw = np.empty((n_envs, T, ds))
    obs = np.empty((n_envs, T, ds))
    acts = np.empty((n_envs, T, da))
    logp = np.empty((n_envs, T))
    vals = np.empty((n_envs, T))
    env_r = np.empty((n_envs, T))
    s = env.reset(rng, n_envs)
    for t in range(T):
        o = norm.transform(s)
        if cfg.mode == "noisy_gen":
            o = noisy_obs(o, cfg.noise, noise_rng)
        z = rng.standard_normal((n_envs, da))
        a = policy.mean_np(o) + std * z
        raw[:, t], obs[:, t], acts[:, t] = s, o, a
        logp[:, t] = -0.5 * (z * z).sum(-1) - log_norm
        vals[:, t] = agent.value.predict_np(o)
        s, env_r[:, t], _ = env.step(s, a)
    o_last = norm.transform(s)
    if cfg.mode == "noisy_gen":
        o_last = noisy_obs(o_last, cfg.noise, noise_rng)
    bootstrap = agent.value.predict_np(o_last)
    return raw, obs, acts, logp, vals, env_r, bootstrap


def _demo_arrays(demos):
    S = np.concatenate([d.states for d in demos])
    A = np.concatenate([d.actions for d in demos])
    return S, A


@dataclass
class TrainResult:
    agent: Agent
    metrics: list
    metrics_csv: str
    final_return_mean: float


def metrics_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r[c] if c in ("iter", "env_steps") else repr(float(r[c])) for c in METRIC_COLUMNS])
    return buf.getvalue()


def train(cfg: TrainConfig, demos, out_dir=None, progress=None):
    """Run GAIL in the configured mode; deterministic given ``cfg.seed``.

    ``demos`` is a path to a JSON-lines demo file or a list of :class:`Trajectory`.
    With ``out_dir`` set, writes ``metrics.csv``, ``checkpoint.json`` and
    ``config.json`` there (plus periodic checkpoints when ``checkpoint_every > 0``).
    """
    if not isinstance(demos, (list, tuple)):
        demos = load_demos(demos)
    env = make_env(cfg.env, **cfg.env_params)
    if cfg.steps_per_iter % env.horizon:
        raise ConfigError(f"steps_per_iter must be a multiple of the horizon ({env.horizon})")
    demo_S, demo_A = _demo_arrays(demos)
    if demo_S.shape[1] != env.state_dim or demo_A.shape[1] != env.action_dim:
        raise ConfigError("demo dimensions do not match the environment")
    n_envs = cfg.steps_per_iter // env.horizon
    n_iters = max(1, cfg.total_env_steps // cfg.steps_per_iter)

    init_rng, roll_rng, disc_rng, ppo_rng, noise_rng, pga_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6))
    agent = Agent.initialize(cfg, env, init_rng)
    agent.normalizer.fit(demo_S)
    demo_Sn = agent.normalizer.transform(demo_S)
    lo, hi = env.spec.action_low, env.spec.action_high

    pi_adam, v_adam, d_adam = AdamState(cfg.lr), AdamState(cfg.lr), AdamState(cfg.lr)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(
            {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed,
             "version_tag": VERSION_TAG}, indent=2, sort_keys=True))
    last_good = agent.to_dict()
    rows = []
    for it in range(n_iters):
        try:
            raw, obs, acts, logp, vals, env_r, boot = collect_rollouts(
                env, agent, n_envs, roll_rng, cfg, noise_rng)
            gen_s = agent.normalizer.transform(raw.reshape(-1, env.state_dim))
            gen_a = np.clip(acts.reshape(-1, env.action_dim), lo, hi)
            d_stats = {"bce": 0.0, "reg": 0.0}
            for _ in range(cfg.disc_updates_per_iter):
                g_idx = (np.arange(len(gen_s)) if not cfg.disc_batch_size
                         else disc_rng.choice(len(gen_s), cfg.disc_batch_size, replace=False))
                e_idx = disc_rng.choice(len(demo_Sn), len(g_idx), replace=len(g_idx) > len(demo_Sn))
                d_stats = disc_update(agent.disc, d_adam, gen_s[g_idx], gen_a[g_idx],
                                      demo_Sn[e_idx], demo_A[e_idx], cfg,
                                      noise_rng if cfg.mode == "noisy_disc" else pga_rng)
            rew = surrogate_reward(agent.disc, gen_s, gen_a, cfg.reward_form).reshape(n_envs, -1)
            adv, ret = gae(rew, vals, boot, cfg.discount, cfg.gae_lambda)
            batch = RolloutBatch(raw.reshape(-1, env.state_dim), obs.reshape(-1, env.state_dim),
                                 acts.reshape(-1, env.action_dim), logp.ravel(), vals.ravel(),
                                 rew.ravel(), adv.ravel(), ret.ravel(), float(env_r.sum(1).mean()))
            g_stats = gen_update(agent.policy, agent.value, pi_adam, v_adam, batch, cfg,
                                 ppo_rng, pga_rng)
        except TrainingDiverged as exc:
            if out is not None:
                (out / "checkpoint_last_good.json").write_text(json.dumps(last_good))
            exc.checkpoint = last_good
            raise
        agent.iteration = it + 1
        row = {"iter": it + 1, "env_steps": (it + 1) * cfg.steps_per_iter,
               "disc_bce": d_stats["bce"], "disc_reg": d_stats["reg"],
               "gen_ppo_loss": g_stats["ppo"], "gen_reg": g_stats["reg"],
               "entropy": g_stats["entropy"], "rollout_env_return_mean": batch.env_return_mean}
        rows.append(row)
        if progress is not None:
            progress(row)
        last_good = agent.to_dict()
        if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            (out / f"checkpoint_iter{it + 1:05d}.json").write_text(json.dumps(last_good))
    csv_text = metrics_to_csv(rows)
    if out is not None:
        (out / "metrics.csv").write_text(csv_text)
        agent.save(out / "checkpoint.json")
    return TrainResult(agent, rows, csv_text, rows[-1]["rollout_env_return_mean"])

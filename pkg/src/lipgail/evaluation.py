"""Post-training evaluation: observation-noise sweeps and empirical local Lipschitzness."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .divergence import jeffreys
from .envs import NoiseSpec, make_env, noisy_obs
from .gail import Agent
from .nets import DiagGaussian
from .perturb import PerturbationSpec, pga_gen, sample_on_sphere

ELLC_TRAJECTORIES = 30
ELLC_HORIZON = 128
DEFAULT_NOISE_LEVELS = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5)

NOISE_COLUMNS = ["noise_level", "episodes", "mean_return", "std_return"]
ELLC_COLUMNS = ["radius", "ellc"]


@dataclass
class NoiseEvalReport:
    rows: list
    metadata: dict = field(default_factory=dict)

    columns = NOISE_COLUMNS


@dataclass
class EllcReport:
    rows: list
    metadata: dict = field(default_factory=dict)

    columns = ELLC_COLUMNS


def _env_for(agent: Agent, env=None):
    env = env if env is not None else make_env(agent.config.env, **agent.config.env_params)
    if env.state_dim != agent.policy.state_dim or env.action_dim != agent.policy.action_dim:
        raise ValueError(f"checkpoint dims ({agent.policy.state_dim}, {agent.policy.action_dim}) "
                         f"do not match env {env.spec.name}")
    return env


def _metadata(agent, env, **extra):
    return {"checkpoint": agent.config.config_hash(), "config_hash": agent.config.config_hash(),
            "env": env.spec.name, "seed": agent.config.seed, "units": "normalized observation",
            **extra}


def eval_noise(agent: Agent, noise_levels=DEFAULT_NOISE_LEVELS, episodes=20, seed=0,
               kind="gaussian", env=None):
    """Mean-action returns when the policy observes corrupted states.

    Noise levels are in normalized-observation units: the per-dimension draw is
    scaled by the normalizer's std before being added to the raw state. Every
    level reuses the same initial states (common random numbers).
    """
    levels = sorted(float(x) for x in noise_levels)
    if not levels:
        raise ValueError("noise_levels must be nonempty")
    if levels[0] < 0:
        raise ValueError("noise levels must be >= 0")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = _env_for(agent, env)
    starts = env.reset(np.random.default_rng(seed), episodes)
    scale = agent.normalizer.scale_
    rows = []
    for i, level in enumerate(levels):
        noise = NoiseSpec(kind, level)
        rng = np.random.default_rng([seed, i])
        _, _, R = env.rollout(agent.act, starts, obs_fn=lambda s: noisy_obs(s, noise, rng, scale))
        ret = R.sum(axis=1)
        rows.append({"noise_level": level, "episodes": episodes,
                     "mean_return": float(ret.mean()), "std_return": float(ret.std())})
    return NoiseEvalReport(rows, _metadata(agent, env, noise_kind=kind, episodes=episodes))


def ellc_states(agent: Agent, seed=0, env=None, trajectories=ELLC_TRAJECTORIES):
    """Normalized states from noiseless stochastic-policy rollouts (trajectories x horizon)."""
    env = _env_for(agent, env)
    rng = np.random.default_rng(seed)
    starts = env.reset(rng, trajectories)
    S, _, _ = env.rollout(lambda s: agent.act(s, deterministic=False, rng=rng), starts)
    return agent.normalizer.transform(S.reshape(-1, env.state_dim))


def ellc_from_states(policy, s_norm, radius, rng, norm="l2", adversarial=False, steps=10):
    """Mean of D_J(pi(s) || pi(s + delta)) / r over the given states, one delta per state."""
    if radius <= 0:
        raise ValueError("ELLC radius must be > 0")
    spec = PerturbationSpec(norm=norm, radius=radius, steps=steps)
    if adversarial:
        deltas, _ = pga_gen(policy, s_norm, spec)
    else:
        deltas = sample_on_sphere(rng, s_norm.shape, spec)
    ref = DiagGaussian(policy.mean_np(s_norm), policy.log_std_np())
    pert = DiagGaussian(policy.mean_np(s_norm + deltas), policy.log_std_np())
    return float(jeffreys(ref, pert).data.mean() / radius)


def ellc(agent: Agent, radius, seed=0, env=None, norm="l2", adversarial=False):
    """Empirical local Lipschitzness constant at ``radius`` over 30 x 128 on-policy states."""
    if radius <= 0:
        raise ValueError("ELLC radius must be > 0")
    states = ellc_states(agent, seed, env)
    return ellc_from_states(agent.policy, states, radius, np.random.default_rng([seed, 1]), norm, adversarial)


def ellc_report(agent: Agent, radii, seed=0, env=None, norm="l2", adversarial=False):
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("radii must be nonempty")
    if any(r <= 0 for r in radii):
        raise ValueError("ELLC radii must be > 0")
    env = _env_for(agent, env)
    states = ellc_states(agent, seed, env)
    rows = []
    for i, r in enumerate(sorted(radii)):
        val = ellc_from_states(agent.policy, states, r, np.random.default_rng([seed, 1, i]), norm, adversarial)
        rows.append({"radius": r, "ellc": val})
    meta = _metadata(agent, env, trajectories=ELLC_TRAJECTORIES, horizon=env.horizon,
                     samples=len(states), norm=norm,
                     delta_sampling="adversarial-pga" if adversarial else "uniform-sphere")
    return EllcReport(rows, meta)


def report_to_csv(report):
    if not report.rows:
        raise ValueError("refusing to emit an empty report")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for k, v in report.metadata.items():
        buf.write(f"# {k}={v}\n")
    w.writerow(report.columns)
    for r in report.rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in report.columns])
    return buf.getvalue()


def emit_reports(reports, out_dir, names=None):
    """Write one CSV per report; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, rep in enumerate(reports):
        name = names[i] if names else f"{type(rep).__name__.lower()}_{i}.csv"
        p = out / name
        p.write_text(report_to_csv(rep))
        paths.append(p)
    return paths


def read_report_csv(path):
    """Parse an emitted CSV back into ``(metadata, rows)``."""
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        else:
            lines.append(line)
    reader = csv.DictReader(lines)
    rows = []
    for r in reader:
        rows.append({k: (int(v) if k == "episodes" else float(v)) for k, v in r.items()})
    return meta, rows

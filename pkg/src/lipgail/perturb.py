"""Adversarial observation perturbations and the local-Lipschitz regularizers.

The inner maximizations run batched projected gradient ascent (PGA) on
normalized observations: every row of ``delta`` is an independent problem,
so one backward pass of the summed objective yields all per-row gradients.
Actions are never perturbed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .divergence import jeffreys
from .nets import DiagGaussian, DiscriminatorNet, PolicyNet

log = logging.getLogger(__name__)

NORMS = ("l2", "linf")
INITS = ("zero", "random")


@dataclass(frozen=True)
class PerturbationSpec:
    norm: str = "l2"
    radius: float = 0.05
    steps: int = 10
    step_size: float | None = None
    init: str = "zero"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @property
    def alpha(self):
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.radius / max(self.steps, 1)

    @property
    def trivial(self):
        """True when PGA can only return the zero perturbation."""
        return self.radius == 0.0 or (self.steps == 0 and self.init == "zero")

    def to_dict(self):
        return {"norm": self.norm, "radius": self.radius, "steps": self.steps,
                "step_size": self.step_size, "init": self.init}


def norm_of(delta, norm):
    delta = np.atleast_2d(delta)
    if norm == "l2":
        return np.sqrt((delta * delta).sum(axis=-1))
    return np.abs(delta).max(axis=-1)


def project(delta, spec: PerturbationSpec):
    """Project each row of ``delta`` onto the ``spec`` ball (idempotent)."""
    delta = np.asarray(delta, dtype=np.float64)
    r = spec.radius
    if spec.norm == "linf":
        return np.clip(delta, -r, r)
    n = np.sqrt((delta * delta).sum(axis=-1, keepdims=True))
    scale = np.where(n > r, r / np.where(n > 0, n, 1.0), 1.0)
    return delta * scale


def sample_in_ball(rng, shape, spec: PerturbationSpec):
    """Uniform samples inside the ball (rows are independent)."""
    n, d = shape
    if spec.norm == "linf":
        return rng.uniform(-spec.radius, spec.radius, size=shape)
    z = rng.standard_normal(shape)
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    return z * (spec.radius * rng.uniform(size=(n, 1)) ** (1.0 / d))


def sample_on_sphere(rng, shape, spec: PerturbationSpec):
    """Uniform samples on the ball surface ``||delta|| == radius``."""
    n, d = shape
    if spec.norm == "l2":
        z = rng.standard_normal(shape)
        return spec.radius * z / np.linalg.norm(z, axis=-1, keepdims=True)
    # L-inf surface: pick a face uniformly (faces have equal area), pin that coordinate
    out = rng.uniform(-spec.radius, spec.radius, size=shape)
    face = rng.integers(0, d, size=n)
    sign = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    out[np.arange(n), face] = sign * spec.radius
    return out


def _direction(g, norm):
    if norm == "linf":
        return np.sign(g)
    n = np.sqrt((g * g).sum(axis=-1, keepdims=True))
    return g / np.where(n > 0, n, 1.0)


def _eval(objective, delta):
    return objective(Tensor(delta)).data


def pga(objective, shape, spec: PerturbationSpec, rng=None, seed_direction=None):
    """Batched projected gradient ascent with best-iterate return.

    ``objective`` maps a (B, d) delta tensor to per-row objective values (B,).
    Rows whose gradient vanishes exactly (the symmetric start of |.| or of a
    divergence) step along ``seed_direction(delta)`` instead, trying both
    signs and keeping the better one. Returns ``(best_delta, best_value)``.
    """
    if spec.trivial:
        return np.zeros(shape), np.zeros(shape[0])
    if spec.init == "random":
        delta = sample_in_ball(rng, shape, spec)
    else:
        delta = np.zeros(shape)
    best_delta, best_val = delta.copy(), None
    alpha = spec.alpha
    for _ in range(spec.steps):
        d = Tensor(delta, requires_grad=True)
        val = objective(d)
        ad.backward(val.sum())
        g = d.grad if d.grad is not None else np.zeros(shape)
        f = val.data
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(f))):
            log.warning("non-finite PGA gradient; returning best iterate so far")
            break
        best_val, best_delta = _keep_best(best_val, best_delta, f, delta)
        step = alpha * _direction(g, spec.norm)
        stalled = ~np.any(g != 0.0, axis=-1)
        if seed_direction is not None and stalled.any():
            seed = _direction(seed_direction(delta), spec.norm)
            plus = project(delta + alpha * seed, spec)
            minus = project(delta - alpha * seed, spec)
            use_minus = _eval(objective, minus) > _eval(objective, plus)
            seed = np.where(use_minus[:, None], -seed, seed)
            step = np.where(stalled[:, None], alpha * seed, step)
        delta = project(delta + step, spec)
    f = _eval(objective, delta)
    if np.all(np.isfinite(f)):
        best_val, best_delta = _keep_best(best_val, best_delta, f, delta)
    if best_val is None:
        best_val = np.zeros(shape[0])
    return best_delta, best_val


def _keep_best(best_val, best_delta, f, delta):
    if best_val is None:
        return f.copy(), delta.copy()
    better = f > best_val
    return np.where(better, f, best_val), np.where(better[:, None], delta, best_delta)


# discriminator ------------------------------------------------------------

def disc_objective(disc: DiscriminatorNet, s_norm, a):
    s_norm, a = np.atleast_2d(s_norm), np.atleast_2d(a)
    base = disc.prob_np(s_norm, a)

    def objective(delta):
        return ad.tabs(disc.prob(delta + s_norm, a) - base)

    def seed(delta):
        d = Tensor(delta, requires_grad=True)
        ad.backward(disc.prob(d + s_norm, a).sum())
        return d.grad

    return objective, seed


def pga_disc(disc: DiscriminatorNet, s_norm, a, spec: PerturbationSpec, rng=None):
    """Perturbations maximizing |D(s + delta, a) - D(s, a)| per row."""
    s_norm = np.atleast_2d(s_norm)
    objective, seed = disc_objective(disc, s_norm, a)
    return pga(objective, s_norm.shape, spec, rng, seed)


def reg_disc(disc: DiscriminatorNet, s_norm, a, spec: PerturbationSpec, rng=None):
    """Mean |D(s + delta, a) - D(s, a)| with delta fixed; differentiable in disc params.

    Returns ``(value_tensor, deltas)``.
    """
    s_norm, a = np.atleast_2d(s_norm), np.atleast_2d(a)
    if s_norm.shape[0] == 0:
        raise ValueError("reg_disc needs a nonempty batch")
    if spec.trivial:
        return Tensor(0.0), np.zeros_like(s_norm)
    deltas, _ = pga_disc(disc, s_norm, a, spec, rng)
    value = ad.tabs(disc.prob(s_norm + deltas, a) - disc.prob(s_norm, a)).mean()
    return value, deltas


# generator ----------------------------------------------------------------

def reference_dist(policy: PolicyNet, s_norm):
    """Gradient-detached pi(.|s)."""
    return DiagGaussian(policy.mean_np(s_norm), policy.log_std_np())


def gen_objective(policy: PolicyNet, s_norm):
    s_norm = np.atleast_2d(s_norm)
    ref = reference_dist(policy, s_norm)
    inv_std = np.exp(-policy.log_std_np())

    def objective(delta):
        return jeffreys(ref, policy.dist(delta + s_norm))

    def seed(delta):
        # first-order sensitivity of the whitened mean; exact top direction for 1-D actions
        d = Tensor(delta, requires_grad=True)
        ad.backward((policy.dist(d + s_norm).mean * inv_std).sum())
        return d.grad

    return objective, seed


def pga_gen(policy: PolicyNet, s_norm, spec: PerturbationSpec, rng=None):
    """Perturbations maximizing D_J(pi(.|s) || pi(.|s + delta)) per row."""
    s_norm = np.atleast_2d(s_norm)
    objective, seed = gen_objective(policy, s_norm)
    return pga(objective, s_norm.shape, spec, rng, seed)


def reg_gen(policy: PolicyNet, s_norm, spec: PerturbationSpec, rng=None, deltas=None):
    """Mean Jeffreys divergence between the detached reference and the perturbed policy.

    Pass precomputed ``deltas`` to reuse a PGA result (e.g. once per epoch).
    Returns ``(value_tensor, deltas)``.
    """
    s_norm = np.atleast_2d(s_norm)
    if s_norm.shape[0] == 0:
        raise ValueError("reg_gen needs a nonempty set of states")
    if spec.trivial:
        return Tensor(0.0), np.zeros_like(s_norm)
    if deltas is None:
        deltas, _ = pga_gen(policy, s_norm, spec, rng)
    ref = reference_dist(policy, s_norm)
    value = jeffreys(ref, policy.dist(s_norm + deltas)).mean()
    return value, deltas

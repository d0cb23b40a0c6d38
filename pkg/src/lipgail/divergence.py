"""Closed-form KL and Jeffreys divergences between diagonal Gaussians.

Both functions accept :class:`~lipgail.nets.DiagGaussian` batches and return
one value per row as a differentiable :class:`~lipgail.autodiff.Tensor`.
"""
from __future__ import annotations

import enum

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError
from .nets import DiagGaussian


class DivergenceKind(enum.Enum):
    KL = "kl"
    JEFFREYS = "jeffreys"


def _check(p, q):
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ShapeError(f"dimension mismatch: {p.mean.shape} vs {q.mean.shape}")


def kl_diag_gauss(p: DiagGaussian, q: DiagGaussian):
    """KL(p || q), summed over action dimensions."""
    _check(p, q)
    var_ratio = ad.exp((p.log_std - q.log_std) * 2.0)
    diff = (p.mean - q.mean) * ad.exp(-q.log_std)
    per_dim = (q.log_std - p.log_std) + (var_ratio + ad.square(diff)) * 0.5 - 0.5
    return per_dim.sum(axis=-1)


def jeffreys(p: DiagGaussian, q: DiagGaussian):
    """KL(p || q) + KL(q || p); the log-std terms cancel exactly."""
    _check(p, q)
    dlog = (p.log_std - q.log_std) * 2.0
    sq = ad.square(p.mean - q.mean)
    inv_vp = ad.exp(p.log_std * -2.0)
    inv_vq = ad.exp(q.log_std * -2.0)
    per_dim = (ad.exp(dlog) + ad.exp(-dlog)) * 0.5 + sq * (inv_vp + inv_vq) * 0.5 - 1.0
    return per_dim.sum(axis=-1)


def divergence(p, q, kind=DivergenceKind.JEFFREYS):
    if kind is DivergenceKind.KL:
        return kl_diag_gauss(p, q)
    return jeffreys(p, q)


def gaussian(mean, std):
    """Convenience constructor from plain arrays of means and standard deviations."""
    mean = np.atleast_2d(np.asarray(mean, dtype=np.float64))
    return DiagGaussian(mean, np.log(np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape)))

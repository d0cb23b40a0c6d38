"""Independent reference computations used by the tests (no lipgail internals)."""
from __future__ import annotations

import numpy as np
from scipy import integrate, sparse, stats


def fd_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` at array ``x`` (copied, same shape)."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    """Norm-wise relative error ``max|a - b| / max(max|b|, 1e-8)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-8))


def kl_quadrature(mp, sp, mq, sq):
    """Per-dimension KL(N(mp, sp^2) || N(mq, sq^2)) by adaptive quadrature, summed."""
    total = 0.0
    for a, b, c, d in zip(np.ravel(mp), np.ravel(sp), np.ravel(mq), np.ravel(sq)):
        p, q = stats.norm(a, b), stats.norm(c, d)
        lo, hi = a - 12 * b, a + 12 * b
        val, _ = integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), lo, hi,
                                epsabs=1e-12, epsrel=1e-10, limit=200)
        total += val
    return total


def kl_monte_carlo(mp, sp, mq, sq, n, rng):
    """Returns (estimate, standard error) of KL(p || q) for diagonal Gaussians."""
    x = mp + sp * rng.standard_normal((n, np.size(mp)))
    log_ratio = (stats.norm.logpdf(x, mp, sp) - stats.norm.logpdf(x, mq, sq)).sum(axis=1)
    return float(log_ratio.mean()), float(log_ratio.std(ddof=1) / np.sqrt(n))


def _interp_matrix(xs, vs, pts):
    """Bilinear weights of ``pts`` on the (xs, vs) grid, clamped to the grid box."""
    def locate(ax, x):
        x = np.clip(x, ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
        return i, (x - ax[i]) / (ax[i + 1] - ax[i])
    i, fx = locate(xs, pts[:, 0])
    j, fv = locate(vs, pts[:, 1])
    n, nv = len(pts), len(vs)
    rows = np.repeat(np.arange(n), 4)
    cols = np.stack([i * nv + j, i * nv + j + 1, (i + 1) * nv + j, (i + 1) * nv + j + 1], 1).ravel()
    w = np.stack([(1 - fx) * (1 - fv), (1 - fx) * fv, fx * (1 - fv), fx * fv], 1).ravel()
    return sparse.csr_matrix((w, (rows, cols)), shape=(n, len(xs) * nv))


def finite_horizon_optimum(reward, dynamics, horizon, xs, vs, actions, starts):
    """Dense-grid dynamic programming for 2-D states and scalar actions.

    Returns ``(optimal value per start, greedy-policy act function)``.
    The value is an estimate from the interpolated grid; rolling the greedy
    policy gives an achievable return to cross-check it.
    """
    X, V = np.meshgrid(xs, vs, indexing="ij")
    S = np.stack([X.ravel(), V.ravel()], -1)
    r = reward(S)
    mats = [_interp_matrix(xs, vs, dynamics(S, np.full((len(S), 1), a))) for a in actions]
    values = [np.zeros(len(S))]
    for _ in range(horizon):
        values.append(r + np.max([m @ values[-1] for m in mats], axis=0))
    v0 = _interp_matrix(xs, vs, starts) @ values[-1]

    def act(s, t):
        nxt = [_interp_matrix(xs, vs, dynamics(s, np.full((len(s), 1), a))) @ values[horizon - 1 - t]
               for a in actions]
        return np.asarray(actions)[np.argmax(nxt, axis=0)][:, None]

    return np.asarray(v0), act


def sphere_mc(n, d, rng):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)

"""Numerical checks of the optimal-Q Lipschitz bound on small synthetic MDPs.

The optimal Q-function is obtained by value iteration on a tensor grid with
multilinear interpolation of off-grid next states; because next states do
not change between sweeps, interpolation is precomputed once as a sparse
matrix per action. Gradients of Q* are then taken by central differences and
compared with ``sqrt(N) * L / (1 - gamma * C)``.

Conventions: ``L`` bounds every partial derivative of the reward and ``C``
bounds the spectral norm of the state Jacobian of the dynamics.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse


@dataclass
class SyntheticMdp:
    name: str
    dynamics: Callable          # (n, N) states, (n, A) actions -> (n, N)
    reward: Callable            # (n, N) -> (n,)
    L: float
    C: float
    gamma: float
    actions: np.ndarray         # (n_actions, A)
    box_low: np.ndarray
    box_high: np.ndarray
    noise_std: float = 0.0      # std of additive uniform noise on next states
    noise_nodes: int = 21
    grid_points: int = 2001
    probe_margin: float = 0.1   # fraction of the box kept away from probes
    notes: str = ""

    def __post_init__(self):
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        self.box_low = np.atleast_1d(np.asarray(self.box_low, dtype=np.float64))
        self.box_high = np.atleast_1d(np.asarray(self.box_high, dtype=np.float64))

    @property
    def N(self):
        return self.box_low.size

    @property
    def bound_applicable(self):
        return self.gamma * self.C < 1.0

    @property
    def bound(self):
        if not self.bound_applicable:
            return float("inf")
        return float(np.sqrt(self.N) * self.L / (1.0 - self.gamma * self.C))

    def step(self, s, a):
        return self.dynamics(np.atleast_2d(s), np.atleast_2d(a))


@dataclass
class QTable:
    mdp: SyntheticMdp
    axes: list
    values: np.ndarray          # (n_grid, n_actions), C-order over axes
    residual: float
    iterations: int
    spacing: np.ndarray = field(default=None)

    def _weights(self, s):
        return interpolation_matrix(self.axes, np.atleast_2d(s))

    def q(self, s, a_index=None):
        """Interpolated Q*(s, .) -> (n, n_actions), or one column if ``a_index`` given."""
        out = self._weights(s) @ self.values
        return out if a_index is None else out[:, a_index]

    def v(self, s):
        return self.q(s).max(axis=1)

    def greedy(self, s):
        return self.q(s).argmax(axis=1)


def interpolation_matrix(axes, pts):
    """Sparse (n_pts, n_grid) multilinear interpolation weights; points are clamped to the box."""
    n, d = pts.shape
    shape = [len(ax) for ax in axes]
    lo_idx, frac = [], []
    for k, ax in enumerate(axes):
        x = np.clip(pts[:, k], ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
        lo_idx.append(i)
        frac.append((x - ax[i]) / (ax[i + 1] - ax[i]))
    rows, cols, vals = [], [], []
    strides = np.cumprod([1] + shape[::-1][:-1])[::-1]
    for corner in itertools.product((0, 1), repeat=d):
        w = np.ones(n)
        flat = np.zeros(n, dtype=np.int64)
        for k, c in enumerate(corner):
            w = w * (frac[k] if c else 1.0 - frac[k])
            flat += (lo_idx[k] + c) * strides[k]
        rows.append(np.arange(n))
        cols.append(flat)
        vals.append(w)
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, int(np.prod(shape))))


def _grid(mdp, grid_points):
    axes = [np.linspace(lo, hi, grid_points) for lo, hi in zip(mdp.box_low, mdp.box_high)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=-1)


def _noise_offsets(mdp):
    # midpoint quadrature of U[-sqrt(3) sd, sqrt(3) sd] per dimension
    if mdp.noise_std == 0.0:
        return np.zeros((1, mdp.N))
    half = np.sqrt(3.0) * mdp.noise_std
    k = mdp.noise_nodes
    nodes = -half + (np.arange(k) + 0.5) * (2 * half / k)
    return np.array(list(itertools.product(nodes, repeat=mdp.N)))


def value_iteration(mdp: SyntheticMdp, grid_points=None, tol=1e-8, max_iter=100_000):
    """Q* on a grid with Bellman residual below ``tol``: Q(s,a) = r(s) + gamma E[V(s')]."""
    grid_points = grid_points or mdp.grid_points
    axes, pts = _grid(mdp, grid_points)
    r = mdp.reward(pts)
    offsets = _noise_offsets(mdp)
    trans = []
    for a in mdp.actions:
        nxt = mdp.dynamics(pts, np.broadcast_to(a, (len(pts), a.size)))
        P = None
        for off in offsets:
            M = interpolation_matrix(axes, nxt + off)
            P = M if P is None else P + M
        trans.append((P / len(offsets)).tocsr())
    Q = np.zeros((len(pts), len(mdp.actions)))
    V = np.zeros(len(pts))
    for it in range(1, max_iter + 1):
        Q_new = np.stack([r + mdp.gamma * (P @ V) for P in trans], axis=1)
        residual = float(np.abs(Q_new - Q).max())
        Q = Q_new
        V = Q.max(axis=1)
        if residual < tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge: residual {residual:.3e}")
    spacing = (mdp.box_high - mdp.box_low) / (grid_points - 1)
    return QTable(mdp, axes, Q, residual, it, spacing)


def grad_q_fd(qtable: QTable, s, a_index, h):
    """Central-difference gradient of Q*(s, a) in each state dimension."""
    s = np.asarray(s, dtype=np.float64)
    mdp = qtable.mdp
    if np.any(s - h < mdp.box_low) or np.any(s + h > mdp.box_high):
        raise ValueError("probe point closer than h to the state box boundary")
    g = np.empty(mdp.N)
    for i in range(mdp.N):
        e = np.zeros(mdp.N)
        e[i] = h
        g[i] = (qtable.q(s + e, a_index)[0] - qtable.q(s - e, a_index)[0]) / (2 * h)
    return g


def probe_states(mdp: SyntheticMdp, n_probes, seed=0):
    lo = mdp.box_low + mdp.probe_margin * (mdp.box_high - mdp.box_low)
    hi = mdp.box_high - mdp.probe_margin * (mdp.box_high - mdp.box_low)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_probes, mdp.N))
    # the box centre is always probed; several shipped MDPs attain their constants there
    return np.vstack([(lo + hi) / 2, pts])


def check_bound(mdp: SyntheticMdp, n_probe_states=64, qtable=None, seed=0, h=None):
    """Max ||grad_s Q*(s, a)||_2 over probes and actions versus the closed-form bound."""
    report = {"mdp": mdp.name, "L": mdp.L, "C": mdp.C, "gamma": mdp.gamma, "N": mdp.N}
    if not mdp.bound_applicable:
        report.update(bound=None, max_grad=None, pass_=None, status="NOT-APPLICABLE",
                      probes=0)
        return report
    qtable = qtable or value_iteration(mdp)
    h = h if h is not None else 2.0 * float(qtable.spacing.max())
    probes = probe_states(mdp, n_probe_states, seed)
    max_grad = 0.0
    for s in probes:
        for a in range(len(mdp.actions)):
            max_grad = max(max_grad, float(np.linalg.norm(grad_q_fd(qtable, s, a, h))))
    bound = mdp.bound
    ok = max_grad <= bound * (1 + 1e-2)
    report.update(bound=bound, max_grad=max_grad, pass_=bool(ok),
                  status="PASS" if ok else "FAIL", probes=len(probes),
                  ratio=max_grad / bound, residual=qtable.residual)
    return report


def _jacobian_fd(mdp, s, a, h):
    J = np.empty((mdp.N, mdp.N))
    for i in range(mdp.N):
        e = np.zeros(mdp.N)
        e[i] = h
        J[:, i] = (mdp.step(s + e, a)[0] - mdp.step(s - e, a)[0]) / (2 * h)
    return J


def check_det_condition(mdp: SyntheticMdp, n_probes=64, qtable=None, seed=0, h=1e-6):
    """Largest finite-difference dynamics Jacobian norm along the greedy optimal actions."""
    probes = probe_states(mdp, n_probes, seed)
    if len(mdp.actions) == 1:
        acts = np.zeros(len(probes), dtype=int)
    else:
        qtable = qtable or value_iteration(mdp)
        acts = qtable.greedy(probes)
    worst = 0.0
    for s, ai in zip(probes, acts):
        J = _jacobian_fd(mdp, s, mdp.actions[ai], h)
        worst = max(worst, float(np.linalg.svd(J, compute_uv=False)[0]))
    return {"mdp": mdp.name, "max_dyn_grad": worst, "C": mdp.C,
            "pass_": bool(worst <= mdp.C + 1e-6), "probes": len(probes)}


def k_step_reward_gradients(mdp: SyntheticMdp, s, k_max, qtable=None, h=1e-5):
    """|d/ds r(s_{t+k})| for k = 0..k_max along the greedy optimal path (actions held fixed)."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if len(mdp.actions) == 1:
        policy = lambda x: np.zeros(len(x), dtype=int)  # noqa: E731
    else:
        qtable = qtable or value_iteration(mdp)
        policy = qtable.greedy
    path_actions, x = [], s.copy()
    for _ in range(k_max):
        ai = policy(x)[0]
        path_actions.append(mdp.actions[ai])
        x = mdp.step(x, mdp.actions[ai])
    out = []
    for k in range(k_max + 1):
        g = np.empty(mdp.N)
        for i in range(mdp.N):
            e = np.zeros(mdp.N)
            e[i] = h
            plus, minus = s + e, s - e
            for a in path_actions[:k]:
                plus, minus = mdp.step(plus, a), mdp.step(minus, a)
            g[i] = (mdp.reward(plus)[0] - mdp.reward(minus)[0]) / (2 * h)
        out.append(float(np.abs(g).max()))
    return np.array(out)


def empirical_lipschitz(fn, box_low, box_high, n_pairs=10_000, seed=0, per_coordinate=False):
    """Max ratio ||f(x) - f(y)|| / ||x - y|| over random pairs in the box.

    With ``per_coordinate`` the pairs differ in a single coordinate, which
    estimates the largest partial derivative instead of the full constant.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.atleast_1d(box_low), np.atleast_1d(box_high)
    x = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    if per_coordinate:
        y = x.copy()
        idx = rng.integers(0, lo.size, n_pairs)
        y[np.arange(n_pairs), idx] = rng.uniform(lo[idx], hi[idx])
    else:
        y = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    fx, fy = np.atleast_2d(fn(x)), np.atleast_2d(fn(y))
    if fx.shape[0] != n_pairs:
        fx, fy = fx.T, fy.T
    num = np.linalg.norm((fx - fy).reshape(n_pairs, -1), axis=1)
    den = np.linalg.norm(x - y, axis=1)
    keep = den > 1e-12
    return float((num[keep] / den[keep]).max())


# shipped MDPs ----------------------------------------------------------------

def _noop():
    return np.zeros((1, 1))


def linear_1d(C=0.9, gamma=0.9, noise_std=0.0, grid_points=2001):
    """s' = C s (action-free), r(s) = s on [-1, 1]; Q*(s) = s / (1 - gamma C)."""
    return SyntheticMdp(
        f"linear_1d_C{C}" + (f"_noise{noise_std}" if noise_std else ""),
        lambda s, a: C * s, lambda s: s[:, 0], L=1.0, C=C, gamma=gamma, actions=_noop(),
        box_low=[-1.0], box_high=[1.0], noise_std=noise_std, grid_points=grid_points,
        probe_margin=0.2 if noise_std else 0.1)


def linear_2d(C=0.9, gamma=0.9, grid_points=201):
    """Isotropic 2-D copy of :func:`linear_1d` with r(s) = s_1 + s_2."""
    return SyntheticMdp("linear_2d", lambda s, a: C * s, lambda s: s.sum(axis=1), L=1.0, C=C,
                        gamma=gamma, actions=np.zeros((1, 2)), box_low=[-1.0, -1.0],
                        box_high=[1.0, 1.0], grid_points=grid_points)


def contraction_1d(gamma=0.9, grid_points=2001):
    """Controlled s' = 0.5 s + 0.2 a, a in {-1, 0, 1}, Gaussian-bump reward (L = e^-0.5 / 0.25)."""
    w = 0.25
    return SyntheticMdp(
        "contraction_1d", lambda s, a: 0.5 * s + 0.2 * a,
        lambda s: np.exp(-s[:, 0] ** 2 / (2 * w * w)), L=float(np.exp(-0.5) / w), C=0.5,
        gamma=gamma, actions=np.array([[-1.0], [0.0], [1.0]]), box_low=[-2.0], box_high=[2.0],
        grid_points=grid_points)


def tanh_1d(gamma=0.9, grid_points=2001):
    """s' = tanh(s) on [-2, 2], r(s) = s; declared C = 1 (attained at s = 0)."""
    return SyntheticMdp("tanh_1d", lambda s, a: np.tanh(s), lambda s: s[:, 0], L=1.0, C=1.0,
                        gamma=gamma, actions=_noop(), box_low=[-2.0], box_high=[2.0],
                        grid_points=grid_points)


def piecewise_1d(gamma=0.9):
    """Slope 1.5 near the origin, 0.5 outside; gamma * C > 1 so the bound does not apply."""
    def dyn(s, a):
        return np.where(np.abs(s) < 0.5, 1.5 * s, np.sign(s) * (0.75 + 0.5 * (np.abs(s) - 0.5)))
    return SyntheticMdp("piecewise_1d", dyn, lambda s: s[:, 0], L=1.0, C=1.5, gamma=gamma,
                        actions=_noop(), box_low=[-1.0], box_high=[1.0])


SHIPPED = {
    "linear_1d": lambda: linear_1d(0.9),
    "linear_1d_c05": lambda: linear_1d(0.5),
    "linear_2d": linear_2d,
    "contraction_1d": contraction_1d,
    "tanh_1d": tanh_1d,
    "piecewise_1d": piecewise_1d,
    "linear_1d_noise0.01": lambda: linear_1d(0.9, noise_std=0.01),
    "linear_1d_noise0.05": lambda: linear_1d(0.9, noise_std=0.05),
}


def get_mdp(name):
    try:
        return SHIPPED[name]()
    except KeyError:
        raise ValueError(f"unknown MDP {name!r}; choose from {sorted(SHIPPED)}") from None


def verify(name, n_probes=64):
    """Bound and deterministic-condition checks as one JSON-ready report."""
    mdp = get_mdp(name)
    qtable = value_iteration(mdp) if mdp.bound_applicable or len(mdp.actions) > 1 else None
    rep = check_bound(mdp, n_probes, qtable)
    det = check_det_condition(mdp, n_probes, qtable)
    return {"mdp": mdp.name, "L": mdp.L, "C": mdp.C, "gamma": mdp.gamma,
            "bound": rep["bound"], "max_grad": rep["max_grad"], "pass": rep["pass_"],
            "status": rep["status"], "probes": rep["probes"],
            "max_dyn_grad": det["max_dyn_grad"], "det_condition_pass": det["pass_"]}

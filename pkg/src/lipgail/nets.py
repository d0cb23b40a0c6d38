"""Policy, value and discriminator networks plus observation normalization."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .autodiff import ParamStore, ShapeError, Tensor

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def orthogonal(rng, n_in, n_out, gain):
    if gain == 0.0:
        return np.zeros((n_in, n_out))
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class MLP:
    """Dense tanh network whose weights live in a shared :class:`ParamStore`."""

    def __init__(self, params, prefix, sizes, rng, hidden_gain=np.sqrt(2.0), out_gain=1.0):
        self.sizes = list(sizes)
        self.prefix = prefix
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            W = params.add(f"{prefix}/l{i}/W", orthogonal(rng, n_in, n_out, out_gain if last else hidden_gain))
            b = params.add(f"{prefix}/l{i}/b", np.zeros(n_out))
            self.layers.append((W, b))

    @classmethod
    def bind(cls, params, prefix, sizes):
        self = cls.__new__(cls)
        self.sizes, self.prefix = list(sizes), prefix
        self.layers = [(params[f"{prefix}/l{i}/W"], params[f"{prefix}/l{i}/b"]) for i in range(len(sizes) - 1)]
        return self

    def __call__(self, x):
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"{self.prefix}: expected input (batch, {self.sizes[0]}), got {x.shape}")
        for i, (W, b) in enumerate(self.layers):
            x = x @ W + b
            if i < len(self.layers) - 1:
                x = ad.tanh(x)
        return x

    def forward_np(self, x):
        x = np.asarray(x, dtype=np.float64)
        for i, (W, b) in enumerate(self.layers):
            x = x @ W.data + b.data
            if i < len(self.layers) - 1:
                x = np.tanh(x)
        return x


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64) if not isinstance(x, Tensor) else x
    data = x.data if isinstance(x, Tensor) else x
    if data.ndim == 1:
        x = ad.reshape(x, (1, -1)) if isinstance(x, Tensor) else x[None, :]
        data = data[None, :]
    if data.shape[-1] != dim:
        raise ShapeError(f"{what}: expected last dimension {dim}, got {data.shape}")
    return x


class DiagGaussian:
    """Batch of diagonal Gaussians; ``mean`` is (B, A), ``log_std`` broadcasts to it."""

    def __init__(self, mean, log_std):
        self.mean = ad.as_tensor(mean)
        self.log_std = ad.as_tensor(log_std)

    @property
    def std(self):
        return np.exp(self.log_std.data)

    def log_prob(self, actions):
        z = (ad.as_tensor(actions) - self.mean) * ad.exp(-self.log_std)
        per_dim = ad.square(z) * -0.5 - self.log_std - HALF_LOG_2PI
        return per_dim.sum(axis=-1)

    def entropy(self):
        """Per-row entropy; shape (B,)."""
        per_dim = self.log_std + (0.5 + HALF_LOG_2PI)
        ones = np.ones(self.mean.shape)
        return (per_dim * ones).sum(axis=-1)

    def sample(self, rng):
        return self.mean.data + self.std * rng.standard_normal(self.mean.shape)

    def detach(self):
        return DiagGaussian(self.mean.detach(), self.log_std.detach())


def entropy(d: DiagGaussian):
    return d.entropy()


class PolicyNet:
    """Gaussian policy: tanh trunk -> linear mean head, state-independent log-std."""

    def __init__(self, state_dim, action_dim, hidden=(64, 64, 64), rng=None,
                 head_gain=0.01, log_std_init=0.0, params=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.action_dim, self.hidden = state_dim, action_dim, tuple(hidden)
        self.params = ParamStore() if params is None else params
        self.net = MLP(self.params, "pi", [state_dim, *hidden, action_dim], rng, out_gain=head_gain)
        self.log_std = self.params.add("pi/log_std", np.full(action_dim, float(log_std_init)))

    @classmethod
    def from_params(cls, params, state_dim, action_dim, hidden=(64, 64, 64)):
        self = cls.__new__(cls)
        self.state_dim, self.action_dim, self.hidden = state_dim, action_dim, tuple(hidden)
        self.params = params
        self.net = MLP.bind(params, "pi", [state_dim, *hidden, action_dim])
        self.log_std = params["pi/log_std"]
        return self

    def dist(self, s_norm):
        s_norm = _as_batch(s_norm, self.state_dim, "policy")
        return DiagGaussian(self.net(s_norm), ad.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def mean_np(self, s_norm):
        return self.net.forward_np(_as_batch(s_norm, self.state_dim, "policy"))

    def log_std_np(self):
        return np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX)


def policy_dist(policy: PolicyNet, s_norm):
    return policy.dist(s_norm)


class ValueNet:
    def __init__(self, state_dim, hidden=(64, 64, 64), rng=None, params=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.hidden = state_dim, tuple(hidden)
        self.params = ParamStore() if params is None else params
        self.net = MLP(self.params, "v", [state_dim, *hidden, 1], rng, out_gain=1.0)

    @classmethod
    def from_params(cls, params, state_dim, hidden=(64, 64, 64)):
        self = cls.__new__(cls)
        self.state_dim, self.hidden = state_dim, tuple(hidden)
        self.params = params
        self.net = MLP.bind(params, "v", [state_dim, *hidden, 1])
        return self

    def __call__(self, s_norm):
        return ad.reshape(self.net(_as_batch(s_norm, self.state_dim, "value")), (-1,))

    def predict_np(self, s_norm):
        return self.net.forward_np(_as_batch(s_norm, self.state_dim, "value"))[:, 0]


class DiscriminatorNet:
    """D(s, a) in (0, 1): probability that the pair came from the generator."""

    def __init__(self, state_dim, action_dim, hidden=(100, 100), rng=None, head_gain=0.0, params=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.action_dim, self.hidden = state_dim, action_dim, tuple(hidden)
        self.params = ParamStore() if params is None else params
        self.net = MLP(self.params, "d", [state_dim + action_dim, *hidden, 1], rng, out_gain=head_gain)

    @classmethod
    def from_params(cls, params, state_dim, action_dim, hidden=(100, 100)):
        self = cls.__new__(cls)
        self.state_dim, self.action_dim, self.hidden = state_dim, action_dim, tuple(hidden)
        self.params = params
        self.net = MLP.bind(params, "d", [state_dim + action_dim, *hidden, 1])
        return self

    def logits(self, s_norm, a):
        s_norm = _as_batch(s_norm, self.state_dim, "discriminator state")
        a = _as_batch(a, self.action_dim, "discriminator action")
        return ad.reshape(self.net(ad.concat([s_norm, a], axis=-1)), (-1,))

    def prob(self, s_norm, a):
        return ad.sigmoid(self.logits(s_norm, a))

    def prob_np(self, s_norm, a):
        s_norm = _as_batch(s_norm, self.state_dim, "discriminator state")
        a = _as_batch(a, self.action_dim, "discriminator action")
        z = self.net.forward_np(np.concatenate([s_norm, a], axis=-1))[:, 0]
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def disc_prob(disc: DiscriminatorNet, s_norm, a):
    return disc.prob(s_norm, a)


class ObsNormalizer(TransformerMixin, BaseEstimator):
    """Running per-dimension standardization, clipped to ``[-clip, clip]``.

    ``partial_fit`` merges batch moments (Chan et al. parallel update);
    setting ``frozen=True`` turns it into a no-op.
    """

    def __init__(self, eps=1e-8, clip=10.0):
        self.eps = eps
        self.clip = clip

    def fit(self, X, y=None):
        for attr in ("mean_", "var_", "count_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if getattr(self, "frozen", False):
            return self
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        b_mean, b_var = X.mean(axis=0), X.var(axis=0)
        if not hasattr(self, "count_"):
            self.mean_, self.var_, self.count_ = b_mean, b_var, float(n)
            self.n_features_in_ = X.shape[1]
            return self
        tot = self.count_ + n
        delta = b_mean - self.mean_
        m2 = self.var_ * self.count_ + b_var * n + delta ** 2 * self.count_ * n / tot
        self.mean_ = self.mean_ + delta * n / tot
        self.var_ = m2 / tot
        self.count_ = tot
        return self

    @property
    def scale_(self):
        return np.sqrt(self.var_ + self.eps)

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        return np.clip((X - self.mean_) / self.scale_, -self.clip, self.clip)

    def to_dict(self):
        return {"mean": self.mean_.tolist(), "var": self.var_.tolist(), "count": self.count_,
                "eps": self.eps, "clip": self.clip}

    @classmethod
    def from_dict(cls, doc):
        self = cls(eps=doc["eps"], clip=doc["clip"])
        self.mean_ = np.array(doc["mean"], dtype=np.float64)
        self.var_ = np.array(doc["var"], dtype=np.float64)
        self.count_ = float(doc["count"])
        self.n_features_in_ = self.mean_.size
        return self

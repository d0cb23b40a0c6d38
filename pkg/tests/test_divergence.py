import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipgail import autodiff as ad
from lipgail.autodiff import ShapeError, Tensor
from lipgail.divergence import DivergenceKind, divergence, gaussian, jeffreys, kl_diag_gauss
from lipgail.nets import DiagGaussian
from oracles import fd_grad, kl_quadrature, rel_err


def test_unit_shift_values():
    p, q = gaussian([[0.0]], 1.0), gaussian([[1.0]], 1.0)
    assert abs(kl_diag_gauss(p, q).data[0] - 0.5) < 1e-9
    assert abs(jeffreys(p, q).data[0] - 1.0) < 1e-9


def test_matches_quadrature():
    rng = np.random.default_rng(11)
    for _ in range(20):
        d = rng.integers(1, 4)
        mp, mq = rng.normal(0, 1, d), rng.normal(0, 1, d)
        sp, sq = np.exp(rng.uniform(-1, 1, d)), np.exp(rng.uniform(-1, 1, d))
        p, q = gaussian(mp, sp), gaussian(mq, sq)
        assert kl_diag_gauss(p, q).data[0] == pytest.approx(kl_quadrature(mp, sp, mq, sq), rel=1e-7, abs=1e-10)
        jq = kl_quadrature(mp, sp, mq, sq) + kl_quadrature(mq, sq, mp, sp)
        assert jeffreys(p, q).data[0] == pytest.approx(jq, rel=1e-7, abs=1e-10)


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        kl_diag_gauss(gaussian([[0.0]], 1.0), gaussian([[0.0, 1.0]], 1.0))


def test_kind_dispatch():
    p, q = gaussian([[0.0]], 1.0), gaussian([[2.0]], 1.0)
    assert divergence(p, q, DivergenceKind.KL).data[0] == pytest.approx(2.0)
    assert divergence(p, q).data[0] == pytest.approx(4.0)


def test_gradients_wrt_all_arguments():
    rng = np.random.default_rng(0)
    vals = [rng.normal(size=(3, 2)), rng.uniform(-.5, .5, (3, 2)), rng.normal(size=(3, 2)), rng.uniform(-.5, .5, (3, 2))]

    def f(i, v):
        args = [Tensor(x) for x in vals]
        args[i] = Tensor(v)
        return float(jeffreys(DiagGaussian(args[0], args[1]), DiagGaussian(args[2], args[3])).data.sum())

    ts = [Tensor(x, requires_grad=True) for x in vals]
    ad.backward(jeffreys(DiagGaussian(ts[0], ts[1]), DiagGaussian(ts[2], ts[3])).sum())
    for i in range(4):
        assert rel_err(ts[i].grad, fd_grad(lambda v: f(i, v), vals[i])) < 1e-6


finite = st.floats(-3, 3)
logs = st.floats(-2, 2)


@settings(max_examples=100, deadline=None)
@given(finite, logs, finite, logs)
def test_nonnegative_and_jeffreys_symmetric(m1, l1, m2, l2):
    p, q = DiagGaussian([[m1]], [l1]), DiagGaussian([[m2]], [l2])
    assert kl_diag_gauss(p, q).data[0] >= -1e-12
    j = jeffreys(p, q).data[0]
    assert j == pytest.approx(jeffreys(q, p).data[0], rel=1e-12, abs=1e-12)
    assert j == pytest.approx(kl_diag_gauss(p, q).data[0] + kl_diag_gauss(q, p).data[0], rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(finite, logs)
def test_identical_distributions_have_zero_divergence(m, l):
    p = DiagGaussian([[m]], [l])
    assert jeffreys(p, p).data[0] == pytest.approx(0.0, abs=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lipgail import autodiff as ad
from lipgail.autodiff import AdamState, ParamStore, ShapeError, Tensor, adam_step, clip_grad_norm
from oracles import fd_grad, rel_err

UNARY = {
    "tanh": ad.tanh, "sigmoid": ad.sigmoid, "softplus": ad.softplus, "exp": ad.exp,
    "square": ad.square, "neg": ad.neg,
    "log": lambda t: ad.log(ad.exp(t) + 1.0),
    "sum_axis0": lambda t: ad.tsum(t, axis=0),
    "mean_axis1": lambda t: ad.mean(t, axis=1, keepdims=True),
    "reshape": lambda t: ad.reshape(t, (-1,)),
    "take": lambda t: ad.take(t, np.array([2, 0, 0])),
}


def _check_unary(fn, x):
    w = np.random.default_rng(1).standard_normal(fn(Tensor(x)).shape)

    def f(v):
        return float((fn(Tensor(v)).data * w).sum())

    t = Tensor(x, requires_grad=True)
    ad.backward((fn(t) * w).sum())
    return rel_err(t.grad, fd_grad(f, x))


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name):
    x = np.random.default_rng(0).uniform(-1.5, 1.5, (4, 3))
    assert _check_unary(UNARY[name], x) < 1e-6


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "minimum", "matmul"])
def test_binary_ops_with_broadcasting(op):
    rng = np.random.default_rng(2)
    a = rng.uniform(0.5, 1.5, (4, 3))
    b = rng.uniform(0.5, 1.5, (3,) if op != "matmul" else (3, 2))
    fn = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div, "minimum": ad.minimum,
          "matmul": ad.matmul}[op]
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ad.backward(ad.tsum(fn(ta, tb)))
    assert rel_err(ta.grad, fd_grad(lambda v: fn(Tensor(v), Tensor(b)).data.sum(), a)) < 1e-6
    assert rel_err(tb.grad, fd_grad(lambda v: fn(Tensor(a), Tensor(v)).data.sum(), b)) < 1e-6
    assert tb.grad.shape == b.shape


def test_concat_splits_gradient():
    a, b = Tensor(np.ones((2, 1)), True), Tensor(np.ones((2, 2)), True)
    ad.backward((ad.concat([a, b]) * np.array([1.0, 2.0, 3.0])).sum())
    np.testing.assert_array_equal(a.grad, [[1.0], [1.0]])
    np.testing.assert_array_equal(b.grad, [[2.0, 3.0], [2.0, 3.0]])


def test_abs_subgradient_is_zero_at_zero():
    t = Tensor(np.array([-2.0, 0.0, 3.0]), requires_grad=True)
    ad.backward(ad.tabs(t).sum())
    np.testing.assert_array_equal(t.grad, [-1.0, 0.0, 1.0])


def test_clamp_passes_gradient_only_inside():
    t = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    ad.backward(ad.clamp(t, -1.0, 1.0).sum())
    np.testing.assert_array_equal(t.grad, [0.0, 1.0, 0.0])


def test_reused_node_accumulates():
    t = Tensor(np.array(3.0), requires_grad=True)
    y = t * t
    ad.backward(y * y)  # t^4 -> 4 t^3
    assert t.grad == pytest.approx(108.0)


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        ad.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_deep_chain_does_not_recurse():
    t = Tensor(np.array(1.0), requires_grad=True)
    y = t
    for _ in range(5000):
        y = y * 1.0
    ad.backward(y)
    assert t.grad == 1.0


def test_adam_first_step_moves_by_learning_rate():
    ps = ParamStore()
    p = ps.add("w", np.array([1.0, -1.0]))
    p.grad = np.array([0.3, -7.0])
    adam_step(ps, AdamState(learning_rate=0.1))
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-7)


def test_adam_minimizes_quadratic():
    ps = ParamStore()
    p = ps.add("w", np.array([3.0, -2.0]))
    st_ = AdamState(learning_rate=0.05)
    for _ in range(2000):
        ps.zero_grads()
        ad.backward(ad.square(p - np.array([1.0, 0.5])).sum())
        adam_step(ps, st_)
    np.testing.assert_allclose(p.data, [1.0, 0.5], atol=1e-3)


def test_clip_grad_norm():
    ps = ParamStore()
    a, b = ps.add("a", np.zeros(1)), ps.add("b", np.zeros(1))
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert clip_grad_norm(ps, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose([a.grad[0], b.grad[0]], [0.6, 0.8])


def test_paramstore_roundtrip_and_flat():
    ps = ParamStore()
    ps.add("x/W", np.arange(6.0).reshape(2, 3))
    ps.add("x/b", np.array([6.0]))
    back = ParamStore.from_json(ps.to_json())
    assert back.names() == ["x/W", "x/b"]
    np.testing.assert_array_equal(back.get_flat(), np.arange(7.0))
    back.set_flat(np.zeros(7))
    assert back["x/W"].shape == (2, 3) and not back.get_flat().any()
    with pytest.raises(ShapeError):
        back.set_flat(np.zeros(3))
    with pytest.raises(KeyError):
        ps.add("x/b", np.zeros(1))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_product_rule(a, b):
    ta, tb = Tensor(a, True), Tensor(b, True)
    ad.backward((ta * tb).sum())
    np.testing.assert_allclose(ta.grad, b)
    np.testing.assert_allclose(tb.grad, a)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5,), elements=st.floats(-30, 30)))
def test_sigmoid_stays_in_unit_interval(x):
    s = ad.sigmoid(Tensor(x)).data
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s, 1 / (1 + np.exp(-x)), rtol=1e-12, atol=1e-15)

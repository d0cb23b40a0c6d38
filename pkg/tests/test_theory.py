import numpy as np
import pytest

from lipgail.theory import (SHIPPED, check_bound, check_det_condition, contraction_1d, get_mdp,
                            interpolation_matrix, k_step_reward_gradients, linear_1d, value_iteration,
                            verify)


def test_linear_q_matches_closed_form():
    mdp = linear_1d(0.9, 0.9, grid_points=401)
    q = value_iteration(mdp)
    s = np.linspace(-0.8, 0.8, 9)[:, None]
    np.testing.assert_allclose(q.q(s, 0), s[:, 0] / (1 - 0.81), atol=1e-6)


def test_linear_bound_is_attained():
    rep = check_bound(linear_1d(0.9))
    assert rep["status"] == "PASS"
    assert rep["max_grad"] == pytest.approx(1 / 0.19, rel=1e-2)
    assert rep["max_grad"] >= 0.99 * rep["bound"]


def test_contractive_controlled_mdp_has_slack():
    rep = check_bound(contraction_1d())
    assert rep["pass_"] and rep["ratio"] < 0.9


def test_two_dimensional_bound_scales_with_sqrt_n():
    rep = verify("linear_2d")
    assert rep["bound"] == pytest.approx(np.sqrt(2) / 0.19)
    assert rep["pass"] and rep["max_grad"] == pytest.approx(rep["bound"], rel=1e-2)


@pytest.mark.parametrize("name", ["linear_1d_noise0.01", "linear_1d_noise0.05"])
def test_additive_noise_keeps_gradient_within_bound(name):
    rep = verify(name)
    assert rep["max_grad"] <= 1.05 * rep["bound"]


def test_per_step_reward_gradients_decay_geometrically():
    mdp = linear_1d(0.9)
    g = k_step_reward_gradients(mdp, [0.3], 30)
    assert np.all(g <= mdp.L * mdp.C ** np.arange(31) * 1.02)


def test_per_step_on_controlled_mdp():
    mdp = contraction_1d()
    g = k_step_reward_gradients(mdp, [0.4], 15)
    assert np.all(g <= mdp.L * mdp.C ** np.arange(16) * 1.02)


def test_bound_not_applicable_when_expansive():
    rep = verify("piecewise_1d")
    assert rep["status"] == "NOT-APPLICABLE" and rep["pass"] is None


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_deterministic_condition_matches_declared_constant(name):
    mdp = get_mdp(name)
    rep = check_det_condition(mdp, 32)
    assert abs(rep["max_dyn_grad"] - mdp.C) < 1e-6


def test_interpolation_reproduces_multilinear_functions():
    axes = [np.linspace(0, 1, 5), np.linspace(-1, 1, 7)]
    X, Y = np.meshgrid(*axes, indexing="ij")
    f = (2 * X + 3 * Y + X * Y).ravel()
    pts = np.random.default_rng(0).uniform([0, -1], [1, 1], (50, 2))
    M = interpolation_matrix(axes, pts)
    np.testing.assert_allclose(M @ f, 2 * pts[:, 0] + 3 * pts[:, 1] + pts[:, 0] * pts[:, 1], atol=1e-12)
    np.testing.assert_allclose(M.sum(axis=1), 1.0)


def test_unknown_mdp():
    with pytest.raises(ValueError):
        get_mdp("nope")

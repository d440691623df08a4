import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenario_irl.basis import (BasisSet, QuadratureRule, adjoint_apply, adjoint_apply_empirical, adjoint_values,
                                basis_from_spec, empirical_basis, evaluate_combination, gauss_legendre_box,
                                lqg_cost_basis, lqg_value_basis, monomial, simpson_box)
from scenario_irl.mdp_core import LQGParams, next_state_pools, truncated_lqg_model


def test_quadrature_exactness_and_weights():
    q = gauss_legendre_box([-10, -10], [10, 10], 3, 5)
    assert q.weights.sum() == pytest.approx(400.0, rel=1e-14)
    assert q.integrate(q.nodes[:, 0] ** 4 * q.nodes[:, 1] ** 2) == pytest.approx(2 * 10 ** 5 / 5 * 2 * 10 ** 3 / 3,
                                                                                rel=1e-12)
    s = simpson_box([0.0], [1.0], 8)
    assert s.integrate(s.nodes[:, 0] ** 3) == pytest.approx(0.25, rel=1e-14)
    with pytest.raises(ValueError):
        simpson_box([0.0], [1.0], 7)
    with pytest.raises(ValueError):
        QuadratureRule(np.zeros((2, 1)), np.array([1.0, 1.0]), 1, np.array([0.0]), np.array([1.0]))


def test_monomial_metadata():
    f = monomial((2, 2), [-10, -10], [10, 10], "cost", 1)
    assert f.sup_norm == 1e4
    # |d/dx x^2 a^2| <= 2*10*100 and likewise in a
    assert f.lip_const == pytest.approx(2000.0)
    u = monomial((2,), [-10], [10], "value", 1)
    assert u.sup_norm == 100.0 and u.lip_const == 20.0
    assert monomial((0,), [-10], [10], "value", 1).is_constant_one


def test_lqg_bases():
    C, U = lqg_cost_basis(10, 1.0), lqg_value_basis(10, 1.0)
    assert (len(C), len(U)) == (9, 3)
    assert C.K_inf == 1e4 and U.K_inf == 100 and U.L_max == 20
    assert U[0].is_constant_one and C[0].is_constant_one


def test_basis_from_spec(lqg):
    assert basis_from_spec("lqg_poly_c9", lqg, 1.0, "cost").names == lqg_cost_basis(10, 1.0).names
    assert len(basis_from_spec({"degree": 2}, lqg, 1.0, "value")) == 3
    assert len(basis_from_spec({"degree": [2, 1]}, lqg, 1.0, "cost")) == 6
    with pytest.raises(KeyError):
        basis_from_spec("no_such_basis", lqg, 1.0, "cost")


def test_empirical_basis_bounds(lqg):
    f = empirical_basis(lambda x, a: np.sin(x[:, 0]) * a[:, 0], "cost", lqg)
    assert 10.0 <= f.sup_norm <= 10.5 + 1e-9
    assert f.lip_const >= 10.0


def test_adjoint_of_constant(lqg, state_quad, rng):
    x = rng.uniform(-10, 10, (1000, 1))
    a = rng.uniform(-10, 10, (1000, 1))
    U = lqg_value_basis(10, 1.0)
    t = adjoint_apply(lqg, U[0], x, a, state_quad)
    np.testing.assert_allclose(t, 0.1, atol=1e-10)


def test_adjoint_without_lookahead(state_quad, rng):
    m = truncated_lqg_model(LQGParams(), 1e-300)
    x = rng.uniform(-10, 10, (50, 1))
    a = rng.uniform(-10, 10, (50, 1))
    u = lqg_value_basis(10, 1.0)[2]
    np.testing.assert_allclose(adjoint_apply(m, u, x, a, state_quad), x[:, 0] ** 2, rtol=1e-12)


def test_adjoint_of_identity(lqg, state_quad):
    u = lqg_value_basis(10, 1.0)[1]
    assert adjoint_apply(lqg, u, [[1.0]], [[0.0]], state_quad)[0] == pytest.approx(2.35, abs=1e-4)


def test_closed_form_and_quadrature_adjoints_agree(lqg, state_quad, rng):
    U = lqg_value_basis(10, 1.0)
    x = rng.uniform(-10, 10, (500, 1))
    a = rng.uniform(-10, 10, (500, 1))
    closed = adjoint_values(lqg, U, x, a, route="closed")
    quad = adjoint_values(lqg, U, x, a, state_quad, route="quadrature")
    np.testing.assert_allclose(closed, quad, rtol=1e-10, atol=1e-10)


def test_empirical_adjoint_cases(lqg, state_quad):
    U = lqg_value_basis(10, 1.0)
    assert adjoint_apply_empirical(U[0], [[0.3]], [[0.1]], np.array([[[2.0], [-1.0]]]), 0.9)[0] == pytest.approx(0.1)
    assert adjoint_apply_empirical(U[1], [[2.0]], [[0.0]], np.array([[[0.5]]]), 0.9)[0] == pytest.approx(1.55)
    pts = np.array([[1.0, 2.0]])
    k = 10_000
    pools = next_state_pools(lqg, pts, k, 4)
    est = adjoint_apply_empirical(U[2], pts[:, :1], pts[:, 1:], pools, 0.9)[0]
    exact = adjoint_apply(lqg, U[2], pts[:, :1], pts[:, 1:], state_quad)[0]
    sd = np.std(pools[0, :, 0] ** 2)
    assert abs(est - exact) <= 3 * 0.9 * sd / np.sqrt(k)


def test_normalization_row_values(norm_row):
    assert norm_row[0] == pytest.approx(400.0, rel=1e-12)
    assert norm_row[9] == pytest.approx(-40.0, rel=1e-10)
    assert abs(norm_row[1]) < 1e-9
    # x^2 and a^2 both integrate to 40000/3 on the square
    assert norm_row[4] == pytest.approx(40000 / 3, rel=1e-12)


def test_evaluate_combination():
    C = lqg_cost_basis(10, 3.0)
    e1 = np.eye(9)[0]
    assert evaluate_combination(C, e1, np.array([[4.0]]), np.array([[-3.0]]))[0] == 1.0
    w = np.zeros(9)
    w[4] = w[5] = 1.0
    assert evaluate_combination(C, w, np.array([[2.0]]), np.array([[3.0]]))[0] == 13.0
    assert evaluate_combination(C, np.zeros(9), np.array([[2.0]]), np.array([[3.0]]))[0] == 0.0
    with pytest.warns(UserWarning):
        evaluate_combination(C.with_theta(1.0), w, np.array([[0.0]]), np.array([[0.0]]))


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_lipschitz_metadata_bounds_differences(x, a):
    C = lqg_cost_basis(10, 1.0)
    rng = np.random.default_rng(abs(hash((x, a))) % 2 ** 32)
    y, b = np.clip([x, a] + rng.normal(scale=0.5, size=2), -10, 10)
    dist = abs(x - y) + abs(a - b)
    p = C.matrix(np.array([[x]]), np.array([[a]]))[0]
    q = C.matrix(np.array([[y]]), np.array([[b]]))[0]
    lips = np.array([f.lip_const for f in C])
    assert np.all(np.abs(p - q) <= lips * dist + 1e-9)


def test_adjoint_is_linear(lqg, state_quad, rng):
    U = lqg_value_basis(10, 1.0)
    x = rng.uniform(-10, 10, (200, 1))
    a = rng.uniform(-10, 10, (200, 1))
    w = np.array([0.7, -1.3, 0.05])
    combo = lambda p: sum(wi * f(p) for wi, f in zip(w, U))  # noqa: E731
    direct = adjoint_apply(lqg, combo, x, a, state_quad)
    np.testing.assert_allclose(direct, adjoint_apply(lqg, list(U), x, a, state_quad) @ w, rtol=1e-10, atol=1e-9)


def test_empirical_adjoint_error_shrinks_with_k(lqg, state_quad, rng):
    U = lqg_value_basis(10, 1.0)
    pts = rng.uniform(-10, 10, (40, 2))
    exact = adjoint_apply(lqg, U[2], pts[:, :1], pts[:, 1:], state_quad)
    rms = []
    for k in (10, 1000):
        pools = next_state_pools(lqg, pts, k, k)
        est = adjoint_apply_empirical(U[2], pts[:, :1], pts[:, 1:], pools, 0.9)
        err = est - exact
        sd = 0.9 * np.std(pools[:, :, 0] ** 2, axis=1) / np.sqrt(k)
        # unbiased: the average of standardized errors is O(1/sqrt(points))
        assert abs(np.mean(err / np.maximum(sd, 1e-12))) < 4 / np.sqrt(len(pts))
        rms.append(np.sqrt(np.mean(err ** 2)))
    assert rms[1] < rms[0] / 3

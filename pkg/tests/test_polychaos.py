import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from specsim.polychaos import (BasisError, Distribution, GpcBasis, build_index_set,
                               count_indices, eval_multivariate, eval_univariate,
                               make_basis, moments_from_coeffs, recurrence_coeffs)
from specsim.quadrature import gauss_rule

DISTS = [Distribution.gaussian(), Distribution.uniform(), Distribution.gamma(1.0),
         Distribution.gamma(2.5), Distribution.beta(2.0, 3.0), Distribution.beta(0.7, 1.4)]


def _sympy_orthonormal(weight, x, lo, hi, degree):
    """Gram-Schmidt on monomials with exact symbolic inner products."""
    def ip(f, g):
        return sp.integrate(f * g * weight, (x, lo, hi))

    basis = []
    for n in range(degree + 1):
        q = x**n
        for b in basis:
            q -= ip(x**n, b) * b
        basis.append(sp.simplify(q / sp.sqrt(ip(q, q))))
    return basis


@pytest.mark.parametrize("dist, weight, lo, hi", [
    (Distribution.uniform(), sp.Rational(1, 2), -1, 1),
    (Distribution.gaussian(), sp.exp(-sp.Symbol("x")**2 / 2) / sp.sqrt(2 * sp.pi), -sp.oo, sp.oo),
    (Distribution.gamma(2.0), sp.Symbol("x") * sp.exp(-sp.Symbol("x")), 0, sp.oo),
    (Distribution.beta(2.0, 3.0), 12 * sp.Symbol("x") * (1 - sp.Symbol("x"))**2, 0, 1),
])
def test_matches_symbolic_gram_schmidt(dist, weight, lo, hi):
    x = sp.Symbol("x")
    polys = _sympy_orthonormal(weight, x, lo, hi, 4)
    table = recurrence_coeffs(dist, 4)
    pts = np.linspace(*(0.05, 0.95) if dist.family == "beta" else (-0.9, 0.9), 7)
    if dist.family == "gamma":
        pts = np.linspace(0.1, 6.0, 7)
    for n, poly in enumerate(polys):
        ref = np.array([float(poly.subs(x, p)) for p in pts])
        got = eval_univariate(table, n, pts)
        # sign convention: positive leading coefficient
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-12), n


def test_hermite_against_scipy():
    x = np.linspace(-3, 3, 11)
    table = recurrence_coeffs(Distribution.gaussian(), 6)
    for n in range(7):
        ref = special.eval_hermitenorm(n, x) / math.sqrt(math.factorial(n))
        assert np.allclose(eval_univariate(table, n, x), ref, rtol=1e-12, atol=1e-12)


def test_legendre_against_scipy():
    x = np.linspace(-1, 1, 9)
    table = recurrence_coeffs(Distribution.uniform(), 6)
    for n in range(7):
        ref = special.eval_legendre(n, x) * math.sqrt(2 * n + 1)
        assert np.allclose(eval_univariate(table, n, x), ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("dist", DISTS, ids=str)
def test_orthonormality_by_quadrature(dist):
    p = 6
    basis = make_basis([dist], p)
    rule = gauss_rule(dist, p + 2)
    H = basis.evaluate(rule.nodes[:, None])
    G = H.T @ (rule.weights[:, None] * H)
    assert np.allclose(G, np.eye(p + 1), atol=1e-10)


@pytest.mark.parametrize("dist", DISTS, ids=str)
def test_gauss_roots_are_zeros_of_degree_n(dist):
    n = 5
    table = recurrence_coeffs(dist, n)
    rule = gauss_rule(dist, n)
    assert np.allclose(eval_univariate(table, n, rule.nodes), 0.0, atol=1e-9)


def test_gauss_nodes_against_scipy_roots():
    t, _ = special.roots_hermitenorm(7)
    assert np.allclose(gauss_rule(Distribution.gaussian(), 7).nodes, t, atol=1e-13)
    t, _ = special.roots_legendre(7)
    assert np.allclose(gauss_rule(Distribution.uniform(), 7).nodes, t, atol=1e-13)


def test_index_set_order_and_counts():
    assert build_index_set(2, 1) == [(0, 0), (0, 1), (1, 0)]
    assert build_index_set(2, 2) == [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]
    assert count_indices(2, 3) == 10
    assert count_indices(8, 3) == 165
    assert count_indices(2, 3, "tensor_product") == 16
    assert len(build_index_set(3, 2, "tensor_product")) == 27


@given(d=st.integers(1, 5), p=st.integers(0, 5))
@settings(max_examples=40, deadline=None)
def test_index_set_is_complete_and_graded(d, p):
    idx = build_index_set(d, p)
    assert len(idx) == math.comb(p + d, p)
    assert len(set(idx)) == len(idx)
    degs = [sum(a) for a in idx]
    assert degs == sorted(degs)
    assert idx[0] == (0,) * d


def test_eval_multivariate_one_based():
    basis = make_basis([Distribution.gaussian(), Distribution.uniform()], 2)
    xi = np.array([0.3, -0.4])
    # index 2 is (0, 1): Legendre degree 1 in the second coordinate
    assert eval_multivariate(basis, 1, xi) == pytest.approx(1.0)
    assert eval_multivariate(basis, 2, xi) == pytest.approx(math.sqrt(3) * -0.4)
    assert eval_multivariate(basis, 3, xi) == pytest.approx(0.3)
    with pytest.raises(BasisError):
        eval_multivariate(basis, 0, xi)
    with pytest.raises(BasisError):
        eval_multivariate(basis, 7, xi)


def test_invalid_inputs():
    with pytest.raises(BasisError):
        Distribution("cauchy")
    with pytest.raises(BasisError):
        Distribution.gamma(-1.0)
    with pytest.raises(BasisError):
        make_basis([], 2)
    with pytest.raises(BasisError):
        make_basis([Distribution.uniform()], 9)
    basis = make_basis([Distribution.uniform()], 2)
    with pytest.raises(BasisError):
        basis.evaluate(np.array([[1.5]]))
    with pytest.raises(BasisError):
        basis.evaluate(np.array([[0.1, 0.2]]))
    with pytest.raises(BasisError):
        make_basis([Distribution.beta(2, 2)], 2).evaluate(np.array([[-0.1]]))


@given(st.sampled_from(DISTS), st.integers(1, 8))
@settings(max_examples=30, deadline=None)
def test_mean_of_nonconstant_terms_is_zero(dist, p):
    basis = make_basis([dist], p)
    rule = gauss_rule(dist, p + 1)
    H = basis.evaluate(rule.nodes[:, None])
    means = rule.weights @ H
    assert means[0] == pytest.approx(1.0)
    assert np.allclose(means[1:], 0.0, atol=1e-9)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_moments_from_coeffs(c):
    c = np.array(c)
    mean, var = moments_from_coeffs(c)
    assert mean == c[0]
    assert var == pytest.approx(np.sum(c[1:] ** 2))


def test_distribution_moments_match_quadrature():
    for dist in DISTS:
        rule = gauss_rule(dist, 6)
        for m in range(6):
            assert rule.weights @ rule.nodes**m == pytest.approx(dist.moment(m), rel=1e-10,
                                                                  abs=1e-12)


def test_basis_is_hashable_value():
    a = GpcBasis((Distribution.uniform(),), 3)
    b = make_basis([Distribution.uniform()], 3)
    assert a.size == b.size == 4
    assert a.index_set == b.index_set

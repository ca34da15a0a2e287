import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsim.polychaos import Distribution
from specsim.quadrature import (QuadratureError, RuleND, clenshaw_curtis_rule, gauss_rule,
                                gauss_points_for_degree, integrate, merge_nodes, smolyak_grid,
                                tensor_gauss)

U, G = Distribution.uniform(), Distribution.gaussian()


@given(n=st.integers(1, 12), data=st.data())
@settings(max_examples=40, deadline=None)
def test_gauss_exactness(n, data):
    dist = data.draw(st.sampled_from([U, G, Distribution.gamma(1.5), Distribution.beta(2, 5)]))
    rule = gauss_rule(dist, n)
    assert rule.weights.sum() == pytest.approx(1.0)
    assert np.all(rule.weights > 0)
    for m in range(2 * n):
        ref = dist.moment(m)
        scale = rule.weights @ np.abs(rule.nodes) ** m
        assert rule.weights @ rule.nodes**m == pytest.approx(ref, rel=1e-8, abs=1e-12 * scale)


def test_gauss_symmetry_and_centre():
    r = gauss_rule(U, 5)
    assert np.array_equal(r.nodes, -r.nodes[::-1])
    assert r.nodes[2] == 0.0


def test_clenshaw_curtis_nodes_and_exactness():
    r = clenshaw_curtis_rule(2)
    assert np.allclose(r.nodes, [-1, -math.sqrt(0.5), 0, math.sqrt(0.5), 1])
    assert r.weights.sum() == pytest.approx(1.0)
    # exact for odd polys by symmetry and for even degree <= n-1
    for m in range(0, 5):
        assert r.weights @ r.nodes**m == pytest.approx(U.moment(m), abs=1e-14)
    assert clenshaw_curtis_rule(0).nodes.tolist() == [0.0]
    with pytest.raises(QuadratureError):
        clenshaw_curtis_rule(1, G)


def test_clenshaw_curtis_is_nested():
    a, b = clenshaw_curtis_rule(2), clenshaw_curtis_rule(3)
    assert all(np.any(np.abs(b.nodes - x) < 1e-15) for x in a.nodes)


def test_tensor_gauss_exact_on_products():
    rule = tensor_gauss([U, G], 3)
    assert rule.size == 9
    val = integrate(rule, lambda x: x[0] ** 4 * x[1] ** 4)
    assert val == pytest.approx(U.moment(4) * G.moment(4))


@pytest.mark.parametrize("d, level", [(2, 3), (3, 3), (4, 2)])
def test_smolyak_exactness_total_degree(d, level):
    rule = smolyak_grid([U] * d, level)
    assert rule.weights.sum() == pytest.approx(1.0)
    # total degree 2*level-1 is integrated exactly
    rng = np.random.default_rng(0)
    for _ in range(10):
        powers = rng.multinomial(2 * level - 1 - 1, np.ones(d) / d)
        ref = math.prod(U.moment(int(k)) for k in powers)
        got = rule.weights @ np.prod(rule.nodes ** powers, axis=1)
        assert got == pytest.approx(ref, abs=1e-12)


def test_smolyak_mixed_families():
    rule = smolyak_grid([G, U], 3)
    ref = G.moment(2) * U.moment(2)
    assert rule.weights @ (rule.nodes[:, 0] ** 2 * rule.nodes[:, 1] ** 2) == pytest.approx(ref)


def test_smolyak_size_d8():
    # the reference case for the sampling-cost comparison
    rule = smolyak_grid([U] * 8, 4)
    assert rule.size == 849
    assert rule.size / math.comb(3 + 8, 3) == pytest.approx(849 / 165)


def test_smolyak_fewer_nodes_than_tensor():
    d = 5
    assert smolyak_grid([U] * d, 3).size < 5**d


def test_merge_nodes_sums_weights():
    nodes = np.array([[0.0, 0.0], [1e-15, 0.0], [1.0, 0.0], [1.0, 1.0]])
    w = np.array([0.25, 0.25, 0.5, 0.0])
    rule = merge_nodes(RuleND(nodes, w, "x"))
    assert rule.size == 2
    assert np.allclose(rule.weights, [0.5, 0.5])


def test_invalid_rules():
    with pytest.raises(QuadratureError):
        gauss_rule(U, 0)
    with pytest.raises(QuadratureError):
        smolyak_grid([U], 0)
    with pytest.raises(QuadratureError):
        clenshaw_curtis_rule(-1)


@given(st.integers(0, 30))
def test_points_for_degree(deg):
    n = gauss_points_for_degree(deg)
    assert 2 * n - 1 >= deg
    assert n == 1 or 2 * (n - 1) - 1 < deg

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnsos.errors import ModelError
from nnsos.poly import (Polynomial, Universe, mono, mono_key, monomial_basis,
                        poly_arith)


@pytest.fixture
def uni():
    u = Universe()
    u.add_block("x", 2)
    return u.freeze()


def test_difference_of_squares(uni):
    x1 = uni.var("x1")
    p = poly_arith(x1 + 1, x1 - 1, "mul")
    assert p == x1 ** 2 - 1


def test_additive_identity(uni):
    x1, x2 = uni.vars("x")
    p = x1 * x2 + 3 * x2
    assert p + Polynomial.zero(uni) == p


def test_binomial_square(uni):
    x1, x2 = uni.vars("x")
    p = (x1 + x2) ** 2
    assert p.coeff(mono({0: 2})) == 1.0
    assert p.coeff(mono({0: 1, 1: 1})) == 2.0
    assert p.coeff(mono({1: 2})) == 1.0
    assert len(p) == 3


def test_evaluate_examples(uni):
    x1 = uni.var("x1")
    assert (x1 ** 2 - 1).evaluate({0: 2.0}) == 3.0
    V = (x1 - 2) ** 2 * (x1 + 2) ** 2 / 5
    assert V.evaluate([0.0, 0.0]) == pytest.approx(16 / 5, abs=1e-15)
    p = 7 * x1 ** 3 + 2.5
    assert p.evaluate([0.0, 0.0]) == p.constant()


def test_evaluate_missing_variable(uni):
    x1, x2 = uni.vars("x")
    with pytest.raises(ModelError):
        (x1 * x2).evaluate({0: 1.0})


def test_mismatched_universe():
    a, b = Universe(), Universe()
    a.add_block("x", 1)
    b.add_block("x", 1)
    with pytest.raises(ModelError):
        a.var("x1") + b.var("x1")


def test_substitute_successor():
    u = Universe()
    u.add_block("x", 1)
    u.add_block("xp", 1)
    x, xp = u.var("x1"), u.var("xp1")
    V = lambda z: (z - 2) ** 2 * (z + 2) ** 2 / 5
    assert V(xp).substitute({1: 2 * x}).allclose(V(2 * x), atol=1e-12)
    assert V(xp).substitute({1: xp}) == V(xp)


def test_substitute_merge(uni):
    x1, x2 = uni.vars("x")
    assert (x1 * x2).substitute({1: x1}) == x1 ** 2


def test_monomial_basis():
    b = monomial_basis([0, 1], 2)
    assert b == [(), ((0, 1),), ((1, 1),), ((0, 2),), ((0, 1), (1, 1)), ((1, 2),)]
    assert monomial_basis([0, 1], 0) == [()]
    assert len(monomial_basis([0], 3)) == 4
    for n, d in [(3, 4), (5, 2), (2, 6)]:
        assert len(monomial_basis(range(n), d)) == math.comb(n + d, d)


def test_canonicalisation_drops_tiny(uni):
    x1 = uni.var("x1")
    p = x1 + 1e-16
    assert len(p) == 1


def test_json_roundtrip(uni):
    x1, x2 = uni.vars("x")
    p = 3 * x1 ** 2 * x2 - 0.5 * x2 + 2
    data = p.to_json()
    assert {"exps": {"x1": 2, "x2": 1}, "coeff": 3.0} in data["terms"]
    assert Polynomial.from_json(data, uni) == p


def test_diff(uni):
    x1, x2 = uni.vars("x")
    p = x1 ** 3 * x2 + x2
    assert p.diff(0) == 3 * x1 ** 2 * x2
    assert p.diff(1) == x1 ** 3 + 1


# -- property tests ---------------------------------------------------------

NVARS = 5


@st.composite
def polys(draw, max_deg=4, max_terms=6):
    n = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(n):
        exps = draw(st.lists(st.integers(0, 2), min_size=NVARS, max_size=NVARS))
        while sum(exps) > max_deg:
            k = int(np.argmax(exps))
            exps[k] -= 1
        m = mono(enumerate(exps))
        terms[m] = draw(st.floats(-3, 3, allow_nan=False))
    return Polynomial(terms)


def _rel_close(a, b, rel):
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


@settings(max_examples=100, deadline=None)
@given(polys(), polys(), polys(), st.integers(0, 2 ** 31 - 1))
def test_distributivity(a, b, c, seed):
    rng = np.random.default_rng(seed)
    lhs = a * (b + c)
    rhs = a * b + a * c
    for _ in range(20):
        pt = rng.uniform(-1.5, 1.5, NVARS)
        assert _rel_close(lhs(pt), rhs(pt), 1e-9)


@settings(max_examples=100, deadline=None)
@given(polys(), polys(), st.integers(0, 2 ** 31 - 1))
def test_addition_evaluates_additively(a, b, seed):
    pt = np.random.default_rng(seed).uniform(-2, 2, NVARS)
    assert _rel_close((a + b)(pt), a(pt) + b(pt), 1e-12)


@settings(max_examples=60, deadline=None)
@given(polys(max_deg=3), polys(max_deg=2), polys(max_deg=2), st.integers(0, 2 ** 31 - 1))
def test_substitute_matches_composition(p, b0, b1, seed):
    pt = np.random.default_rng(seed).uniform(-1, 1, NVARS)
    composed = pt.copy()
    composed[0], composed[1] = b0(pt), b1(pt)
    val = p.substitute({0: b0, 1: b1})(pt)
    assert _rel_close(val, p(composed), 1e-10)
    assert not ({0, 1} & p.substitute({0: b0 * 0 + 1.0, 1: 2.0}).variables())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=4, unique=True), st.integers(0, 4))
def test_basis_strictly_ordered(vars, d):
    b = monomial_basis(vars, d)
    keys = [mono_key(m) for m in b]
    assert all(k1 < k2 for k1, k2 in zip(keys, keys[1:]))
    assert len(set(b)) == len(b)


def test_vectorised_evaluation(uni):
    x1, x2 = uni.vars("x")
    p = x1 ** 2 * x2 - x2 + 1
    X = np.random.default_rng(0).normal(size=(2, 50))
    np.testing.assert_allclose(p(X), X[0] ** 2 * X[1] - X[1] + 1)

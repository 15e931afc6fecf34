from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from finslerlab.autodiff import (
    coordinate_index, derive, dual_const, dual_dot, dual_matmul, dual_mul, fd_crosscheck, jet_tables,
)
from finslerlab.expr import parse


def test_polynomial_derivative_by_hand():
    e = parse("q1^2*u1", 1)
    assert derive(e, [3.0, 2.0], ["q1", "u1"]) == 6.0
    assert derive(e, [3.0, 2.0], ["q1", "q1"]) == 4.0
    assert derive(e, [3.0, 2.0], ["q1", "q1", "u1"]) == 2.0


def test_order_below_degree_rejected():
    with pytest.raises(ValueError):
        derive(parse("q1", 1), [0, 0], ["q1", "q1"], order=1)


def test_coordinate_tokens():
    assert coordinate_index("q2", 3) == 1
    assert coordinate_index("u1", 3) == 3
    assert coordinate_index(5, 3) == 5
    with pytest.raises(ValueError):
        coordinate_index("u4", 3)


def test_table_sizes():
    t = jet_tables(4)
    # monomials of degree <= 3 in 4 variables: C(7, 3)
    assert int(t.msize[3]) == math.comb(7, 3)
    assert int(t.msize[1]) == 5


SYM_CASES = [
    "(sqrt(u1^2 + u2^2) + 0.3*u1)^2",
    "0.5*(u1^2 + q1^2*u2^2)",
    "exp(q1*u2)*sin(q2) + log(2 + u1^2)/u2",
    "u1^3*q2^-2 + cos(q1 - u2)^3",
]


@pytest.mark.parametrize("src", SYM_CASES)
def test_all_partials_match_sympy(src):
    q1, q2, u1, u2 = sp.symbols("q1 q2 u1 u2")
    syms = [q1, q2, u1, u2]
    f = sp.sympify(src.replace("^", "**"))
    x = [0.4, -0.3, 0.8, 1.1]
    sub = dict(zip(syms, x))
    jet = parse(src, 2).jet(x, 3)
    for mono, val in jet.partials.items():
        ref = float(sp.diff(f, *[syms[i] for i in mono]).subs(sub))
        assert val == pytest.approx(ref, rel=1e-12, abs=1e-12), mono


def test_fd_crosscheck_third_derivative():
    e = parse("(sqrt(u1^2 + u2^2) + 0.3*u1)^2", 2)
    ad, fd = fd_crosscheck(e, [0.0, 0.0, 0.7, -0.4], ["u1", "u1", "u2"])
    assert abs(ad - fd) <= 1e-6 * max(1.0, abs(ad))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
def test_leibniz_rule(x):
    f = parse("sin(q1)*u2 + q2^2", 2)
    h = parse("exp(u1)*q2 - u2^3", 2)
    fh = parse("(sin(q1)*u2 + q2^2)*(exp(u1)*q2 - u2^3)", 2)
    jf, jh, jfh = f.jet(x, 2), h.jet(x, 2), fh.jet(x, 2)
    expect = jf.value * jh.hessian() + jh.value * jf.hessian() + np.outer(jf.gradient(), jh.gradient()) \
        + np.outer(jh.gradient(), jf.gradient())
    assert np.allclose(jfh.hessian(), expect, rtol=1e-12, atol=1e-12)


def test_hessian_symmetric_third_symmetric():
    j = parse("q1*u1^2*exp(u2)", 2).jet([0.2, 0.1, 0.5, 0.3], 3)
    H, T = j.hessian(), j.third()
    assert np.array_equal(H, H.T)
    assert np.array_equal(T, np.transpose(T, (1, 0, 2)))
    assert np.array_equal(T, np.transpose(T, (2, 1, 0)))


def test_dual_helpers_product_rule():
    a = dual_const(np.array([2.0, 3.0]), 2)
    a[0, 1] = 1.0
    a[1, 2] = 1.0
    p = dual_mul(a[0], a[1])
    assert p.tolist() == [6.0, 3.0, 2.0]
    assert dual_dot(a, a).tolist() == [13.0, 4.0, 6.0]
    M = np.zeros((2, 2, 3))
    M[..., 0] = np.eye(2)
    assert np.array_equal(dual_matmul(M, M)[..., 0], np.eye(2))

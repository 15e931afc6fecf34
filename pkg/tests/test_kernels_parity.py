from __future__ import annotations

import numpy as np
import pytest

from finslerlab import _kernels
from finslerlab._kernels import _ops
from finslerlab.expr import parse
from finslerlab.geometry import FinslerModel, sample_points

pytestmark = pytest.mark.skipif(not _kernels.numba_available(), reason="numba not installed")

NB = _kernels.get_backend("numba")
NP = _kernels.get_backend("numpy")

SOURCES = [
    "(sqrt(u1^2 + u2^2) + 0.3*u1)^2",
    "0.5*(u1^2 + q1^2*u2^2)",
    "exp(q1)*sin(q2)*u1^3/u2 + log(3 + q1)^1.5 + q2^u1",
    "u1^-2 + cos(u2)^7 - 2^q1",
]


@pytest.mark.parametrize("src", SOURCES)
@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_eval_tape_backends_agree(src, order):
    prog = parse(src, 2).program
    X = sample_points(2, 40, 3, [0.2, 1.0], [0.5, 1.5])
    a, sa, _ = NB.eval_tape(prog, X, order)
    b, sb, _ = NP.eval_tape(prog, X, order)
    assert np.array_equal(sa, sb)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


def test_status_codes_agree():
    prog = parse("sqrt(q1) + log(u1) + 1/q2", 2).program
    X = np.array([[-1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, 1.0], [1.0, 0.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]])
    _, sa, fa = NB.eval_tape(prog, X, 1)
    _, sb, fb = NP.eval_tape(prog, X, 1)
    assert sa.tolist() == sb.tolist() == [_ops.ERR_SQRT, _ops.ERR_LOG, _ops.ERR_DIV, _ops.OK]
    assert fa[:3].tolist() == fb[:3].tolist()


def test_spray_and_rk4_agree():
    m = FinslerModel("(sqrt(u1^2 + u2^2) + 0.3*u1)^2", 2)
    X = sample_points(2, 16, 1, [-1, 1], [-1, 1])
    Fa, sa = NB.spray(m.program, X, 2)
    Fb, sb = NP.spray(m.program, X, 2)
    assert (sa == 0).all() and (sb == 0).all()
    assert np.allclose(Fa, Fb, rtol=1e-12, atol=1e-13)
    ra = NB.rk4(m.program, X[0], 0.01, 200, 2, 1e-6)
    rb = NP.rk4(m.program, X[0], 0.01, 200, 2, 1e-6)
    assert ra[1] == rb[1] == 0
    assert np.allclose(ra[0], rb[0], rtol=1e-11, atol=1e-12)


def test_rk4_slit_guard_status():
    # exact flow has u = 1/(1 + t); a guard of 0.5 trips just after t = 1
    m = FinslerModel("0.5*exp(2*q1)*u1^2", 1)
    _, status, done = NB.rk4(m.program, np.array([0.0, 1.0]), 0.1, 100, 1, 0.5)
    _, status_np, done_np = NP.rk4(m.program, np.array([0.0, 1.0]), 0.1, 100, 1, 0.5)
    assert status == status_np == _ops.ERR_SLIT
    assert done == done_np == 11


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv(_kernels.BACKEND_ENV, "numpy")
    assert _kernels.get_backend().name == "numpy"
    monkeypatch.setenv(_kernels.BACKEND_ENV, "bogus")
    with pytest.raises(ValueError):
        _kernels.get_backend()

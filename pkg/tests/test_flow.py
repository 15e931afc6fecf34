from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from finslerlab.expr import parse
from finslerlab.flow import (
    drift_report, integral_series, integrate_geodesic, involutivity_probe, along_flow_check, rk4_order_check,
    symplectic_bracket, write_csv,
)
from finslerlab.geometry import FinslerModel, PhasePoint, SlitGuardError, nabla_scalar, sample_points
from finslerlab.killing import TensorK

from conftest import point

QQ = TensorK([["q1*q1", "q1*q2"], ["q2*q1", "q2*q2"]])
BAD = TensorK([["q1^2", "0"], ["0", "q2"]])


def test_straight_line_exact(euclid2):
    tr = integrate_geodesic(euclid2, point([0, 0], [1, 2]), 1.0)
    assert np.allclose(tr.states[-1], [1, 2, 1, 2], atol=1e-13)
    assert tr.times[0] == 0.0 and tr.times[-1] == 1.0
    assert np.all(np.diff(tr.times) > 0)


def test_polar_circle_energy(polar):
    tr = integrate_geodesic(polar, point([1, 0], [0, 1]), math.pi)
    E = integral_series(polar, TensorK.multiple_of_identity(1.5, 2), tr)["E"]
    assert np.abs(E - E[0]).max() < 1e-9


def test_randers_dopri_energy(randers):
    p0 = PhasePoint.from_x(sample_points(2, 1, 9, [-1, 1], [-1, 1])[0])
    tr = integrate_geodesic(randers, p0, 10.0, "dopri", tol=1e-10)
    assert tr.method == "dopri" and tr.stats["accepted"] > 0
    rep = drift_report(randers, TensorK.multiple_of_identity(2.0, 2), tr, tol=1e-8)
    assert rep.energy_drift < 1e-8 and rep.verdict


def test_dopri_matches_rk4(polar):
    p0 = point([1, 0], [0.3, 0.8])
    a = integrate_geodesic(polar, p0, 2.0, "rk4", step=1e-3)
    b = integrate_geodesic(polar, p0, 2.0, "dopri", tol=1e-12)
    assert np.allclose(a.states[-1], b.states[-1], atol=1e-9)


def test_qq_drifts_small(euclid2):
    tr = integrate_geodesic(euclid2, point([0.3, -0.5], [0.8, 0.4]), 10.0)
    rep = drift_report(euclid2, QQ, tr, tol=1e-10)
    assert rep.verdict
    assert set(rep.integrals) == {"h_0", "h_1", "cofactor"}


def test_ci_drift_is_binomial_multiple_of_energy_drift(polar):
    n, c = 2, 1.5
    tr = integrate_geodesic(polar, point([1, 0], [0.3, 0.8]), 10.0, step=0.05)
    s = integral_series(polar, TensorK.multiple_of_identity(c, n), tr)
    dE = s["E"] - s["E"][0]
    assert np.abs(dE).max() > 0  # a coarse step so the drift is visible
    for l in range(n):
        const = (-1) ** l * math.comb(n - 1, l) * c ** l
        dh = s[f"h_{l}"] - s[f"h_{l}"][0]
        assert np.allclose(dh, const * dE, rtol=1e-9, atol=1e-15)


def test_bad_tensor_drifts(euclid2):
    tr = integrate_geodesic(euclid2, point([0.3, -0.5], [0.8, 0.4]), 10.0)
    rep = drift_report(euclid2, BAD, tr)
    assert max(v["max_abs_drift"] for v in rep.integrals.values()) > 1e-3
    assert not rep.verdict


def test_along_flow(euclid2):
    tr = integrate_geodesic(euclid2, point([0.3, -0.5], [0.8, 0.4]), 1.0)
    ci = along_flow_check(euclid2, TensorK.multiple_of_identity(2.0, 2), tr)
    assert ci["trace_power_max"] < 1e-10 and ci["quadratic_max"] < 1e-10
    good = along_flow_check(euclid2, QQ, tr)
    assert good["trace_power_max"] < 1e-6 and good["quadratic_max"] < 1e-6
    assert along_flow_check(euclid2, BAD, tr)["trace_power_max"] > 1e-3


def test_along_flow_preconditions(euclid2):
    short = integrate_geodesic(euclid2, point([0, 0], [1, 0]), 0.003)
    with pytest.raises(ValueError, match="too short"):
        along_flow_check(euclid2, QQ, short)
    coarse = integrate_geodesic(euclid2, point([0, 0], [1, 0]), 1.0, step=0.01)
    with pytest.raises(ValueError):
        along_flow_check(euclid2, QQ, coarse)


def test_rk4_order(polar):
    r = rk4_order_check(polar, point([1, 0], [0.3, 0.8]), 1.0, 0.1)
    assert r["ratio"] >= 12


@pytest.mark.parametrize("fixture", ["polar", "randers"])
def test_time_reversal(fixture, request):
    m = request.getfixturevalue(fixture)
    p0 = point([1.0, 0.2], [0.3, 0.8])
    fwd = integrate_geodesic(m, p0, 3.0)
    back = integrate_geodesic(m, point(fwd.states[-1, :2], -fwd.states[-1, 2:]), 3.0)
    end = back.states[-1]
    assert np.allclose(end[:2], p0.q, atol=1e-7) and np.allclose(end[2:], -p0.u, atol=1e-7)


def test_slit_guard_mid_flow():
    m = FinslerModel("0.5*exp(2*q1)*u1^2", 1, u_min=0.5)
    with pytest.raises(SlitGuardError):
        integrate_geodesic(m, point([0.0], [1.0]), 3.0, step=0.01)
    with pytest.raises(SlitGuardError):
        integrate_geodesic(m, point([0.0], [1.0]), 3.0, "dopri")


def test_bracket_conventions(euclid2, polar):
    p = point([0.2, 0.4], [1.0, -0.5])
    assert symplectic_bracket(euclid2, parse("u1", 2), parse("q1", 2), p) == pytest.approx(1.0)
    assert symplectic_bracket(euclid2, parse("q1", 2), parse("q2", 2), p) == pytest.approx(0.0)
    assert symplectic_bracket(polar, polar.energy, polar.energy, p) == 0.0
    X = sample_points(2, 16, 1, [0.5, 2], [-1, 1])
    f = parse("sin(q1)*u2 + q2*u1^2", 2)
    assert np.allclose(symplectic_bracket(polar, polar.energy, f, X), nabla_scalar(polar, f, X), atol=1e-12)
    fh = symplectic_bracket(polar, f, polar.energy, X)
    assert np.allclose(fh, -nabla_scalar(polar, f, X), atol=1e-12)


def test_involutivity_probe(euclid2, polar):
    X = sample_points(2, 64, 0, [-1, 1], [-1, 1])
    r = involutivity_probe(euclid2, QQ, X)
    assert max(r["energy_brackets"]) < 1e-8
    assert r["table"][0][1] < 1e-8
    assert r["antisymmetry_max"] < 1e-14
    assert "verdict" not in r
    Xp = sample_points(2, 64, 0, [[0.5, 2], [-3, 3]], [-1, 1])
    ci = involutivity_probe(polar, TensorK.multiple_of_identity(1.5, 2), Xp)
    assert ci["table"][0][1] < 1e-10


def test_csv_export(tmp_path, euclid2):
    tr = integrate_geodesic(euclid2, point([0, 0], [1, 2]), 0.01)
    path = tmp_path / "traj.csv"
    write_csv(path, euclid2, QQ, tr)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "q1", "q2", "u1", "u2", "h_0", "h_1", "cofactor", "E"]
    assert len(rows) == tr.times.size + 1
    assert float(rows[-1][0]) == 0.01

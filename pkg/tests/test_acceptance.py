"""Acceptance suite: twelve criteria, each printed as one PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or through pytest; the
summary test prints the table with output capture disabled.
"""
from __future__ import annotations

import math
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from finslerlab.autodiff import fd_crosscheck
from finslerlab.cli import load_config
from finslerlab.flow import drift_report, integrate_geodesic, involutivity_probe, along_flow_check, rk4_order_check
from finslerlab.geometry import FinslerModel, PhasePoint, canonical_residuals, local_geometry, sample_points
from finslerlab.hierarchy import charpoly_check, hierarchy_batch, shifted_family_check
from finslerlab.killing import TensorK, condition_residual, riemannian_sckt_residual
from finslerlab.presets import NEGATIVE, PASSING

ALL = PASSING + NEGATIVE


@lru_cache(maxsize=None)
def scenario(name):
    sc = load_config(preset=name)
    return sc, sc.model(), sc.tensor(), sc.sample_array()


@lru_cache(maxsize=None)
def trajectory(name):
    sc, model, K, X = scenario(name)
    p0 = PhasePoint(*map(np.asarray, sc.start)) if sc.start else PhasePoint.from_x(X[0])
    return integrate_geodesic(model, p0, 10.0, "rk4", step=1e-3)


def c1_condition():
    worst = max(condition_residual(*scenario(n)[1:]).residual_max for n in PASSING)
    bad = condition_residual(*scenario("euclid2-bad")[1:]).residual_max
    return worst < 1e-8 and bad > 1e-3, f"passing max {worst:.2e}; euclid2-bad {bad:.2e}"


def c2_closed_form():
    worst = 0.0
    for n in (2, 3, 4, 5):
        model = FinslerModel("0.5*(" + " + ".join(f"u{i + 1}^2" for i in range(n)) + ")", n)
        X = sample_points(n, 32, 0, [-1, 1], [-1, 1])
        for c in (0.5, 2.0):
            hb = hierarchy_batch(model, TensorK.multiple_of_identity(c, n), X)
            for l in range(n):
                ref = (-1) ** l * math.comb(n - 1, l) * c ** l * hb.E
                worst = max(worst, float((np.abs(hb.h[:, l] - ref) / np.abs(ref)).max()))
    return worst < 1e-12, f"max relative error {worst:.2e}"


def c3_termination():
    Bn = bn1 = hn = 0.0
    for name in PASSING:
        r = hierarchy_batch(*scenario(name)[1:]).residuals()
        Bn, bn1, hn = max(Bn, r["B_n_norm"].max()), max(bn1, r["b_n_plus_1"].max()), max(hn, r["h_n"].max())
    return Bn < 1e-10 and bn1 < 1e-12 and hn < 1e-10, f"|B_n| {Bn:.2e}, |b_n+1| {bn1:.2e}, |h_n| {hn:.2e}"


def c4_charpoly():
    worst = 0.0
    for name in PASSING:
        hb = hierarchy_batch(*scenario(name)[1:])
        worst = max(worst, max(charpoly_check(hb.K[i], hb.b[i]) for i in range(hb.K.shape[0])))
    return worst < 1e-10, f"max residual {worst:.2e} over lambda in -2..3"


def c5_cofactor():
    cof = adj = 0.0
    for name in PASSING:
        n = scenario(name)[1].dim
        hb = hierarchy_batch(*scenario(name)[1:])
        cof = max(cof, float(np.abs(hb.cofactor_integral - (-1) ** (n - 1) * 2 * hb.h[:, n - 1]).max()))
        adj = max(adj, float(hb.residuals()["adjugate_AK"].max()))
    singular = float(np.abs(np.linalg.det(hierarchy_batch(*scenario("euclid2-qq")[1:]).K)).max())
    return cof < 1e-10 and adj < 1e-10, f"cofactor {cof:.2e}, A K - det I {adj:.2e} (q(x)q det {singular:.1e})"


def c6_conservation():
    worst = 0.0
    for name in ("euclid2-qq", "euclid3-aq"):
        sc, model, K, _ = scenario(name)
        rep = drift_report(model, K, trajectory(name))
        worst = max(worst, max(v["relative_drift"] for v in rep.integrals.values()))
    sc, model, K, _ = scenario("euclid2-bad")
    bad = max(v["max_abs_drift"] for v in drift_report(model, K, trajectory("euclid2-bad")).integrals.values())
    return worst < 1e-9 and bad > 1e-3, f"max relative drift {worst:.2e}; euclid2-bad drift {bad:.2e}"


def c7_riemannian_route():
    ok, mism = True, 0.0
    for name in ("euclid2-qq", "euclid3-aq", "euclid2-bad"):
        _, model, K, X = scenario(name)
        r = riemannian_sckt_residual(model, K, X)
        c = condition_residual(model, K, X)
        ok &= r.verdict == c.verdict
        mism = max(mism, r.contraction_mismatch)
    return ok and mism < 1e-10, f"verdicts agree: {ok}; contraction mismatch {mism:.2e}"


def c8_canonical():
    worst = 0.0
    for name in ALL:
        _, model, _, X = scenario(name)
        worst = max(worst, max(float(v.max()) for v in canonical_residuals(local_geometry(model, X)).values()))
    return worst < 1e-8, f"max residual {worst:.2e}"


def c9_along_flow():
    worst = 0.0
    for name in PASSING:
        _, model, K, _ = scenario(name)
        r = along_flow_check(model, K, trajectory(name))
        worst = max(worst, r["trace_power_max"], r["quadratic_max"])
    _, model, K, _ = scenario("euclid2-bad")
    bad = along_flow_check(model, K, trajectory("euclid2-bad"))["trace_power_max"]
    return worst < 1e-6 and bad > 1e-3, f"passing max {worst:.2e}; euclid2-bad {bad:.2e}"


def c10_ad_integrity():
    worst = 0.0
    rng = np.random.default_rng(0)
    for name in ALL:
        sc, model, _, _ = scenario(name)
        n = model.dim
        X = sample_points(n, 100, 1, sc.samples["q_box"], sc.samples["u_box"], sc.samples["u_min_norm"])
        for x in X:
            for order in (1, 2, 3):
                for _ in range(2):
                    idx = [int(i) for i in rng.integers(0, 2 * n, size=order)]
                    ad, fd = fd_crosscheck(model.energy, x, idx)
                    worst = max(worst, abs(ad - fd) / max(1.0, abs(ad)))
    ratio = rk4_order_check(scenario("polar2-ci")[1], PhasePoint(np.array([1.0, 0.0]), np.array([0.3, 0.8])))["ratio"]
    return worst < 1e-6 and ratio >= 12, f"max fd discrepancy {worst:.2e}; RK4 halving ratio {ratio:.1f}"


def c11_brackets():
    energy = anti = 0.0
    emitted = True
    for name in PASSING:
        _, model, K, X = scenario(name)
        r = involutivity_probe(model, K, X)
        energy = max(energy, max(r["energy_brackets"]))
        anti = max(anti, r["antisymmetry_max"])
        emitted &= "verdict" not in r and len(r["table"]) == model.dim
    return energy < 1e-8 and anti < 1e-12 and emitted, f"max |{{E,h_l}}| {energy:.2e}; antisymmetry {anti:.2e}"


def c12_shift():
    shift_ok, drift_alpha, fit = True, 0.0, 0.0
    for name in PASSING:
        _, model, K, X = scenario(name)
        base = condition_residual(model, K, X)
        for s in (-1.0, 0.5, 2.0):
            r = condition_residual(model, K.shifted(s), X)
            shift_ok &= r.verdict
            drift_alpha = max(drift_alpha, float(np.abs(r.alpha_samples - base.alpha_samples).max()))
        for x in X[:16]:
            fit = max(fit, shifted_family_check(model, K, PhasePoint.from_x(x))["max_residual"])
    ok = shift_ok and drift_alpha < 1e-8 and fit < 1e-9
    return ok, f"K+sI pass: {shift_ok}; alpha change {drift_alpha:.2e}; fit residual {fit:.2e}"


CRITERIA = [
    (1, "condition certification", c1_condition),
    (2, "closed-form hierarchy for K = cI", c2_closed_form),
    (3, "termination identities", c3_termination),
    (4, "characteristic polynomial", c4_charpoly),
    (5, "cofactor identity and adjugate", c5_cofactor),
    (6, "conservation along RK4 flow", c6_conservation),
    (7, "Christoffel route vs condition residual", c7_riemannian_route),
    (8, "canonical identities", c8_canonical),
    (9, "along-flow derivative identities", c9_along_flow),
    (10, "derivative cross-checks and RK4 order", c10_ad_integrity),
    (11, "bracket probe", c11_brackets),
    (12, "shifted family", c12_shift),
]

_results: dict[int, tuple[bool, str, float]] = {}


def _run(num, fn):
    if num not in _results:
        t0 = time.perf_counter()
        ok, detail = fn()
        _results[num] = (bool(ok), detail, time.perf_counter() - t0)
    return _results[num]


def _line(num, title):
    ok, detail, dt = _results[num]
    return f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} ({dt:.1f}s)"


@pytest.mark.parametrize("num,title,fn", CRITERIA, ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(num, title, fn):
    ok, detail, _ = _run(num, fn)
    print(_line(num, title))
    assert ok, detail


def test_summary(capsys):
    for num, _, fn in CRITERIA:
        _run(num, fn)
    with capsys.disabled():
        print()
        for num, title, _ in CRITERIA:
            print(_line(num, title))
    assert all(r[0] for r in _results.values())


if __name__ == "__main__":
    failed = 0
    for num, title, fn in CRITERIA:
        _run(num, fn)
        print(_line(num, title), flush=True)
        failed += not _results[num][0]
    sys.exit(1 if failed else 0)

"""Geodesic integration, conservation drift and the Poisson-bracket probe.

The bracket uses the symplectic form ``omega_E = d theta_E`` with
``theta_E = dE/du^i dq^i``.  Hamiltonian vector fields satisfy
``X_f -| omega = df`` and ``{f, h} = omega(X_f, X_h)``; with this convention
``{E, f}`` equals the spray derivative of ``f``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import _ops
from .expr import Expression
from .geometry import (
    DegenerateMetricError, FinslerModel, LocalGeometry, PhasePoint, SlitGuardError, as_batch,
    check_slit, local_geometry,
)
from .hierarchy import hierarchy_batch, hierarchy_gradients
from .killing import TensorK, alpha_batch


class IntegrationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (T, 2n): q then u
    method: str
    stats: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.states.shape[1] // 2

    @property
    def final(self) -> PhasePoint:
        return PhasePoint.from_x(self.states[-1])

    def points(self) -> list[PhasePoint]:
        return [PhasePoint.from_x(x) for x in self.states]


def _raise_status(status: int, t: float):
    text = _ops.STATUS_TEXT.get(status, f"status {status}")
    if status == _ops.ERR_SLIT:
        raise SlitGuardError(f"{text} at t={t:.6g}")
    if status == _ops.ERR_SINGULAR:
        raise DegenerateMetricError(f"{text} at t={t:.6g}")
    raise IntegrationError(f"{text} at t={t:.6g}")


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dopri(model: FinslerModel, x0: np.ndarray, t_end: float, tol: float, h0: float, backend) -> Trajectory:
    n = model.dim
    prog = model.program

    def f(x):
        F, st = backend.spray(prog, x[None, :], n)
        if st[0] != _ops.OK:
            _raise_status(int(st[0]), t)
        return np.concatenate([x[n:], F[0]])

    t, x = 0.0, x0.copy()
    h = min(h0, t_end)
    times, states = [0.0], [x.copy()]
    accepted = rejected = 0
    h_min, h_max = math.inf, 0.0
    k = np.zeros((7, 2 * n))
    k[0] = f(x)
    while t < t_end:
        h = min(h, t_end - t)
        for s in range(1, 7):
            k[s] = f(x + h * (np.array(_A[s]) @ k[:s]))
        x5 = x + h * (_B5 @ k)
        err_vec = h * ((_B5 - _B4) @ k)
        scale = tol + tol * np.maximum(np.abs(x), np.abs(x5))
        err = float(np.max(np.abs(err_vec) / scale))
        if err <= 1.0:
            t = t_end if t + h >= t_end * (1 - 1e-15) else t + h
            x = x5
            k[0] = k[6]
            accepted += 1
            h_min, h_max = min(h_min, h), max(h_max, h)
            times.append(t)
            states.append(x.copy())
            if np.linalg.norm(x[n:]) < model.u_min:
                _raise_status(_ops.ERR_SLIT, t)
        else:
            rejected += 1
        factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h *= factor
        if h < 1e-14 * max(1.0, t_end):
            raise IntegrationError(f"step size underflow at t={t:.6g}")
    return Trajectory(
        times=np.array(times), states=np.array(states), method="dopri",
        stats={"accepted": accepted, "rejected": rejected, "h_min": h_min, "h_max": h_max, "tol": tol},
    )


def integrate_geodesic(model: FinslerModel, p0: PhasePoint, t_end: float, method: str = "rk4",
                       step: float = 1e-3, tol: float = 1e-10, backend=None) -> Trajectory:
    """Integrate ``q' = u, u' = F(q, u)`` from ``p0`` to ``t_end``.

    ``rk4`` uses a uniform step no larger than ``step``; ``dopri`` adapts the
    step so the embedded error estimate stays below ``tol`` (mixed abs/rel).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    be = backend or _kernels.get_backend()
    x0 = p0.x.astype(float)
    check_slit(model, x0[None, model.dim:])
    if method == "rk4":
        nsteps = max(1, int(math.ceil(t_end / step - 1e-9)))
        h = t_end / nsteps
        states, status, done = be.rk4(model.program, x0, h, nsteps, model.dim, model.u_min)
        if status != _ops.OK:
            _raise_status(int(status), done * h)
        times = np.arange(nsteps + 1) * h
        times[-1] = t_end
        return Trajectory(times=times, states=states, method="rk4",
                          stats={"steps": nsteps, "h": h, "backend": be.name})
    if method == "dopri":
        return _dopri(model, x0, float(t_end), float(tol), min(step, t_end), be)
    raise ValueError(f"unknown method {method!r}")


def integral_series(model: FinslerModel, K: TensorK, traj: Trajectory) -> dict[str, np.ndarray]:
    """``h_0..h_{n-1}``, the cofactor integral and ``E`` at every stored state."""
    hb = hierarchy_batch(model, K, traj.states)
    n = model.dim
    out = {f"h_{l}": hb.h[:, l] for l in range(n)}
    out["cofactor"] = hb.cofactor_integral
    out["E"] = hb.E
    return out


@dataclass
class DriftReport:
    integrals: dict  # name -> {"initial", "max_abs_drift", "relative_drift"}
    energy_drift: float
    tolerance: float
    energy_tolerance: float

    @property
    def verdict(self) -> bool:
        return self.energy_drift <= self.energy_tolerance and all(
            v["relative_drift"] <= self.tolerance for v in self.integrals.values()
        )

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.verdict else "fail",
            "tolerance": self.tolerance,
            "energy_drift": self.energy_drift,
            "integrals": self.integrals,
        }


def _drift(values: np.ndarray) -> dict:
    v0 = float(values[0])
    dmax = float(np.abs(values - v0).max())
    return {"initial": v0, "max_abs_drift": dmax, "relative_drift": dmax / max(1.0, abs(v0))}


def drift_report(model: FinslerModel, K: TensorK, traj: Trajectory, tol: float = 1e-9,
                 energy_tol: float | None = None) -> DriftReport:
    series = integral_series(model, K, traj)
    energy = _drift(series.pop("E"))
    return DriftReport(
        integrals={name: _drift(v) for name, v in series.items()},
        energy_drift=energy["relative_drift"],
        tolerance=tol,
        energy_tolerance=tol if energy_tol is None else energy_tol,
    )


def _central4(f: np.ndarray, h: float) -> np.ndarray:
    return (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)


def along_flow_check(model: FinslerModel, K: TensorK, traj: Trajectory) -> dict:
    """Compare d a_j/dt and d k_j/dt along the flow with ``alpha(K^(j-1) T)`` and ``sum (nabla a_i) k_{j-i}``.

    The trace of ``nabla K^j`` gives ``nabla a_j = alpha(K^(j-1) T)``; at ``j = 1``
    this is ``alpha(T) = nabla tr K``.

    Discrepancies are normalized per ``j`` by ``max(1, max|derivative|)``.
    """
    T = traj.times.size
    if T < 5:
        raise ValueError("trajectory too short: need at least 5 states")
    dt = np.diff(traj.times)
    h = float(dt.mean())
    if np.abs(dt - h).max() > 1e-9 * h:
        raise ValueError("along_flow_check needs a uniform step")
    if h > 1e-3 * (1 + 1e-9):
        raise ValueError("along_flow_check needs a step <= 1e-3")
    n = model.dim
    lg = local_geometry(model, traj.states, order=3)
    alpha, _, _ = alpha_batch(model, K, None, lg=lg)
    hb = hierarchy_batch(model, K, None, lg=lg)
    nabla_a = np.stack(
        [np.einsum("pi,pij,pj->p", alpha, hb.powers[:, j - 1], lg.u) if j else lg.E * 0
         for j in range(n + 1)], axis=1
    )  # nabla_a[:, j] = alpha(K^(j-1) T); column 0 unused
    trace_power, quadratic = [], []
    for j in range(1, n + 1):
        fd_a = _central4(hb.a[:, j], h)
        rhs_a = nabla_a[2:-2, j]
        trace_power.append(float(np.abs(fd_a - rhs_a).max() / max(1.0, np.abs(fd_a).max(), np.abs(rhs_a).max())))
        fd_k = _central4(hb.k[:, j], h)
        rhs_k = sum(nabla_a[2:-2, i] * hb.k[2:-2, j - i] for i in range(1, j + 1))
        quadratic.append(float(np.abs(fd_k - rhs_k).max() / max(1.0, np.abs(fd_k).max(), np.abs(rhs_k).max())))
    return {
        "trace_power": trace_power, "quadratic": quadratic,
        "trace_power_max": max(trace_power), "quadratic_max": max(quadratic),
    }


def symplectic_matrix(lg: LocalGeometry) -> np.ndarray:
    """``W[a, b] = omega(d/dx^a, d/dx^b)`` for ``x = (q, u)``."""
    n = lg.n
    P = lg.q.shape[0]
    M = lg.d2E[:, :n, n:]  # d2E/dq^a du^b
    W = np.zeros((P, 2 * n, 2 * n))
    W[:, :n, :n] = M - np.swapaxes(M, 1, 2)
    W[:, n:, :n] = lg.g
    W[:, :n, n:] = -np.swapaxes(lg.g, 1, 2)
    return W


def bracket_from_gradients(W: np.ndarray, df: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """``{f, h} = df . X_h`` with ``W^T X_h = dh``; ``df, dh`` of shape ``(P, 2n)``."""
    Xh = np.linalg.solve(np.swapaxes(W, 1, 2), dh[..., None])[..., 0]
    return np.einsum("pa,pa->p", df, Xh)


def _check_omega(W: np.ndarray):
    cond = np.linalg.cond(W)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e14:
        raise DegenerateMetricError("omega_E is singular at a sample point")


def symplectic_bracket(model: FinslerModel, f: Expression, h: Expression, p) -> float | np.ndarray:
    lg = local_geometry(model, p, order=2)
    W = symplectic_matrix(lg)
    _check_omega(W)
    df = f.program.run(lg.x, 1)[:, 0, 1:]
    dh = h.program.run(lg.x, 1)[:, 0, 1:]
    out = bracket_from_gradients(W, df, dh)
    return float(out[0]) if isinstance(p, PhasePoint) else out


def involutivity_probe(model: FinslerModel, K: TensorK, samples) -> dict:
    """Magnitudes of ``{h_i, h_j}``; reported only, the hierarchy is not known to be in involution."""
    n = model.dim
    grads = hierarchy_gradients(model, K, samples)
    lg = grads["lg"]
    W = symplectic_matrix(lg)
    _check_omega(W)
    dh = grads["h"]
    table = [[None] * n for _ in range(n)]
    antisym = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            bij = bracket_from_gradients(W, dh[:, i], dh[:, j])
            bji = bracket_from_gradients(W, dh[:, j], dh[:, i])
            antisym = max(antisym, float(np.abs(bij + bji).max()))
            table[i][j] = table[j][i] = float(np.abs(bij).max())
    energy = []
    spray_mismatch = 0.0
    for l in range(n):
        b = bracket_from_gradients(W, lg.dE, dh[:, l])
        energy.append(float(np.abs(b).max()))
        spray_mismatch = max(spray_mismatch, float(np.abs(b - lg.along_spray(dh[:, l])).max()))
    return {
        "table": table,
        "energy_brackets": energy,
        "antisymmetry_max": antisym,
        "energy_bracket_vs_spray": spray_mismatch,
        "note": "involutivity of the hierarchy is an open question; magnitudes are reported without a verdict",
    }


def rk4_order_check(model: FinslerModel, p0: PhasePoint, t_end: float = 1.0, step: float = 0.1,
                    backend=None) -> dict:
    """Max energy drift with ``step`` and ``step/2``, and their ratio (about 16 for RK4)."""
    drifts = []
    for h in (step, step / 2):
        traj = integrate_geodesic(model, p0, t_end, "rk4", step=h, backend=backend)
        E = local_geometry(model, traj.states, order=2).E
        drifts.append(float(np.abs(E - E[0]).max()))
    return {"drift_h": drifts[0], "drift_h_half": drifts[1], "ratio": drifts[0] / drifts[1]}


def write_csv(path, model: FinslerModel, K: TensorK, traj: Trajectory) -> None:
    n = model.dim
    series = integral_series(model, K, traj)
    cols = [f"h_{l}" for l in range(n)] + ["cofactor", "E"]
    header = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(n)] + cols
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [t, *traj.states[i], *(series[c][i] for c in cols)]
            w.writerow([repr(float(v)) for v in row])

"""Finsler metric, geodesic spray, nonlinear connection and the dynamical covariant derivative.

Everything is derived from the energy ``E(q, u)`` through its order-3 jet.
Coordinates are ordered ``x = (q1..qn, u1..un)``.  Matrix conventions:

* ``g[i, j] = d2E/du_i du_j``
* ``Gamma[j, i]`` is the connection coefficient with upper index ``j``,
  ``-1/2 dF^j/du^i``
* a (1,1) tensor ``K[i, j]`` has upper index ``i`` (row), lower ``j``.

All functions accept batches: ``q`` and ``u`` of shape ``(P, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels._numpy_impl import lu_solve_batch
from .autodiff import MAX_DIM, derivative_tensors
from .expr import Expression, parse

U_MIN = 1e-6
COND_MAX = 1e12


class ModelError(ValueError):
    """The energy does not define a usable Finsler model."""


class DegenerateMetricError(ModelError):
    pass


class SlitGuardError(ValueError):
    """A point lies within ``u_min`` of the zero section."""


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).ravel())
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).ravel())
        if self.q.shape != self.u.shape:
            raise ValueError("q and u must have the same length")

    @property
    def dim(self) -> int:
        return self.q.size

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.u])

    @classmethod
    def from_x(cls, x) -> "PhasePoint":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size // 2
        return cls(x[:n], x[n:])


class FinslerModel:
    """Dimension plus energy expression; geometry is derived on demand."""

    def __init__(self, energy: Expression | str, dim: int | None = None, u_min: float = U_MIN,
                 family: str = "custom"):
        if isinstance(energy, str):
            if dim is None:
                raise ValueError("dim is required when energy is given as text")
            energy = parse(energy, dim)
        if dim is not None and energy.dim != dim:
            raise ValueError("energy dimension does not match dim")
        if energy.dim > MAX_DIM:
            raise ModelError(f"dimension {energy.dim} exceeds the supported maximum {MAX_DIM}")
        self.energy = energy
        self.dim = energy.dim
        self.u_min = float(u_min)
        self.family = family

    @property
    def program(self):
        return self.energy.program

    def __repr__(self):
        return f"FinslerModel(dim={self.dim}, energy='{self.energy}', family={self.family!r})"


def as_batch(points, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Accept a PhasePoint, a list of them, or an array ``(P, 2n)``; return ``q, u`` of shape ``(P, n)``."""
    if isinstance(points, PhasePoint):
        points = [points]
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], PhasePoint):
        X = np.array([p.x for p in points])
    else:
        X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[1] != 2 * n:
        raise ValueError(f"points have {X.shape[1]} coordinates, expected {2 * n}")
    return X[:, :n], X[:, n:]


@dataclass
class LocalGeometry:
    """Batched geometric data at ``P`` points.  ``Gamma`` and ``d3E`` need order 3."""

    q: np.ndarray
    u: np.ndarray
    E: np.ndarray
    dE: np.ndarray
    d2E: np.ndarray
    d3E: np.ndarray | None
    g: np.ndarray
    g_inv: np.ndarray
    F: np.ndarray
    theta: np.ndarray
    dF_du: np.ndarray | None = None  # dF_du[p, j, i] = dF^j/du^i
    Gamma: np.ndarray | None = None
    cond: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.u], axis=1)

    def spray_field(self) -> np.ndarray:
        """Components ``(u, F)`` of the spray, shape ``(P, 2n)``."""
        return np.concatenate([self.u, self.F], axis=1)

    def along_spray(self, grad: np.ndarray) -> np.ndarray:
        """Apply the spray to functions given by gradients ``(P, ..., 2n)``."""
        return np.einsum("p...k,pk->p...", grad, self.spray_field())


def check_slit(model: FinslerModel, u: np.ndarray):
    norms = np.linalg.norm(u, axis=1)
    bad = np.flatnonzero(norms < model.u_min)
    if bad.size:
        raise SlitGuardError(f"|u| = {norms[bad[0]]:.3g} below slit guard u_min = {model.u_min:g}")


def local_geometry(model: FinslerModel, points, order: int = 3) -> LocalGeometry:
    n = model.dim
    q, u = as_batch(points, n)
    check_slit(model, u)
    X = np.concatenate([q, u], axis=1)
    jets = model.program.run(X, order)[:, 0, :]
    E, dE, d2E, d3E = derivative_tensors(jets, 2 * n, order)
    g = d2E[:, n:, n:]
    scale = np.abs(g).max(axis=(1, 2))
    det = np.linalg.det(g)
    bad = np.flatnonzero(~(np.abs(det) > 1e-14 * np.maximum(scale, 1e-300) ** n))
    if bad.size:
        raise DegenerateMetricError(f"singular metric at q={q[bad[0]]}, u={u[bad[0]]}")
    r = dE[:, :n] - np.einsum("pjk,pk->pj", d2E[:, n:, :n], u)
    F, ok = lu_solve_batch(g, r)
    if not ok.all():
        p = np.flatnonzero(~ok)[0]
        raise DegenerateMetricError(f"singular metric at q={q[p]}, u={u[p]}")
    g_inv = np.linalg.inv(g)
    theta = dE[:, n:]
    lg = LocalGeometry(q=q, u=u, E=E, dE=dE, d2E=d2E, d3E=d3E, g=g, g_inv=g_inv, F=F,
                       theta=theta, cond=np.linalg.cond(g))
    if order >= 3:
        # d r_j/du_i and d g_jk/du_i, then dF/du_i = g^-1 (dr/du_i - dg/du_i F)
        dr = d2E[:, :n, n:] - np.einsum("pjki,pk->pji", d3E[:, n:, :n, n:], u) - d2E[:, n:, :n]
        dg = d3E[:, n:, n:, n:]
        rhs = dr - np.einsum("pjki,pk->pji", dg, F)
        lg.dF_du = np.linalg.solve(g, rhs)
        lg.Gamma = -0.5 * lg.dF_du
    return lg


@dataclass(frozen=True)
class GeometryAtPoint:
    g: np.ndarray
    g_inv: np.ndarray
    F_spray: np.ndarray
    Gamma: np.ndarray
    theta: np.ndarray
    E: float
    cond: float


def geometry_at(model: FinslerModel, p: PhasePoint) -> GeometryAtPoint:
    lg = local_geometry(model, p, order=3)
    return GeometryAtPoint(g=lg.g[0], g_inv=lg.g_inv[0], F_spray=lg.F[0], Gamma=lg.Gamma[0],
                           theta=lg.theta[0], E=float(lg.E[0]), cond=float(lg.cond[0]))


def metric_at(model: FinslerModel, p: PhasePoint) -> np.ndarray:
    return local_geometry(model, p, order=2).g[0]


def spray_at(model: FinslerModel, p: PhasePoint) -> np.ndarray:
    return local_geometry(model, p, order=2).F[0]


def connection_at(model: FinslerModel, p: PhasePoint) -> np.ndarray:
    return local_geometry(model, p, order=3).Gamma[0]


def nabla_scalar(model: FinslerModel, f: Expression, p) -> float | np.ndarray:
    """``u^i df/dq^i + F^i df/du^i``; returns a float for a single point."""
    lg = local_geometry(model, p, order=2)
    grad = f.program.run(lg.x, 1)[:, 0, 1:]
    out = lg.along_spray(grad)
    return float(out[0]) if isinstance(p, PhasePoint) else out


def horizontal_derivative(model: FinslerModel, f: Expression, p) -> np.ndarray:
    """``d^h f`` components ``H_i(f) = df/dq^i - Gamma^j_i df/du^j``."""
    lg = local_geometry(model, p, order=3)
    n = model.dim
    grad = f.program.run(lg.x, 1)[:, 0, 1:]
    out = grad[:, :n] - np.einsum("pji,pj->pi", lg.Gamma, grad[:, n:])
    return out[0] if isinstance(p, PhasePoint) else out


def nabla_tensor_dual(lg: LocalGeometry, Kd: np.ndarray) -> np.ndarray:
    """``(nabla K)^i_j = Gamma(K^i_j) + Gamma^i_m K^m_j - K^i_m Gamma^m_j`` from dual entries ``(P, n, n, 1+2n)``."""
    K = Kd[..., 0]
    return lg.along_spray(Kd[..., 1:]) + lg.Gamma @ K - K @ lg.Gamma


def nabla_tensor(model: FinslerModel, K, p) -> np.ndarray:
    lg = local_geometry(model, p, order=3)
    out = nabla_tensor_dual(lg, K.dual(lg.x))
    return out[0] if isinstance(p, PhasePoint) else out


def canonical_residuals(lg: LocalGeometry) -> dict[str, np.ndarray]:
    """Per-point residuals of nabla g, nabla T, nabla E, nabla theta_E and d^h E."""
    n = lg.n
    u, F, G, g = lg.u, lg.F, lg.Gamma, lg.g
    d2E, d3E = lg.d2E, lg.d3E
    gamma_g = np.einsum("pijk,pk->pij", d3E[:, n:, n:, :n], u) + np.einsum("pijk,pk->pij", d3E[:, n:, n:, n:], F)
    nabla_g = gamma_g - np.swapaxes(G, 1, 2) @ g - g @ G
    nabla_T = F + np.einsum("pji,pi->pj", G, u)
    nabla_E = np.einsum("pk,pk->p", lg.dE[:, :n], u) + np.einsum("pk,pk->p", lg.dE[:, n:], F)
    gamma_theta = np.einsum("pik,pk->pi", d2E[:, n:, :n], u) + np.einsum("pik,pk->pi", d2E[:, n:, n:], F)
    nabla_theta = gamma_theta - np.einsum("pki,pk->pi", G, lg.theta)
    dh_E = lg.dE[:, :n] - np.einsum("pji,pj->pi", G, lg.dE[:, n:])
    return {
        "nabla_g": np.abs(nabla_g).max(axis=(1, 2)),
        "nabla_T": np.abs(nabla_T).max(axis=1),
        "nabla_E": np.abs(nabla_E),
        "nabla_theta": np.abs(nabla_theta).max(axis=1),
        "dh_E": np.abs(dh_E).max(axis=1),
    }


def canonical_checks(model: FinslerModel, samples) -> dict[str, float]:
    """Max absolute residuals of the canonical identities over the samples."""
    lg = local_geometry(model, samples, order=3)
    return {k: float(v.max()) for k, v in canonical_residuals(lg).items()}


def validate_model(model: FinslerModel, samples, rtol: float = 1e-10) -> dict[str, float]:
    """Check Euler homogeneity, ``E = g(T,T)/2`` and metric conditioning; raise :class:`ModelError` on failure."""
    lg = local_geometry(model, samples, order=2)
    scale = np.maximum(1.0, np.abs(lg.E))
    euler = np.abs(np.einsum("pi,pi->p", lg.u, lg.theta) - 2 * lg.E) / scale
    quad = np.abs(0.5 * np.einsum("pi,pij,pj->p", lg.u, lg.g, lg.u) - lg.E) / scale
    asym = np.abs(lg.g - np.swapaxes(lg.g, 1, 2)).max(axis=(1, 2))
    report = {
        "euler_homogeneity": float(euler.max()),
        "energy_quadratic_form": float(quad.max()),
        "metric_asymmetry": float(asym.max()),
        "max_condition_number": float(lg.cond.max()),
    }
    if report["euler_homogeneity"] > rtol:
        raise ModelError(f"energy is not homogeneous of degree 2 in u (residual {report['euler_homogeneity']:.3g})")
    if report["energy_quadratic_form"] > rtol:
        raise ModelError(f"E differs from g(T,T)/2 (residual {report['energy_quadratic_form']:.3g})")
    if report["max_condition_number"] > COND_MAX:
        raise DegenerateMetricError(f"metric condition number {report['max_condition_number']:.3g} exceeds {COND_MAX:g}")
    return report


def sample_points(n: int, count: int, seed: int, q_box, u_box, u_min_norm: float = 0.1) -> np.ndarray:
    """Seeded uniform draws ``(count, 2n)`` from the boxes, rejecting ``|u| < u_min_norm``."""
    q_box = np.broadcast_to(np.asarray(q_box, dtype=float), (n, 2))
    u_box = np.broadcast_to(np.asarray(u_box, dtype=float), (n, 2))
    rng = np.random.default_rng(seed)
    rows = []
    while len(rows) < count:
        q = rng.uniform(q_box[:, 0], q_box[:, 1])
        u = rng.uniform(u_box[:, 0], u_box[:, 1])
        if np.linalg.norm(u) >= u_min_norm:
            rows.append(np.concatenate([q, u]))
    return np.array(rows)

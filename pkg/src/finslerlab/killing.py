"""Certification of candidate tensors K against the fundamental condition

    nabla K = 1/2 (T (x) alpha - X_alpha (x) theta_E),   X_alpha -| g = -alpha,

plus the classical Riemannian checks (special conformal Killing condition via
Christoffel symbols, Nijenhuis torsion).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import BinOp, Expression, Neg, Num, compile_many, parse
from .geometry import (
    FinslerModel, LocalGeometry, ModelError, PhasePoint, SlitGuardError, local_geometry,
    nabla_tensor_dual,
)

DEFAULT_TOL = 1e-8


class TensorK:
    """(1,1) tensor field along the projection; ``entries[i][j]`` is ``K^i_j``."""

    def __init__(self, entries, dim: int | None = None):
        rows = [list(r) for r in entries]
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise ValueError("K must be a non-empty square array of expressions")
        dim = n if dim is None else dim
        if dim != n:
            raise ValueError(f"K is {n}x{n} but dimension is {dim}")
        self.entries = [[e if isinstance(e, Expression) else parse(str(e), n) for e in r] for r in rows]
        if any(e.dim != n for r in self.entries for e in r):
            raise ValueError("K entries must share the tensor dimension")
        self.dim = n
        self.program = compile_many([e for r in self.entries for e in r])

    @classmethod
    def multiple_of_identity(cls, c: float, n: int) -> "TensorK":
        return cls([[repr(float(c)) if i == j else "0" for j in range(n)] for i in range(n)])

    @property
    def depends_on_u(self) -> bool:
        return any(e.depends_on_u for r in self.entries for e in r)

    def sources(self) -> list[list[str]]:
        return [[str(e) for e in r] for r in self.entries]

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        n = self.dim
        return self.program.run(X, 0)[:, :, 0].reshape(-1, n, n)

    def dual(self, X) -> np.ndarray:
        """Entries with their gradients, shape ``(P, n, n, 1 + 2n)``."""
        X = np.atleast_2d(X)
        n = self.dim
        return self.program.run(X, 1).reshape(X.shape[0], n, n, 1 + 2 * n)

    def shifted(self, s: float) -> "TensorK":
        """``K + s I``."""
        s = float(s)
        const = Num(abs(s))
        rows = []
        for i, r in enumerate(self.entries):
            row = []
            for j, e in enumerate(r):
                if i == j and s != 0.0:
                    root = BinOp("+" if s > 0 else "-", e.root, const)
                    row.append(Expression(root, self.dim))
                else:
                    row.append(e)
            rows.append(row)
        return TensorK(rows)

    def __repr__(self):
        return f"TensorK({self.sources()})"


def _alpha(lg: LocalGeometry, nK: np.ndarray) -> np.ndarray:
    if np.any(lg.E <= 0.5 * 1e-12):
        raise SlitGuardError("energy too small for alpha extraction")
    tr = np.trace(nK, axis1=1, axis2=2)
    return (np.einsum("pi,pij->pj", lg.theta, nK) - 0.5 * tr[:, None] * lg.theta) / lg.E[:, None]


def alpha_batch(model: FinslerModel, K: TensorK, points, lg: LocalGeometry | None = None):
    """``(alpha, nabla K, local geometry)`` at every point."""
    lg = lg or local_geometry(model, points, order=3)
    nK = nabla_tensor_dual(lg, K.dual(lg.x))
    return _alpha(lg, nK), nK, lg


def extract_alpha(model: FinslerModel, K: TensorK, p: PhasePoint) -> np.ndarray:
    return alpha_batch(model, K, p)[0][0]


def condition_terms(lg: LocalGeometry, alpha: np.ndarray) -> np.ndarray:
    """Right side ``1/2 (u^i alpha_j + g^ik alpha_k theta_j)``."""
    X = np.einsum("pik,pk->pi", lg.g_inv, alpha)
    return 0.5 * (lg.u[:, :, None] * alpha[:, None, :] + X[:, :, None] * lg.theta[:, None, :])


@dataclass
class ConditionReport:
    alpha_samples: np.ndarray
    residual_max: float
    symmetry_max: float
    trace_identity_max: float
    tolerance: float
    residuals: np.ndarray = field(repr=False)
    u_degree_profile: list = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return max(self.residual_max, self.symmetry_max, self.trace_identity_max) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.verdict else "fail",
            "tolerance": self.tolerance,
            "residual_max": self.residual_max,
            "symmetry_max": self.symmetry_max,
            "trace_identity_max": self.trace_identity_max,
            "u_degree_profile": self.u_degree_profile,
            "alpha_samples": self.alpha_samples.tolist(),
        }


def _u_degree_profile(K: TensorK, X: np.ndarray) -> list:
    # informational: estimated homogeneity degree in u per entry (None: zero or not homogeneous)
    n = K.dim
    X2 = X.copy()
    X2[:, n:] *= 2.0
    v1, v2 = K.values(X), K.values(X2)
    profile = []
    for i in range(n):
        row = []
        for j in range(n):
            a, b = v1[:, i, j], v2[:, i, j]
            keep = (np.abs(a) > 1e-12) & (np.abs(b) > 1e-12) & (np.sign(a) == np.sign(b))
            if not keep.any():
                row.append(None)
                continue
            deg = np.log2(b[keep] / a[keep])
            row.append(round(float(np.median(deg)), 6) if np.ptp(deg) < 1e-6 else None)
        profile.append(row)
    return profile


def condition_residual(model: FinslerModel, K: TensorK, samples, tol: float = DEFAULT_TOL) -> ConditionReport:
    alpha, nK, lg = alpha_batch(model, K, samples)
    R = nK - condition_terms(lg, alpha)
    res = np.linalg.norm(R, axis=(1, 2)) / np.maximum(1.0, np.linalg.norm(nK, axis=(1, 2)))
    gK = lg.g @ K.values(lg.x)
    sym = np.linalg.norm(gK - np.swapaxes(gK, 1, 2), axis=(1, 2)) / np.maximum(1.0, np.linalg.norm(gK, axis=(1, 2)))
    tr = np.trace(nK, axis1=1, axis2=2)
    trace_id = np.abs(np.einsum("pi,pi->p", alpha, lg.u) - tr) / np.maximum(1.0, np.abs(tr))
    return ConditionReport(
        alpha_samples=alpha,
        residual_max=float(res.max()),
        symmetry_max=float(sym.max()),
        trace_identity_max=float(trace_id.max()),
        tolerance=tol,
        residuals=res,
        u_degree_profile=_u_degree_profile(K, lg.x),
    )


def is_quadratic(model: FinslerModel, samples, atol: float = 1e-10) -> bool:
    lg = local_geometry(model, samples, order=3)
    n = model.dim
    return float(np.abs(lg.d3E[:, n:, n:, n:]).max()) <= atol * max(1.0, float(np.abs(lg.g).max()))


@dataclass
class RiemannianReport:
    residual_max: float  # special conformal Killing condition via Christoffel symbols
    contraction_mismatch: float  # |g^-1 (D.u) - (nabla J - 1/2(T(x)df - X_df(x)theta))|
    delj_residual_max: float
    tolerance: float

    @property
    def verdict(self) -> bool:
        return self.residual_max <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.verdict else "fail",
            "tolerance": self.tolerance,
            "residual_max": self.residual_max,
            "delJ_residual_max": self.delj_residual_max,
            "contraction_mismatch": self.contraction_mismatch,
        }


def christoffel(lg: LocalGeometry) -> np.ndarray:
    """``Gam[p, l, i, j]`` = Levi-Civita symbols of the (u-independent) metric."""
    n = lg.n
    dg = lg.d3E[:, n:, n:, :n]  # dg[p, i, j, k] = d g_ij / dq^k
    low = 0.5 * (np.einsum("pmij->pmij", dg) + np.einsum("pmji->pmij", dg) - np.einsum("pijm->pmij", dg))
    return np.einsum("plm,pmij->plij", lg.g_inv, low)


def riemannian_sckt_residual(model: FinslerModel, J: TensorK, samples, tol: float = DEFAULT_TOL) -> RiemannianReport:
    if J.depends_on_u:
        raise ValueError("J must not depend on u")
    if not is_quadratic(model, samples):
        raise ModelError("energy is not quadratic in u")
    n = model.dim
    lg = local_geometry(model, samples, order=3)
    Jd = J.dual(lg.x)
    Jm, dJ = Jd[..., 0], Jd[..., 1 : 1 + n]  # dJ[p, i, j, k] = d J^i_j / dq^k
    g = lg.g
    dg = lg.d3E[:, n:, n:, :n]
    Gam = christoffel(lg)
    Jlow = g @ Jm
    dJlow = np.einsum("pilk,plj->pijk", dg, Jm) + np.einsum("pil,pljk->pijk", g, dJ)
    cov = dJlow - np.einsum("plki,plj->pijk", Gam, Jlow) - np.einsum("plkj,pil->pijk", Gam, Jlow)
    alpha = np.trace(dJ, axis1=1, axis2=2)  # d(tr J)
    D = cov - 0.5 * (alpha[:, :, None, None] * g[:, None, :, :] + alpha[:, None, :, None] * g[:, :, None, :])
    scale = np.maximum(1.0, np.abs(cov).max(axis=(1, 2, 3)))
    resid = np.abs(D).max(axis=(1, 2, 3)) / scale
    contracted = np.einsum("pim,pmjk,pk->pij", lg.g_inv, D, lg.u)
    nJ = nabla_tensor_dual(lg, Jd)
    delj = nJ - condition_terms(lg, alpha)
    mismatch = np.abs(contracted - delj).max()
    return RiemannianReport(
        residual_max=float(resid.max()),
        contraction_mismatch=float(mismatch),
        delj_residual_max=float(np.abs(delj).max()),
        tolerance=tol,
    )


def nijenhuis_tensor(J: TensorK, samples) -> np.ndarray:
    """``N[p, i, j, k]``: torsion components on the coordinate pair ``(d/dq^j, d/dq^k)``."""
    if J.depends_on_u:
        raise ValueError("J must not depend on u")
    n = J.dim
    if isinstance(samples, PhasePoint):
        samples = [samples]
    if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], PhasePoint):
        X = np.array([p.x for p in samples])
    else:
        X = np.atleast_2d(np.asarray(samples, dtype=float))
    Jd = J.dual(X)
    Jm, dJ = Jd[..., 0], Jd[..., 1 : 1 + n]
    return (
        np.einsum("plj,pikl->pijk", Jm, dJ)
        - np.einsum("plk,pijl->pijk", Jm, dJ)
        - np.einsum("pil,plkj->pijk", Jm, dJ)
        + np.einsum("pil,pljk->pijk", Jm, dJ)
    )


def nijenhuis_residual(J: TensorK, samples) -> float:
    return float(np.abs(nijenhuis_tensor(J, samples)).max())

"""The recursive hierarchy of first integrals built from a tensor K.

With ``k_j = g(T, K^j T)/2`` and ``a_j = tr(K^j)/j``::

    phi_1 = 0
    phi_k = 1/2 sum_{i=1}^{k-1} a_i a_{k-i} - 1/k sum_{i=2}^{k-1} (k-i) phi_i a_{k-i}
    b_0 = 1,  b_k = phi_k - a_k
    h_l = k_l + sum_{i=1}^{l} b_i k_{l-i}
    B_0 = I,  B_l = b_l I + B_{l-1} K          (h_l = g(T, B_l T)/2)

The ``b_k`` are the characteristic-polynomial coefficients of K, ``B_n = 0``
and ``(-1)^(n-1) B_{n-1}`` is the adjugate of K.

The recursion runs on first-order dual arrays (trailing axis ``[value,
gradient...]``): with a length-1 trailing axis it produces plain values, with
gradients attached it also differentiates every quantity, which the bracket
probe relies on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import dual_const, dual_dot, dual_matmul, dual_matvec, dual_mul, dual_trace
from .geometry import FinslerModel, LocalGeometry, PhasePoint, local_geometry
from .killing import TensorK


class FitError(ValueError):
    pass


def trace_scheme(Kd: np.ndarray) -> dict:
    """Powers, ``a``, ``phi``, ``b`` and ``B`` from a dual matrix ``(..., n, n, D)``.

    Index 0 of ``a`` and ``phi`` is unused (kept at zero).
    """
    n, D = Kd.shape[-2], Kd.shape[-1]
    lead = Kd.shape[:-3]
    eye = dual_const(np.broadcast_to(np.eye(n), lead + (n, n)), D - 1)
    powers = [eye]
    for _ in range(n + 1):
        powers.append(dual_matmul(powers[-1], Kd))
    zero = np.zeros(lead + (D,))
    a = [zero] + [dual_trace(powers[j]) / j for j in range(1, n + 2)]
    phi = [zero, zero.copy()]
    for k in range(2, n + 2):
        acc = 0.5 * sum(dual_mul(a[i], a[k - i]) for i in range(1, k))
        if k > 2:
            acc = acc - sum((k - i) * dual_mul(phi[i], a[k - i]) for i in range(2, k)) / k
        phi.append(acc)
    b = [dual_const(np.ones(lead), D - 1)] + [phi[k] - a[k] for k in range(1, n + 2)]
    B = [eye]
    for l in range(1, n + 1):
        B.append(dual_mul(b[l][..., None, None, :], eye) + dual_matmul(B[-1], Kd))
    return {"powers": powers, "a": a, "phi": phi, "b": b, "B": B}


def integrals_scheme(scheme: dict, gd: np.ndarray, ud: np.ndarray) -> dict:
    """``k_j``, ``h_l`` by the sum formula and ``h_l`` from ``B_l``."""
    n = gd.shape[-2]
    theta = dual_matvec(gd, ud)

    def half_quad(M):
        return 0.5 * dual_dot(theta, dual_matvec(M, ud))

    k = [half_quad(scheme["powers"][j]) for j in range(n + 1)]
    b = scheme["b"]
    h = [k[l] + sum(dual_mul(b[i], k[l - i]) for i in range(1, l + 1)) for l in range(n + 1)]
    hB = [half_quad(scheme["B"][l]) for l in range(n + 1)]
    return {"k": k, "h": h, "hB": hB}


@dataclass
class HierarchyBatch:
    """Hierarchy data at ``P`` points (leading axis)."""

    K: np.ndarray  # (P, n, n)
    k: np.ndarray  # (P, n+1)
    a: np.ndarray  # (P, n+2), a[:, 0] unused
    phi: np.ndarray  # (P, n+2), phi[:, 0] unused
    b: np.ndarray  # (P, n+2)
    h: np.ndarray  # (P, n+1)
    h_from_B: np.ndarray  # (P, n+1)
    B: np.ndarray  # (P, n+1, n, n)
    powers: np.ndarray  # (P, n+2, n, n)
    A_adj: np.ndarray  # (P, n, n)
    cofactor_integral: np.ndarray  # (P,)
    E: np.ndarray

    @property
    def n(self) -> int:
        return self.K.shape[1]

    def point(self, i: int) -> "HierarchyValues":
        return HierarchyValues(
            k=self.k[i], a=self.a[i], phi=self.phi[i], b=self.b[i], h=self.h[i],
            h_from_B=self.h_from_B[i], B=self.B[i], A_adj=self.A_adj[i],
            cofactor_integral=float(self.cofactor_integral[i]), K=self.K[i], E=float(self.E[i]),
        )

    def residuals(self) -> dict[str, np.ndarray]:
        """Per-point identity residuals (termination, two routes, cofactor, adjugate, b_n)."""
        n = self.n
        eye = np.eye(n)
        det = np.linalg.det(self.K)
        href = np.maximum(1.0, np.abs(self.h))
        sign = (-1) ** (n - 1)
        cof_ref = np.maximum(1.0, np.abs(self.cofactor_integral))
        AK = self.A_adj @ self.K
        return {
            "B_n_norm": np.linalg.norm(self.B[:, n], axis=(1, 2)),
            "b_n_plus_1": np.abs(self.b[:, n + 1]),
            "h_n": np.abs(self.h[:, n]),
            "two_route": np.abs(self.h - self.h_from_B).max(axis=1) / href.max(axis=1),
            "cofactor_vs_h": np.abs(self.cofactor_integral - sign * 2 * self.h[:, n - 1]) / cof_ref,
            "adjugate_AK": np.abs(AK - det[:, None, None] * eye).max(axis=(1, 2))
            / np.maximum(1.0, np.abs(det)),
            "b_n_det": np.abs(self.b[:, n] - (-1) ** n * det) / np.maximum(1.0, np.abs(det)),
        }


@dataclass
class HierarchyValues:
    k: np.ndarray
    a: np.ndarray
    phi: np.ndarray
    b: np.ndarray
    h: np.ndarray
    h_from_B: np.ndarray
    B: np.ndarray
    A_adj: np.ndarray
    cofactor_integral: float
    K: np.ndarray
    E: float

    def to_dict(self) -> dict:
        return {
            "k": self.k.tolist(),
            "a": self.a[1:].tolist(),
            "phi": self.phi[1:].tolist(),
            "b": self.b.tolist(),
            "h": self.h.tolist(),
            "cofactor_integral": self.cofactor_integral,
            "A_adj": self.A_adj.tolist(),
        }


def _stack(seq) -> np.ndarray:
    return np.stack([x[..., 0] for x in seq], axis=1)


def hierarchy_from_matrices(K: np.ndarray, g: np.ndarray, u: np.ndarray) -> HierarchyBatch:
    n = K.shape[-1]
    sch = trace_scheme(K[..., None])
    ints = integrals_scheme(sch, g[..., None], u[..., None])
    B = _stack(sch["B"])
    A = (-1) ** (n - 1) * B[:, n - 1]
    cof = np.einsum("pi,pij,pjk,pk->p", u, g, A, u)
    return HierarchyBatch(
        K=K, k=_stack(ints["k"]), a=_stack(sch["a"]), phi=_stack(sch["phi"]), b=_stack(sch["b"]),
        h=_stack(ints["h"]), h_from_B=_stack(ints["hB"]), B=B, powers=_stack(sch["powers"]),
        A_adj=A, cofactor_integral=cof, E=0.5 * np.einsum("pi,pij,pj->p", u, g, u),
    )


def hierarchy_batch(model: FinslerModel, K: TensorK, points, lg: LocalGeometry | None = None) -> HierarchyBatch:
    lg = lg or local_geometry(model, points, order=2)
    return hierarchy_from_matrices(K.values(lg.x), lg.g, lg.u)


def hierarchy_at(model: FinslerModel, K: TensorK, p: PhasePoint) -> HierarchyValues:
    return hierarchy_batch(model, K, p).point(0)


def hierarchy_gradients(model: FinslerModel, K: TensorK, points, lg: LocalGeometry | None = None) -> dict:
    """Gradients over ``(q, u)`` of ``h_0..h_n``, ``k_j``, ``a_j`` and of the cofactor integral."""
    lg = lg if (lg is not None and lg.d3E is not None) else local_geometry(model, points, order=3)
    n = model.dim
    N = 2 * n
    P = lg.q.shape[0]
    gd = np.concatenate([lg.g[..., None], lg.d3E[:, n:, n:, :]], axis=-1)
    ud = np.zeros((P, n, 1 + N))
    ud[..., 0] = lg.u
    ud[:, np.arange(n), 1 + n + np.arange(n)] = 1.0
    Kd = K.dual(lg.x)
    sch = trace_scheme(Kd)
    ints = integrals_scheme(sch, gd, ud)
    A = (-1) ** (n - 1) * sch["B"][n - 1]
    theta = dual_matvec(gd, ud)
    cof = dual_dot(theta, dual_matvec(A, ud))

    def grads(seq):
        return np.stack([x[..., 1:] for x in seq], axis=1)

    return {
        "h": grads(ints["h"]),
        "k": grads(ints["k"]),
        "a": grads(sch["a"]),
        "powers_dual": sch["powers"],
        "cofactor": cof[..., 1:],
        "lg": lg,
    }


def adjugate_at(K_matrix) -> np.ndarray:
    """``(-1)^(n-1) B_{n-1}`` from the recursion; defined for singular K as well."""
    K = np.asarray(K_matrix, dtype=float)
    n = K.shape[0]
    sch = trace_scheme(K[None, ..., None])
    return (-1) ** (n - 1) * sch["B"][n - 1][0, ..., 0]


def charpoly_coefficients(K_matrix) -> np.ndarray:
    """``b_0..b_n`` with ``det(lambda I - K) = sum b_i lambda^(n-i)``."""
    K = np.asarray(K_matrix, dtype=float)
    n = K.shape[0]
    sch = trace_scheme(K[None, ..., None])
    return np.array([sch["b"][i][0, 0] for i in range(n + 1)])


LAMBDAS = (-2.0, -1.0, 0.0, 1.0, 2.0, 3.0)


def charpoly_check(K_matrix, b, lambdas=LAMBDAS) -> float:
    K = np.asarray(K_matrix, dtype=float)
    n = K.shape[0]
    b = np.asarray(b, dtype=float)[: n + 1]
    worst = 0.0
    for lam in lambdas:
        det = np.linalg.det(lam * np.eye(n) - K)
        poly = sum(b[i] * lam ** (n - i) for i in range(n + 1))
        worst = max(worst, abs(det - poly) / max(1.0, abs(det)))
    return worst


def cofactor_integral_at(model: FinslerModel, K: TensorK, p: PhasePoint) -> float:
    return hierarchy_at(model, K, p).cofactor_integral


def shifted_family_check(model: FinslerModel, K: TensorK, p: PhasePoint, s_values=None) -> dict:
    """Fit ``A(s) = adj(K + sI) = sum_j A_{j+1} s^j`` and compare with ``(-1)^j B_j``.

    The first ``n`` values of ``s`` determine the fit exactly (Vandermonde
    solve); any further values validate it.
    """
    n = model.dim
    Km = K.values(p.x[None, :])[0]
    s_values = list(range(1, n + 2)) if s_values is None else [float(s) for s in s_values]
    if len(set(s_values)) < n:
        raise FitError(f"need at least {n} distinct s values, got {len(set(s_values))}")
    fit_s = []
    for s in s_values:
        if s not in fit_s:
            fit_s.append(s)
        if len(fit_s) == n:
            break
    adj = {s: adjugate_at(Km + s * np.eye(n)) for s in s_values}
    V = np.vander(np.array(fit_s, dtype=float), n, increasing=True)
    Y = np.stack([adj[s] for s in fit_s]).reshape(n, -1)
    coef = np.linalg.solve(V, Y).reshape(n, n, n)  # coef[j] = A_{j+1}
    hv = hierarchy_at(model, K, p)
    B, b = hv.B, hv.b

    def rel(x, ref):
        return float(np.abs(x).max() / max(1.0, float(np.abs(ref).max())))

    coefficient = max(rel(coef[n - j - 1] - (-1) ** j * B[j], B[j]) for j in range(n))
    eye = np.eye(n)
    recursion = max(
        rel(Km @ coef[j] + coef[j - 1] - (-1) ** (n - j) * b[n - j] * eye, coef[j - 1]) for j in range(1, n)
    ) if n > 1 else 0.0
    top = rel(coef[n - 1] - eye, eye)
    bottom = rel(Km @ coef[0] - (-1) ** n * b[n] * eye, Km @ coef[0])
    extra = [s for s in s_values if s not in fit_s]
    validation = max(
        (rel(sum(coef[j] * s ** j for j in range(n)) - adj[s], adj[s]) for s in extra), default=0.0
    )
    return {
        "s_values": s_values,
        "coefficients": coef,
        "coefficient_residual": coefficient,
        "recursion_residual": recursion,
        "A_n_identity_residual": top,
        "K_A_1_residual": bottom,
        "validation_residual": validation,
        "max_residual": max(coefficient, recursion, top, bottom, validation),
    }

"""Truncated multivariate Taylor jets (orders 0-3) and first-order dual arrays.

A jet of order ``r`` in ``N`` coordinates is a dense vector of Taylor
coefficients over all monomials of total degree ``<= r``, ordered by degree
and then lexicographically.  The coefficient of ``x^alpha`` equals
``d^alpha f / alpha!``, so mixed partials are symmetric by construction.

The tables built here drive the tape kernels in :mod:`finslerlab._kernels`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import mpmath
import numpy as np

MAX_ORDER = 3
MAX_DIM = 8


@dataclass(frozen=True)
class JetTables:
    """Monomial bookkeeping and the truncated product table for ``nvars`` coordinates."""

    nvars: int
    monomials: tuple[tuple[int, ...], ...]
    index: dict
    pi: np.ndarray  # product table: coef[pc] += a[pi] * b[pj], sorted by pc
    pj: np.ndarray
    pc: np.ndarray
    npairs: np.ndarray  # npairs[r]: prefix length of the table for order r
    msize: np.ndarray  # msize[r]: number of monomials of degree <= r
    starts: tuple[np.ndarray, ...]  # reduceat offsets per order
    scale: np.ndarray  # alpha! per monomial
    idx2: np.ndarray
    idx3: np.ndarray
    sc2: np.ndarray


@lru_cache(maxsize=None)
def jet_tables(nvars: int) -> JetTables:
    monos: list[tuple[int, ...]] = []
    for d in range(MAX_ORDER + 1):
        monos.extend(itertools.combinations_with_replacement(range(nvars), d))
    index = {m: i for i, m in enumerate(monos)}
    triples = []
    for i, mi in enumerate(monos):
        for j, mj in enumerate(monos):
            if len(mi) + len(mj) <= MAX_ORDER:
                triples.append((index[tuple(sorted(mi + mj))], i, j))
    triples.sort()
    pc, pi, pj = (np.array(col, dtype=np.int64) for col in zip(*triples))
    msize = np.array([math.comb(nvars + r, r) for r in range(MAX_ORDER + 1)], dtype=np.int64)
    npairs = np.searchsorted(pc, msize).astype(np.int64)
    starts = tuple(
        np.searchsorted(pc[: npairs[r]], np.arange(msize[r])).astype(np.int64)
        for r in range(MAX_ORDER + 1)
    )
    scale = np.array(
        [math.prod(math.factorial(m.count(v)) for v in set(m)) for m in monos], dtype=float
    )
    idx2 = np.zeros((nvars, nvars), dtype=np.int64)
    idx3 = np.zeros((nvars, nvars, nvars), dtype=np.int64)
    for a, b in itertools.product(range(nvars), repeat=2):
        idx2[a, b] = index[tuple(sorted((a, b)))]
    for a, b, c in itertools.product(range(nvars), repeat=3):
        idx3[a, b, c] = index[tuple(sorted((a, b, c)))]
    sc2 = np.where(np.eye(nvars, dtype=bool), 2.0, 1.0)
    return JetTables(
        nvars=nvars,
        monomials=tuple(monos),
        index=index,
        pi=pi,
        pj=pj,
        pc=pc,
        npairs=npairs,
        msize=msize,
        starts=starts,
        scale=scale,
        idx2=idx2,
        idx3=idx3,
        sc2=sc2,
    )


def coordinate_index(token, n: int) -> int:
    """Map ``'q2'``/``'u1'`` or a 0-based int to a position in ``(q1..qn, u1..un)``."""
    if isinstance(token, (int, np.integer)):
        if not 0 <= token < 2 * n:
            raise ValueError(f"coordinate index {token} out of range for dimension {n}")
        return int(token)
    name = str(token)
    if len(name) < 2 or name[0] not in "qu" or not name[1:].isdigit():
        raise ValueError(f"unknown coordinate {name!r}")
    k = int(name[1:])
    if not 1 <= k <= n:
        raise ValueError(f"coordinate {name} out of range for dimension {n}")
    return k - 1 + (n if name[0] == "u" else 0)


def derivative_tensors(coefs: np.ndarray, nvars: int, order: int):
    """Unpack jet coefficients ``(..., M)`` into value, gradient, Hessian, third-derivative arrays.

    Tensors above ``order`` are returned as ``None``.
    """
    t = jet_tables(nvars)
    value = coefs[..., 0]
    grad = coefs[..., 1 : 1 + nvars] if order >= 1 else None
    hess = coefs[..., t.idx2] * t.scale[t.idx2] if order >= 2 else None
    third = coefs[..., t.idx3] * t.scale[t.idx3] if order >= 3 else None
    return value, grad, hess, third


class JetValue:
    """Value and all partials up to ``order`` of a scalar field at one point.

    ``partial('u1', 'q2')`` or ``partial(2, 1)`` returns the mixed derivative;
    argument order is irrelevant.
    """

    def __init__(self, coefs: np.ndarray, dim: int, order: int):
        self.coefs = np.asarray(coefs, dtype=float)
        self.dim = dim
        self.order = order

    @property
    def value(self) -> float:
        return float(self.coefs[0])

    def partial(self, *indices) -> float:
        n = self.dim
        idx = tuple(sorted(coordinate_index(i, n) for i in indices))
        if len(idx) > self.order:
            raise ValueError(f"derivative of degree {len(idx)} exceeds jet order {self.order}")
        t = jet_tables(2 * n)
        k = t.index[idx]
        return float(self.coefs[k] * t.scale[k])

    @property
    def partials(self) -> dict[tuple[int, ...], float]:
        t = jet_tables(2 * self.dim)
        m = int(t.msize[self.order])
        return {t.monomials[k]: float(self.coefs[k] * t.scale[k]) for k in range(1, m)}

    def gradient(self) -> np.ndarray:
        return derivative_tensors(self.coefs, 2 * self.dim, self.order)[1]

    def hessian(self) -> np.ndarray:
        return derivative_tensors(self.coefs, 2 * self.dim, self.order)[2]

    def third(self) -> np.ndarray:
        return derivative_tensors(self.coefs, 2 * self.dim, self.order)[3]

    def __repr__(self) -> str:
        return f"JetValue(value={self.value!r}, dim={self.dim}, order={self.order})"


def _as_coords(point, nvars: int) -> np.ndarray:
    if hasattr(point, "q") and hasattr(point, "u"):
        x = np.concatenate([np.asarray(point.q, float), np.asarray(point.u, float)])
    else:
        x = np.asarray(point, dtype=float).ravel()
    if x.shape != (nvars,):
        raise ValueError(f"point has {x.size} coordinates, expected {nvars}")
    return x


def derive(f, point, multi_index: Sequence, order: int | None = None) -> float:
    """Exact derivative of the field ``f`` (anything with ``.jet(point, order)``) at ``point``."""
    degree = len(multi_index)
    order = degree if order is None else order
    if degree > order:
        raise ValueError("total degree of multi_index exceeds order")
    return f.jet(point, order).partial(*multi_index)


def _nested_central(fun, x: list, idx: Sequence[int], h):
    if not idx:
        return fun(x)
    i, rest = idx[0], idx[1:]
    xp, xm = list(x), list(x)
    xp[i] += h
    xm[i] -= h
    return (_nested_central(fun, xp, rest, h) - _nested_central(fun, xm, rest, h)) / (2 * h)


def fd_crosscheck(f, point, multi_index: Sequence, step: float = 1e-5, dps: int = 40):
    """Return ``(jet derivative, central finite-difference estimate)``.

    The difference quotient is nested once per differentiation level with the
    same ``step``.  It is evaluated on the expression tree in ``dps``-digit
    arithmetic, so cancellation does not swamp third derivatives.
    """
    n = f.dim
    x = _as_coords(point, 2 * n)
    idx = [coordinate_index(i, n) for i in multi_index]
    ad = derive(f, x, multi_index)
    with mpmath.workdps(dps):
        h = mpmath.mpf(repr(step))
        xs = [mpmath.mpf(float(v)) for v in x]
        fd = _nested_central(f.eval_mp, xs, idx, h)
        fd = float(fd)
    return ad, fd


# First-order dual arrays: trailing axis holds [value, d/dx_1, ..., d/dx_N].


def dual_const(value, nder: int) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    out = np.zeros(value.shape + (1 + nder,))
    out[..., 0] = value
    return out


def dual_mul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(x.shape, y.shape))
    out[..., 0] = x[..., 0] * y[..., 0]
    out[..., 1:] = x[..., :1] * y[..., 1:] + y[..., :1] * x[..., 1:]
    return out


def dual_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of dual matrices ``(..., n, m, D) @ (..., m, k, D)``."""
    a0, b0 = a[..., 0], b[..., 0]
    out = np.empty(np.broadcast_shapes(a0.shape[:-2], b0.shape[:-2]) + (a0.shape[-2], b0.shape[-1], a.shape[-1]))
    out[..., 0] = a0 @ b0
    if a.shape[-1] > 1:
        out[..., 1:] = np.einsum("...ijd,...jk->...ikd", a[..., 1:], b0) + np.einsum(
            "...ij,...jkd->...ikd", a0, b[..., 1:]
        )
    return out


def dual_matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return dual_matmul(a, v[..., :, None, :])[..., 0, :]


def dual_dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dual_mul(x, y).sum(axis=-2)


def dual_trace(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-3, axis2=-2)

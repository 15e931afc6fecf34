"""Pure-numpy kernels, vectorized across points.  Same contracts as the numba path."""
from __future__ import annotations

import math

import numpy as np

from ._ops import (
    ADD, CONST, COS, DIV, ERR_DIV, ERR_LOG, ERR_POW, ERR_SINGULAR, ERR_SLIT, ERR_SQRT,
    EXP, LOG, MUL, NEG, OK, PIVOT_RTOL, POW, POWC, POWI, SIN, SQRT, SUB, VAR,
)


def _mul(a, b, pi, pj, start, npairs):
    prod = a[:, pi[:npairs]] * b[:, pj[:npairs]]
    return np.add.reduceat(prod, start, axis=1)


def _compose(a, coefs, order, mul):
    # coefs: (P, order + 1) Taylor coefficients of the outer function at a[:, 0]
    d = a.copy()
    d[:, 0] = 0.0
    out = np.zeros_like(a)
    out[:, 0] = coefs[:, order]
    for k in range(order - 1, -1, -1):
        out = mul(out, d)
        out[:, 0] += coefs[:, k]
    return out


def eval_tape(ops, a0, a1, cst, outputs, X, order, pi, pj, pc, npairs, m, start):
    npts = X.shape[0]
    status = np.zeros(npts, dtype=np.int64)
    fail = np.full(npts, -1, dtype=np.int64)

    def mul(a, b):
        return _mul(a, b, pi, pj, start, npairs)

    def flag(mask, code, s):
        new = mask & (status == OK)
        status[new] = code
        fail[new] = s

    slots = []
    with np.errstate(all="ignore"):
        for s in range(ops.shape[0]):
            op = ops[s]
            if op == CONST:
                out = np.zeros((npts, m))
                out[:, 0] = cst[s]
            elif op == VAR:
                out = np.zeros((npts, m))
                out[:, 0] = X[:, a0[s]]
                if m > 1:
                    out[:, 1 + a0[s]] = 1.0
            elif op == ADD:
                out = slots[a0[s]] + slots[a1[s]]
            elif op == SUB:
                out = slots[a0[s]] - slots[a1[s]]
            elif op == NEG:
                out = -slots[a0[s]]
            elif op == MUL:
                out = mul(slots[a0[s]], slots[a1[s]])
            elif op == DIV:
                a, b = slots[a0[s]], slots[a1[s]]
                b0 = b[:, 0]
                flag(b0 == 0.0, ERR_DIV, s)
                r = 1.0 / b0
                coefs = np.stack([r, -r * r, r * r * r, -r * r * r * r], axis=1)
                out = mul(a, _compose(b, coefs, order, mul))
                out[:, 0] = a[:, 0] / b0
            elif op == POWI:
                base = slots[a0[s]]
                k = int(cst[s])
                out = np.zeros((npts, m))
                out[:, 0] = 1.0
                while k > 0:
                    if k & 1:
                        out = mul(out, base)
                    k >>= 1
                    if k > 0:
                        base = mul(base, base)
            elif op == POWC:
                a = slots[a0[s]]
                e = cst[s]
                x0 = a[:, 0]
                integral = e == math.floor(e)
                bad = ((x0 < 0.0) & (not integral)) | ((x0 == 0.0) & (order > 0 or e < 0.0))
                flag(bad, ERR_POW, s)
                coefs = np.zeros((npts, 4))
                binom = 1.0
                for k in range(order + 1):
                    coefs[:, k] = binom * x0 ** (e - k)
                    binom = binom * (e - k) / (k + 1)
                out = _compose(a, coefs, order, mul)
            elif op == POW:
                a, b = slots[a0[s]], slots[a1[s]]
                x0 = a[:, 0]
                flag(x0 <= 0.0, ERR_POW, s)
                r = 1.0 / x0
                coefs = np.stack([np.log(x0), r, -0.5 * r * r, r * r * r / 3.0], axis=1)
                t = mul(b, _compose(a, coefs, order, mul))
                ev = np.exp(t[:, 0])
                coefs = np.stack([ev, ev, ev / 2.0, ev / 6.0], axis=1)
                out = _compose(t, coefs, order, mul)
            else:
                a = slots[a0[s]]
                x0 = a[:, 0]
                if op == SIN:
                    sv, cv = np.sin(x0), np.cos(x0)
                    coefs = np.stack([sv, cv, -sv / 2.0, -cv / 6.0], axis=1)
                elif op == COS:
                    sv, cv = np.sin(x0), np.cos(x0)
                    coefs = np.stack([cv, -sv, -cv / 2.0, sv / 6.0], axis=1)
                elif op == EXP:
                    ev = np.exp(x0)
                    coefs = np.stack([ev, ev, ev / 2.0, ev / 6.0], axis=1)
                elif op == LOG:
                    flag(x0 <= 0.0, ERR_LOG, s)
                    r = 1.0 / x0
                    coefs = np.stack([np.log(x0), r, -0.5 * r * r, r * r * r / 3.0], axis=1)
                elif op == SQRT:
                    flag((x0 < 0.0) | ((x0 == 0.0) & (order > 0)), ERR_SQRT, s)
                    rv = np.sqrt(x0)
                    coefs = np.stack(
                        [rv, 0.5 / rv, -0.125 / (rv * x0), 0.0625 / (rv * x0 * x0)], axis=1
                    )
                else:
                    raise ValueError(f"unknown opcode {op}")
                out = _compose(a, coefs, order, mul)
            slots.append(out)
    res = np.stack([slots[o] for o in outputs], axis=1) if len(outputs) else np.empty((npts, 0, m))
    res[status != OK] = np.nan
    return res, status, fail


def lu_solve_batch(g, r):
    """Gaussian elimination with partial pivoting across a batch ``(P, n, n)``."""
    g = np.array(g, dtype=float)
    r = np.array(r, dtype=float)
    npts, n = r.shape
    rows = np.arange(npts)
    ok = np.isfinite(g).all(axis=(1, 2)) & np.isfinite(r).all(axis=1)
    tol = PIVOT_RTOL * np.abs(np.where(np.isfinite(g), g, 0.0)).max(axis=(1, 2))
    with np.errstate(all="ignore"):
        for k in range(n):
            piv = k + np.argmax(np.abs(g[:, k:, k]), axis=1)
            ok &= np.abs(g[rows, piv, k]) > tol
            gk, gp = g[rows, k].copy(), g[rows, piv].copy()
            g[rows, k], g[rows, piv] = gp, gk
            rk, rp = r[rows, k].copy(), r[rows, piv].copy()
            r[rows, k], r[rows, piv] = rp, rk
            f = g[:, k + 1 :, k] / g[:, k, k][:, None]
            g[:, k + 1 :, k:] -= f[:, :, None] * g[:, k, None, k:]
            r[:, k + 1 :] -= f * r[:, k, None]
        for i in range(n - 1, -1, -1):
            r[:, i] = (r[:, i] - np.einsum("pj,pj->p", g[:, i, i + 1 :], r[:, i + 1 :])) / g[:, i, i]
    r[~ok] = np.nan
    return r, ok


def _spray_from_jets(jet, X, n, idx2, sc2):
    g = jet[:, idx2[n:, n:]] * sc2[n:, n:]
    mixed = jet[:, idx2[n:, :n]] * sc2[n:, :n]
    r = jet[:, 1 : 1 + n] - np.einsum("pjk,pk->pj", mixed, X[:, n:])
    F, ok = lu_solve_batch(g, r)
    status = np.where(ok, OK, ERR_SINGULAR).astype(np.int64)
    return F, status


def spray(ops, a0, a1, cst, out_slot, X, n, pi, pj, pc, npairs, m, idx2, sc2, start):
    jets, status, _ = eval_tape(ops, a0, a1, cst, np.array([out_slot]), X, 2, pi, pj, pc, npairs, m, start)
    F, st2 = _spray_from_jets(jets[:, 0, :], X, n, idx2, sc2)
    status = np.where(status != OK, status, st2)
    F[status != OK] = np.nan
    return F, status


def rk4(ops, a0, a1, cst, out_slot, x0, h, nsteps, n, umin, pi, pj, pc, npairs, m, idx2, sc2, start):
    states = np.full((nsteps + 1, 2 * n), np.nan)
    x = np.array(x0, dtype=float)
    states[0] = x

    def f(xs):
        F, st = spray(ops, a0, a1, cst, out_slot, xs[None, :], n, pi, pj, pc, npairs, m, idx2, sc2, start)
        return np.concatenate([xs[n:], F[0]]), int(st[0])

    for step in range(nsteps):
        k1, st = f(x)
        if st == OK:
            k2, st = f(x + 0.5 * h * k1)
        if st == OK:
            k3, st = f(x + 0.5 * h * k2)
        if st == OK:
            k4, st = f(x + h * k3)
        if st != OK:
            return states, st, step
        x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[step + 1] = x
        if math.sqrt(float(x[n:] @ x[n:])) < umin:
            return states, ERR_SLIT, step + 1
    return states, OK, nsteps

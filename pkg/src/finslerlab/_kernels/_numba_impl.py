"""numba kernels: tape evaluation over jets, spray solve, fixed-step RK4."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._ops import (
    ADD, CONST, COS, DIV, ERR_DIV, ERR_LOG, ERR_POW, ERR_SINGULAR, ERR_SLIT, ERR_SQRT,
    EXP, LOG, MUL, NEG, OK, PIVOT_RTOL, POW, POWC, POWI, SIN, SQRT, SUB, VAR,
)


@njit(cache=True)
def _mul_into(a, b, out, pi, pj, pc, npairs, m):
    for c in range(m):
        out[c] = 0.0
    for p in range(npairs):
        out[pc[p]] += a[pi[p]] * b[pj[p]]


@njit(cache=True)
def _compose(a, coef, order, out, d, tmp, pi, pj, pc, npairs, m):
    # out = sum_k coef[k] * (a - a[0])^k, Horner form
    for c in range(m):
        d[c] = a[c]
        out[c] = 0.0
    d[0] = 0.0
    out[0] = coef[order]
    for k in range(order - 1, -1, -1):
        _mul_into(out, d, tmp, pi, pj, pc, npairs, m)
        for c in range(m):
            out[c] = tmp[c]
        out[0] += coef[k]


@njit(cache=True)
def _eval_point(ops, a0, a1, cst, x, order, pi, pj, pc, npairs, m, slots, w1, w2, w3, coef):
    for s in range(ops.shape[0]):
        op = ops[s]
        out = slots[s]
        if op == CONST:
            for c in range(m):
                out[c] = 0.0
            out[0] = cst[s]
        elif op == VAR:
            for c in range(m):
                out[c] = 0.0
            out[0] = x[a0[s]]
            if m > 1:
                out[1 + a0[s]] = 1.0
        elif op == ADD:
            a = slots[a0[s]]
            b = slots[a1[s]]
            for c in range(m):
                out[c] = a[c] + b[c]
        elif op == SUB:
            a = slots[a0[s]]
            b = slots[a1[s]]
            for c in range(m):
                out[c] = a[c] - b[c]
        elif op == NEG:
            a = slots[a0[s]]
            for c in range(m):
                out[c] = -a[c]
        elif op == MUL:
            _mul_into(slots[a0[s]], slots[a1[s]], out, pi, pj, pc, npairs, m)
        elif op == DIV:
            a = slots[a0[s]]
            b = slots[a1[s]]
            b0 = b[0]
            if b0 == 0.0:
                return ERR_DIV, s
            r = 1.0 / b0
            coef[0] = r
            coef[1] = -r * r
            coef[2] = r * r * r
            coef[3] = -r * r * r * r
            _compose(b, coef, order, w3, w1, w2, pi, pj, pc, npairs, m)
            _mul_into(a, w3, out, pi, pj, pc, npairs, m)
            out[0] = a[0] / b0
        elif op == POWI:
            a = slots[a0[s]]
            k = int(cst[s])
            for c in range(m):
                out[c] = 0.0
                w3[c] = a[c]
            out[0] = 1.0
            while k > 0:
                if k & 1:
                    _mul_into(out, w3, w2, pi, pj, pc, npairs, m)
                    for c in range(m):
                        out[c] = w2[c]
                k >>= 1
                if k > 0:
                    _mul_into(w3, w3, w2, pi, pj, pc, npairs, m)
                    for c in range(m):
                        w3[c] = w2[c]
        elif op == POWC:
            a = slots[a0[s]]
            e = cst[s]
            x0 = a[0]
            integral = e == math.floor(e)
            if (x0 < 0.0 and not integral) or (x0 == 0.0 and (order > 0 or e < 0.0)):
                return ERR_POW, s
            binom = 1.0
            for k in range(order + 1):
                coef[k] = binom * x0 ** (e - k)
                binom = binom * (e - k) / (k + 1)
            _compose(a, coef, order, out, w1, w2, pi, pj, pc, npairs, m)
        elif op == POW:
            a = slots[a0[s]]
            b = slots[a1[s]]
            x0 = a[0]
            if x0 <= 0.0:
                return ERR_POW, s
            r = 1.0 / x0
            coef[0] = math.log(x0)
            coef[1] = r
            coef[2] = -0.5 * r * r
            coef[3] = r * r * r / 3.0
            _compose(a, coef, order, w3, w1, w2, pi, pj, pc, npairs, m)
            _mul_into(b, w3, out, pi, pj, pc, npairs, m)
            ev = math.exp(out[0])
            coef[0] = ev
            coef[1] = ev
            coef[2] = ev / 2.0
            coef[3] = ev / 6.0
            _compose(out, coef, order, w3, w1, w2, pi, pj, pc, npairs, m)
            for c in range(m):
                out[c] = w3[c]
        else:
            a = slots[a0[s]]
            x0 = a[0]
            if op == SIN:
                sv = math.sin(x0)
                cv = math.cos(x0)
                coef[0] = sv
                coef[1] = cv
                coef[2] = -sv / 2.0
                coef[3] = -cv / 6.0
            elif op == COS:
                sv = math.sin(x0)
                cv = math.cos(x0)
                coef[0] = cv
                coef[1] = -sv
                coef[2] = -cv / 2.0
                coef[3] = sv / 6.0
            elif op == EXP:
                ev = math.exp(x0)
                coef[0] = ev
                coef[1] = ev
                coef[2] = ev / 2.0
                coef[3] = ev / 6.0
            elif op == LOG:
                if x0 <= 0.0:
                    return ERR_LOG, s
                r = 1.0 / x0
                coef[0] = math.log(x0)
                coef[1] = r
                coef[2] = -0.5 * r * r
                coef[3] = r * r * r / 3.0
            else:  # SQRT
                if x0 < 0.0 or (x0 == 0.0 and order > 0):
                    return ERR_SQRT, s
                rv = math.sqrt(x0)
                coef[0] = rv
                if order > 0:
                    coef[1] = 0.5 / rv
                    coef[2] = -0.125 / (rv * x0)
                    coef[3] = 0.0625 / (rv * x0 * x0)
            _compose(a, coef, order, out, w1, w2, pi, pj, pc, npairs, m)
    return OK, -1


@njit(cache=True)
def eval_tape(ops, a0, a1, cst, outputs, X, order, pi, pj, pc, npairs, m):
    npts = X.shape[0]
    nout = outputs.shape[0]
    res = np.empty((npts, nout, m))
    status = np.zeros(npts, dtype=np.int64)
    fail = np.full(npts, -1, dtype=np.int64)
    slots = np.zeros((max(ops.shape[0], 1), m))
    w1 = np.zeros(m)
    w2 = np.zeros(m)
    w3 = np.zeros(m)
    coef = np.zeros(4)
    for p in range(npts):
        st, sl = _eval_point(ops, a0, a1, cst, X[p], order, pi, pj, pc, npairs, m, slots, w1, w2, w3, coef)
        if st != OK:
            status[p] = st
            fail[p] = sl
            res[p, :, :] = np.nan
        else:
            for o in range(nout):
                for c in range(m):
                    res[p, o, c] = slots[outputs[o], c]
    return res, status, fail


@njit(cache=True)
def _lu_solve(g, r):
    # in-place Gaussian elimination with partial pivoting; solution left in r
    n = r.shape[0]
    scale = 0.0
    for i in range(n):
        for j in range(n):
            if abs(g[i, j]) > scale:
                scale = abs(g[i, j])
    tol = PIVOT_RTOL * scale
    for k in range(n):
        piv = k
        for i in range(k + 1, n):
            if abs(g[i, k]) > abs(g[piv, k]):
                piv = i
        if abs(g[piv, k]) <= tol:
            return ERR_SINGULAR
        if piv != k:
            for j in range(n):
                t = g[k, j]
                g[k, j] = g[piv, j]
                g[piv, j] = t
            t = r[k]
            r[k] = r[piv]
            r[piv] = t
        for i in range(k + 1, n):
            f = g[i, k] / g[k, k]
            for j in range(k, n):
                g[i, j] -= f * g[k, j]
            r[i] -= f * r[k]
    for i in range(n - 1, -1, -1):
        acc = r[i]
        for j in range(i + 1, n):
            acc -= g[i, j] * r[j]
        r[i] = acc / g[i, i]
    return OK


@njit(cache=True)
def _spray_from_jet(jet, x, n, idx2, sc2, g, r):
    for j in range(n):
        for k in range(n):
            g[j, k] = jet[idx2[n + j, n + k]] * sc2[n + j, n + k]
    for j in range(n):
        acc = jet[1 + j]
        for k in range(n):
            acc -= jet[idx2[n + j, k]] * sc2[n + j, k] * x[n + k]
        r[j] = acc
    return _lu_solve(g, r)


@njit(cache=True)
def spray(ops, a0, a1, cst, out_slot, X, n, pi, pj, pc, npairs, m, idx2, sc2):
    npts = X.shape[0]
    F = np.empty((npts, n))
    status = np.zeros(npts, dtype=np.int64)
    slots = np.zeros((max(ops.shape[0], 1), m))
    w1 = np.zeros(m)
    w2 = np.zeros(m)
    w3 = np.zeros(m)
    coef = np.zeros(4)
    g = np.zeros((n, n))
    r = np.zeros(n)
    for p in range(npts):
        st, sl = _eval_point(ops, a0, a1, cst, X[p], 2, pi, pj, pc, npairs, m, slots, w1, w2, w3, coef)
        if st == OK:
            st = _spray_from_jet(slots[out_slot], X[p], n, idx2, sc2, g, r)
        if st != OK:
            status[p] = st
            F[p, :] = np.nan
        else:
            F[p, :] = r
    return F, status


@njit(cache=True)
def rk4(ops, a0, a1, cst, out_slot, x0, h, nsteps, n, umin, pi, pj, pc, npairs, m, idx2, sc2):
    nx = 2 * n
    states = np.full((nsteps + 1, nx), np.nan)
    slots = np.zeros((max(ops.shape[0], 1), m))
    w1 = np.zeros(m)
    w2 = np.zeros(m)
    w3 = np.zeros(m)
    coef = np.zeros(4)
    g = np.zeros((n, n))
    r = np.zeros(n)
    ks = np.zeros((4, nx))
    xs = np.zeros(nx)
    x = x0.copy()
    for i in range(nx):
        states[0, i] = x[i]
    weights = (0.5, 0.5, 1.0)
    for step in range(nsteps):
        for stage in range(4):
            if stage == 0:
                for i in range(nx):
                    xs[i] = x[i]
            else:
                w = weights[stage - 1]
                for i in range(nx):
                    xs[i] = x[i] + w * h * ks[stage - 1, i]
            st, sl = _eval_point(ops, a0, a1, cst, xs, 2, pi, pj, pc, npairs, m, slots, w1, w2, w3, coef)
            if st == OK:
                st = _spray_from_jet(slots[out_slot], xs, n, idx2, sc2, g, r)
            if st != OK:
                return states, st, step
            for i in range(n):
                ks[stage, i] = xs[n + i]
                ks[stage, n + i] = r[i]
        unorm = 0.0
        for i in range(nx):
            x[i] = x[i] + h / 6.0 * (ks[0, i] + 2.0 * ks[1, i] + 2.0 * ks[2, i] + ks[3, i])
        for i in range(n):
            unorm += x[n + i] * x[n + i]
        for i in range(nx):
            states[step + 1, i] = x[i]
        if math.sqrt(unorm) < umin:
            return states, ERR_SLIT, step + 1
    return states, OK, nsteps

"""Numba-compiled implementations of the hot kernels.

Loop bodies mirror :mod:`ttalab._kernels_np` exactly; reductions run in a
fixed index order. Compiled objects are cached on disk so repeated runs skip
JIT cost.
"""

import numpy as np
from numba import njit

TINY = 1e-300


@njit(cache=True)
def row_softmax(s):
    n, m = s.shape
    out = np.empty((n, m))
    for i in range(n):
        mx = s[i, 0]
        for j in range(1, m):
            if s[i, j] > mx:
                mx = s[i, j]
        tot = 0.0
        for j in range(m):
            e = np.exp(s[i, j] - mx)
            out[i, j] = e
            tot += e
        for j in range(m):
            out[i, j] /= tot
    return out


@njit(cache=True)
def row_logsumexp(s):
    n, m = s.shape
    out = np.empty(n)
    for i in range(n):
        mx = s[i, 0]
        for j in range(1, m):
            if s[i, j] > mx:
                mx = s[i, j]
        tot = 0.0
        for j in range(m):
            tot += np.exp(s[i, j] - mx)
        out[i] = mx + np.log(tot)
    return out


@njit(cache=True)
def row_entropy(p):
    n, m = p.shape
    out = np.empty(n)
    for i in range(n):
        h = 0.0
        for j in range(m):
            pj = p[i, j]
            if pj < TINY:
                pj = TINY
            h -= p[i, j] * np.log(pj)
        out[i] = h
    return out


@njit(cache=True)
def entropy_sum(p):
    n, m = p.shape
    tot = 0.0
    for i in range(n):
        for j in range(m):
            pj = p[i, j]
            if pj < TINY:
                pj = TINY
            tot -= p[i, j] * np.log(pj)
    return tot


@njit(cache=True)
def matmul_fixed(a, b):
    n, m = a.shape[0], b.shape[1]
    kk = a.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(kk):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


@njit(cache=True)
def scont_grad_i2t(p_i2t, w_class, assigned, protos, inv_tau):
    n = p_i2t.shape[0]
    c, d = protos.shape
    out = np.zeros((n, d))
    for i in range(n):
        b_cls = np.zeros(c)
        for j in range(n):
            pj = p_i2t[i, j]
            cl = np.maximum(pj, TINY)
            b_cls[assigned[j]] += pj * (1.0 + np.log(cl))
        b_tot = 0.0
        for k in range(c):
            b_tot += b_cls[k]
        for k in range(c):
            coef = b_tot * w_class[i, k] - b_cls[k]
            for e in range(d):
                out[i, e] += coef * protos[k, e]
        for e in range(d):
            out[i, e] *= inv_tau
    return out


@njit(cache=True)
def scont_grad_t2i(p_t2i, assigned, protos, n_classes, inv_tau):
    n = p_t2i.shape[0]
    d = protos.shape[1]
    out = np.zeros((n, d))
    g_cls = np.zeros((n, n_classes))
    for i in range(n):
        h = 0.0
        for j in range(n):
            pj = p_t2i[i, j]
            cl = np.maximum(pj, TINY)
            h -= pj * np.log(cl)
        for j in range(n):
            pj = p_t2i[i, j]
            cl = np.maximum(pj, TINY)
            g_cls[j, assigned[i]] += -pj * (np.log(cl) + h)
    for m in range(n):
        for k in range(n_classes):
            coef = g_cls[m, k]
            if coef != 0.0:
                for e in range(d):
                    out[m, e] += coef * protos[k, e]
        for e in range(d):
            out[m, e] *= inv_tau
    return out


@njit(cache=True)
def tent_grad(q, protos, inv_tau):
    n, c = q.shape
    d = protos.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        h = 0.0
        for k in range(c):
            qk = np.maximum(q[i, k], TINY)
            h -= q[i, k] * np.log(qk)
        for k in range(c):
            qk = np.maximum(q[i, k], TINY)
            coef = -inv_tau * q[i, k] * (np.log(qk) + h)
            for e in range(d):
                out[i, e] += coef * protos[k, e]
    return out


@njit(cache=True)
def reg_grad(q, q_bar, protos, inv_tau):
    n, c = q.shape
    d = protos.shape[1]
    out = np.zeros((n, d))
    b = np.empty(c)
    for k in range(c):
        b[k] = np.log(np.maximum(q_bar[k], TINY))
    scale = inv_tau / n
    for i in range(n):
        m = 0.0
        for k in range(c):
            m += q[i, k] * b[k]
        for k in range(c):
            coef = scale * q[i, k] * (b[k] - m)
            for e in range(d):
                out[i, e] += coef * protos[k, e]
    return out


@njit(cache=True)
def hard_grad(w_class, assigned, protos, inv_tau):
    n, c = w_class.shape
    d = protos.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        for k in range(c):
            coef = w_class[i, k]
            if k == assigned[i]:
                coef -= 1.0
            for e in range(d):
                out[i, e] += coef * protos[k, e]
        for e in range(d):
            out[i, e] *= inv_tau
    return out


@njit(cache=True)
def encoder_forward(x, gamma, beta, w_proj, eps):
    n, din = x.shape
    demb = w_proj.shape[1]
    z = np.empty((n, demb))
    a = np.empty(din)
    for i in range(n):
        mu = 0.0
        for j in range(din):
            mu += x[i, j]
        mu /= din
        var = 0.0
        for j in range(din):
            dv = x[i, j] - mu
            var += dv * dv
        var /= din
        denom = np.sqrt(var + eps)
        for j in range(din):
            a[j] = gamma[j] * ((x[i, j] - mu) / denom) + beta[j]
        nrm = 0.0
        for e in range(demb):
            ue = 0.0
            for j in range(din):
                ue += a[j] * w_proj[j, e]
            z[i, e] = ue
            nrm += ue * ue
        nrm = np.sqrt(nrm)
        for e in range(demb):
            z[i, e] /= nrm
    return z

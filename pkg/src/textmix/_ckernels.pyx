# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core.

Same contract as textmix._kernels_py. Every kernel accumulates with a
fixed, row-independent loop order, so forward outputs are bitwise
equivariant under batch permutation and reruns are bitwise reproducible.
Do not compile with -ffast-math; it would break both guarantees.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, log, pow, sqrt

cnp.import_array()

DEF INV_SQRT2 = 0.7071067811865475244
DEF INV_SQRT2PI = 0.3989422804014326779


def mm(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t M = a.shape[0], K = a.shape[1], N = b.shape[1]
    out = np.zeros((M, N), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, k, j
    cdef double aik
    for i in range(M):
        for k in range(K):
            aik = a[i, k]
            for j in range(N):
                c[i, j] += aik * b[k, j]
    return out


def bmm(double[:, :, ::1] a, double[:, :, ::1] b):
    cdef Py_ssize_t G = a.shape[0], M = a.shape[1], K = a.shape[2], N = b.shape[2]
    out = np.zeros((G, M, N), dtype=np.float64)
    cdef double[:, :, ::1] c = out
    cdef Py_ssize_t g, i, k, j
    cdef double aik
    for g in range(G):
        for i in range(M):
            for k in range(K):
                aik = a[g, i, k]
                for j in range(N):
                    c[g, i, j] += aik * b[g, k, j]
    return out


def softmax2d(double[:, ::1] x):
    cdef Py_ssize_t R = x.shape[0], K = x.shape[1]
    out = np.empty((R, K), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, k
    cdef double m, s
    for r in range(R):
        m = x[r, 0]
        for k in range(1, K):
            if x[r, k] > m:
                m = x[r, k]
        s = 0.0
        for k in range(K):
            o[r, k] = exp(x[r, k] - m)
            s += o[r, k]
        for k in range(K):
            o[r, k] /= s
    return out


def softmax2d_grad(double[:, ::1] out, double[:, ::1] gout):
    cdef Py_ssize_t R = out.shape[0], K = out.shape[1]
    gx = np.empty((R, K), dtype=np.float64)
    cdef double[:, ::1] g = gx
    cdef Py_ssize_t r, k
    cdef double dot
    for r in range(R):
        dot = 0.0
        for k in range(K):
            dot += out[r, k] * gout[r, k]
        for k in range(K):
            g[r, k] = out[r, k] * (gout[r, k] - dot)
    return gx


def layernorm2d(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1]
    out = np.empty((R, D), dtype=np.float64)
    xhat_arr = np.empty((R, D), dtype=np.float64)
    inv_arr = np.empty(R, dtype=np.float64)
    cdef double[:, ::1] o = out, xh = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef Py_ssize_t r, d
    cdef double mean, var, c, istd
    for r in range(R):
        mean = 0.0
        for d in range(D):
            mean += x[r, d]
        mean /= D
        var = 0.0
        for d in range(D):
            c = x[r, d] - mean
            var += c * c
        var /= D
        istd = 1.0 / sqrt(var + eps)
        inv[r] = istd
        for d in range(D):
            xh[r, d] = (x[r, d] - mean) * istd
            o[r, d] = gamma[d] * xh[r, d] + beta[d]
    return out, xhat_arr, inv_arr


def layernorm2d_grad(double[:, ::1] xhat, double[::1] inv_std,
                     double[::1] gamma, double[:, ::1] gout):
    cdef Py_ssize_t R = xhat.shape[0], D = xhat.shape[1]
    gx = np.empty((R, D), dtype=np.float64)
    ggamma = np.zeros(D, dtype=np.float64)
    gbeta = np.zeros(D, dtype=np.float64)
    cdef double[:, ::1] g = gx
    cdef double[::1] gg = ggamma, gb = gbeta
    cdef Py_ssize_t r, d
    cdef double h, hsum, hx, scale
    for r in range(R):
        hsum = 0.0
        hx = 0.0
        for d in range(D):
            gg[d] += gout[r, d] * xhat[r, d]
            gb[d] += gout[r, d]
            h = gout[r, d] * gamma[d]
            hsum += h
            hx += h * xhat[r, d]
        scale = inv_std[r] / D
        for d in range(D):
            h = gout[r, d] * gamma[d]
            g[r, d] = scale * (D * h - hsum - xhat[r, d] * hx)
    return gx, ggamma, gbeta


def gelu(double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = 0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2))
    return out


def gelu_grad(double[::1] x, double[::1] gout):
    cdef Py_ssize_t n = x.shape[0]
    gx = np.empty(n, dtype=np.float64)
    cdef double[::1] g = gx
    cdef Py_ssize_t i
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * INV_SQRT2))
        pdf = INV_SQRT2PI * exp(-0.5 * x[i] * x[i])
        g[i] = gout[i] * (cdf + x[i] * pdf)
    return gx


def softce(double[:, ::1] logits, double[:, ::1] targets):
    cdef Py_ssize_t B = logits.shape[0], K = logits.shape[1]
    logp_arr = np.empty((B, K), dtype=np.float64)
    cdef double[:, ::1] logp = logp_arr
    cdef Py_ssize_t r, k
    cdef double m, s, lse, loss = 0.0, row
    for r in range(B):
        m = logits[r, 0]
        for k in range(1, K):
            if logits[r, k] > m:
                m = logits[r, k]
        s = 0.0
        for k in range(K):
            s += exp(logits[r, k] - m)
        lse = log(s)
        row = 0.0
        for k in range(K):
            logp[r, k] = logits[r, k] - m - lse
            row += targets[r, k] * logp[r, k]
        loss -= row
    return loss / B, logp_arr


def softce_grad(double[:, ::1] logp, double[:, ::1] targets, double gscale):
    cdef Py_ssize_t B = logp.shape[0], K = logp.shape[1]
    gx = np.empty((B, K), dtype=np.float64)
    cdef double[:, ::1] g = gx
    cdef double scale = gscale / B
    cdef Py_ssize_t r, k
    for r in range(B):
        for k in range(K):
            g[r, k] = (exp(logp[r, k]) - targets[r, k]) * scale
    return gx


def scatter_add(double[:, ::1] table, long long[::1] ids, double[:, ::1] rows):
    cdef Py_ssize_t R = ids.shape[0], D = rows.shape[1]
    cdef Py_ssize_t r, d, t
    for r in range(R):
        t = ids[r]
        for d in range(D):
            table[t, d] += rows[r, d]


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, t)
    cdef double bc2 = 1.0 - pow(beta2, t)
    cdef Py_ssize_t i
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)

"""Pure-NumPy reference kernels.

Fallback backend used when the compiled extension is unavailable (or when
forced via TEXTMIX_BACKEND=python). Matrix products go through np.einsum
rather than BLAS: einsum accumulates every output element over k in the
same order regardless of row position, which keeps forward passes bitwise
equivariant under batch permutation. BLAS gemm does not guarantee that.

All kernels take and return C-contiguous float64 arrays and perform no
input validation; callers (textmix.tensor) own the contracts.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def mm(a, b):
    return np.einsum("mk,kn->mn", a, b)


def bmm(a, b):
    return np.einsum("gmk,gkn->gmn", a, b)


def softmax2d(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def softmax2d_grad(out, gout):
    dot = np.sum(out * gout, axis=1, keepdims=True)
    return out * (gout - dot)


def layernorm2d(x, gamma, beta, eps):
    mean = np.mean(x, axis=1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return gamma * xhat + beta, xhat, inv_std[:, 0].copy()


def layernorm2d_grad(xhat, inv_std, gamma, gout):
    d = xhat.shape[1]
    ggamma = np.sum(gout * xhat, axis=0)
    gbeta = np.sum(gout, axis=0)
    h = gout * gamma
    hsum = np.sum(h, axis=1, keepdims=True)
    hx = np.sum(h * xhat, axis=1, keepdims=True)
    gx = (inv_std[:, None] / d) * (d * h - hsum - xhat * hx)
    return gx, ggamma, gbeta


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x, gout):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return gout * (cdf + x * pdf)


def softce(logits, targets):
    m = np.max(logits, axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - lse
    loss = float(np.mean(-np.sum(targets * logp, axis=1)))
    return loss, logp


def softce_grad(logp, targets, gscale):
    b = logp.shape[0]
    return (np.exp(logp) - targets) * (gscale / b)


def scatter_add(table, ids, rows):
    np.add.at(table, ids, rows)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)

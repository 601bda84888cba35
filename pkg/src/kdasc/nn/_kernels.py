"""Fused numba kernels for the memory-bound layers.

All kernels take C-contiguous 2-D ``(M, C)`` views (channels last) and
accumulate reductions in float64. Loops run in a fixed order, so results are
bit-reproducible.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def relu_forward(x, out, mask):
    flat_x = x.ravel()
    flat_o = out.ravel()
    flat_m = mask.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        if v > 0:
            flat_o[i] = v
            flat_m[i] = True
        else:
            flat_o[i] = 0
            flat_m[i] = False


@nb.njit(cache=True)
def relu_backward(g, mask, out):
    flat_g = g.ravel()
    flat_m = mask.ravel()
    flat_o = out.ravel()
    for i in range(flat_g.size):
        flat_o[i] = flat_g[i] if flat_m[i] else 0


@nb.njit(cache=True)
def channel_moments(x):
    m, c = x.shape
    s = np.zeros(c)
    for i in range(m):
        for j in range(c):
            s[j] += x[i, j]
    mean = s / m
    ss = np.zeros(c)
    for i in range(m):
        for j in range(c):
            d = x[i, j] - mean[j]
            ss[j] += d * d
    return mean, ss / m


@nb.njit(cache=True)
def bn_normalize(x, mean, inv_std, gamma, beta, xhat, out):
    m, c = x.shape
    for i in range(m):
        for j in range(c):
            h = (x[i, j] - mean[j]) * inv_std[j]
            xhat[i, j] = h
            out[i, j] = h * gamma[j] + beta[j]


@nb.njit(cache=True)
def bn_grad_sums(g, xhat):
    m, c = g.shape
    sg = np.zeros(c)
    sgx = np.zeros(c)
    for i in range(m):
        for j in range(c):
            sg[j] += g[i, j]
            sgx[j] += g[i, j] * xhat[i, j]
    return sg, sgx


@nb.njit(cache=True)
def bn_train_backward(g, xhat, scale, sg, sgx, out):
    m, c = g.shape
    for i in range(m):
        for j in range(c):
            out[i, j] = scale[j] * (m * g[i, j] - sg[j] - xhat[i, j] * sgx[j])


@nb.njit(cache=True)
def avgpool_forward(x, ph, pw, out):
    n, h, w, c = x.shape
    oh, ow = h // ph, w // pw
    inv = 1.0 / (ph * pw)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for k in range(c):
                    s = 0.0
                    for di in range(ph):
                        for dj in range(pw):
                            s += x[b, i * ph + di, j * pw + dj, k]
                    out[b, i, j, k] = s * inv


@nb.njit(cache=True)
def avgpool_backward(g, ph, pw, out):
    n, oh, ow, c = g.shape
    inv = 1.0 / (ph * pw)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for k in range(c):
                    v = g[b, i, j, k] * inv
                    for di in range(ph):
                        for dj in range(pw):
                            out[b, i * ph + di, j * pw + dj, k] = v

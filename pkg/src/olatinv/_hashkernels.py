"""Sequential numba kernels for multi-resolution hash-grid interpolation.

All kernels recompute cell indices and trilinear weights from the input
points instead of caching them; that keeps memory flat at the cost of a few
integer ops per corner.  Loops run in a fixed order so accumulation into the
table gradient is reproducible.
"""

import numpy as np
from numba import njit

PRIMES = (np.uint64(73856093), np.uint64(19349663), np.uint64(83492791))


@njit(cache=True, inline="always")
def _cell(x, n):
    u = (x + 1.0) * 0.5 * n
    i = int(np.floor(u))
    if i < 0:
        i = 0
    elif i > n - 1:
        i = n - 1
    return i, u - i


@njit(cache=True, inline="always")
def _index(c0, c1, c2, n, dense, tsize):
    if dense:
        return np.int64(c0 + (n + 1) * (c1 + (n + 1) * c2))
    h = (np.uint64(c0) * np.uint64(73856093)) ^ (np.uint64(c1) * np.uint64(19349663)) ^ (
        np.uint64(c2) * np.uint64(83492791))
    return np.int64(h % np.uint64(tsize))


@njit(cache=True)
def encode(x, table, res, dense):
    npts = x.shape[0]
    nlev, tsize, nfeat = table.shape
    out = np.zeros((npts, nlev, nfeat))
    ii = np.empty(3, np.int64)
    ff = np.empty(3)
    for p in range(npts):
        for lev in range(nlev):
            n = res[lev]
            for d in range(3):
                ii[d], ff[d] = _cell(x[p, d], n)
            for c in range(8):
                b0 = c & 1
                b1 = (c >> 1) & 1
                b2 = (c >> 2) & 1
                w = (ff[0] if b0 else 1.0 - ff[0]) * (ff[1] if b1 else 1.0 - ff[1]) * (ff[2] if b2 else 1.0 - ff[2])
                idx = _index(ii[0] + b0, ii[1] + b1, ii[2] + b2, n, dense[lev], tsize)
                for f in range(nfeat):
                    out[p, lev, f] += w * table[lev, idx, f]
    return out


@njit(cache=True)
def grad_table(x, gout, res, dense, tsize):
    npts = x.shape[0]
    nlev, nfeat = gout.shape[1], gout.shape[2]
    gt = np.zeros((nlev, tsize, nfeat))
    ii = np.empty(3, np.int64)
    ff = np.empty(3)
    for p in range(npts):
        for lev in range(nlev):
            n = res[lev]
            for d in range(3):
                ii[d], ff[d] = _cell(x[p, d], n)
            for c in range(8):
                b0 = c & 1
                b1 = (c >> 1) & 1
                b2 = (c >> 2) & 1
                w = (ff[0] if b0 else 1.0 - ff[0]) * (ff[1] if b1 else 1.0 - ff[1]) * (ff[2] if b2 else 1.0 - ff[2])
                idx = _index(ii[0] + b0, ii[1] + b1, ii[2] + b2, n, dense[lev], tsize)
                for f in range(nfeat):
                    gt[lev, idx, f] += w * gout[p, lev, f]
    return gt


@njit(cache=True, inline="always")
def _dweights(ff, b0, b1, b2, scale, out):
    # d w / d x_d for one corner, x in [-1, 1]
    s0 = 1.0 if b0 else -1.0
    s1 = 1.0 if b1 else -1.0
    s2 = 1.0 if b2 else -1.0
    w0 = ff[0] if b0 else 1.0 - ff[0]
    w1 = ff[1] if b1 else 1.0 - ff[1]
    w2 = ff[2] if b2 else 1.0 - ff[2]
    out[0] = s0 * w1 * w2 * scale
    out[1] = w0 * s1 * w2 * scale
    out[2] = w0 * w1 * s2 * scale


@njit(cache=True)
def contract(x, table, res, dense, u):
    """J[p, d] = sum_{l,c,f} u[p,l,f] * table[l, idx_c, f] * dw_c/dx_d."""
    npts = x.shape[0]
    nlev, tsize, nfeat = table.shape
    out = np.zeros((npts, 3))
    ii = np.empty(3, np.int64)
    ff = np.empty(3)
    dw = np.empty(3)
    for p in range(npts):
        for lev in range(nlev):
            n = res[lev]
            scale = 0.5 * n
            for d in range(3):
                ii[d], ff[d] = _cell(x[p, d], n)
            for c in range(8):
                b0 = c & 1
                b1 = (c >> 1) & 1
                b2 = (c >> 2) & 1
                _dweights(ff, b0, b1, b2, scale, dw)
                idx = _index(ii[0] + b0, ii[1] + b1, ii[2] + b2, n, dense[lev], tsize)
                s = 0.0
                for f in range(nfeat):
                    s += u[p, lev, f] * table[lev, idx, f]
                out[p, 0] += s * dw[0]
                out[p, 1] += s * dw[1]
                out[p, 2] += s * dw[2]
    return out


@njit(cache=True)
def contract_backward(x, table, res, dense, u, gj, need_u, need_table, need_x):
    """Adjoints of ``contract`` for u, table and (in-cell) x."""
    npts = x.shape[0]
    nlev, tsize, nfeat = table.shape
    gu = np.zeros((npts, nlev, nfeat)) if need_u else np.zeros((1, 1, 1))
    gt = np.zeros((nlev, tsize, nfeat)) if need_table else np.zeros((1, 1, 1))
    gx = np.zeros((npts, 3))
    ii = np.empty(3, np.int64)
    ff = np.empty(3)
    dw = np.empty(3)
    wk = np.empty(3)
    sg = np.empty(3)
    for p in range(npts):
        for lev in range(nlev):
            n = res[lev]
            scale = 0.5 * n
            for d in range(3):
                ii[d], ff[d] = _cell(x[p, d], n)
            for c in range(8):
                b0 = c & 1
                b1 = (c >> 1) & 1
                b2 = (c >> 2) & 1
                _dweights(ff, b0, b1, b2, scale, dw)
                idx = _index(ii[0] + b0, ii[1] + b1, ii[2] + b2, n, dense[lev], tsize)
                coef = gj[p, 0] * dw[0] + gj[p, 1] * dw[1] + gj[p, 2] * dw[2]
                s = 0.0
                for f in range(nfeat):
                    if need_u:
                        gu[p, lev, f] += coef * table[lev, idx, f]
                    if need_table:
                        gt[lev, idx, f] += coef * u[p, lev, f]
                    s += u[p, lev, f] * table[lev, idx, f]
                if need_x:
                    wk[0] = ff[0] if b0 else 1.0 - ff[0]
                    wk[1] = ff[1] if b1 else 1.0 - ff[1]
                    wk[2] = ff[2] if b2 else 1.0 - ff[2]
                    sg[0] = 1.0 if b0 else -1.0
                    sg[1] = 1.0 if b1 else -1.0
                    sg[2] = 1.0 if b2 else -1.0
                    s2 = s * scale * scale
                    # mixed second derivatives; the pure ones vanish for trilinear weights
                    h01 = sg[0] * sg[1] * wk[2] * s2
                    h02 = sg[0] * sg[2] * wk[1] * s2
                    h12 = sg[1] * sg[2] * wk[0] * s2
                    gx[p, 0] += gj[p, 1] * h01 + gj[p, 2] * h02
                    gx[p, 1] += gj[p, 0] * h01 + gj[p, 2] * h12
                    gx[p, 2] += gj[p, 0] * h02 + gj[p, 1] * h12
    return gu, gt, gx

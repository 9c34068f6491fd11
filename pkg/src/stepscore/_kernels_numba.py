"""Numba-compiled hot kernels; same contracts as ``_kernels_numpy``."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def dilated_conv_forward(x, w, b, dilation):
    num_frames, d_in = x.shape
    d_out, _, k = w.shape
    half = k // 2
    y = np.empty((num_frames, d_out), dtype=x.dtype)
    for t in range(num_frames):
        for o in range(d_out):
            y[t, o] = b[o]
    for tap in range(k):
        off = (tap - half) * dilation
        lo = max(0, -off)
        hi = min(num_frames, num_frames - off)
        wt = w[:, :, tap]
        for t in range(lo, hi):
            xs = x[t + off]
            for o in range(d_out):
                acc = 0.0
                for i in range(d_in):
                    acc += wt[o, i] * xs[i]
                y[t, o] += acc
    return y


@njit(cache=True)
def dilated_conv_backward(x, w, dilation, dy):
    num_frames, d_in = x.shape
    d_out, _, k = w.shape
    half = k // 2
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(d_out, dtype=x.dtype)
    for t in range(num_frames):
        for o in range(d_out):
            db[o] += dy[t, o]
    for tap in range(k):
        off = (tap - half) * dilation
        lo = max(0, -off)
        hi = min(num_frames, num_frames - off)
        wt = w[:, :, tap]
        for t in range(lo, hi):
            g = dy[t]
            xs = x[t + off]
            for o in range(d_out):
                go = g[o]
                for i in range(d_in):
                    dx[t + off, i] += go * wt[o, i]
                    dw[o, i, tap] += go * xs[i]
    return dx, dw, db


@njit(cache=True)
def linear_attention_core(p, kp, v, eps):
    num_frames, dim = p.shape
    dim_v = v.shape[1]
    s = np.zeros((dim, dim_v), dtype=p.dtype)
    z = np.zeros(dim, dtype=p.dtype)
    for j in range(num_frames):
        for a in range(dim):
            ka = kp[j, a]
            z[a] += ka
            for bcol in range(dim_v):
                s[a, bcol] += ka * v[j, bcol]
    num = np.empty((num_frames, dim_v), dtype=p.dtype)
    den = np.empty(num_frames, dtype=p.dtype)
    out = np.empty((num_frames, dim_v), dtype=p.dtype)
    for i in range(num_frames):
        d = eps
        for a in range(dim):
            d += p[i, a] * z[a]
        den[i] = d
        for bcol in range(dim_v):
            acc = 0.0
            for a in range(dim):
                acc += p[i, a] * s[a, bcol]
            num[i, bcol] = acc
            out[i, bcol] = acc / d
    return out, num, den, s, z


@njit(cache=True)
def linear_attention_core_backward(p, kp, v, num, den, s, z, dout):
    num_frames, dim = p.shape
    dim_v = v.shape[1]
    gn = np.empty((num_frames, dim_v), dtype=p.dtype)
    dden = np.empty(num_frames, dtype=p.dtype)
    for i in range(num_frames):
        acc = 0.0
        for bcol in range(dim_v):
            g = dout[i, bcol] / den[i]
            gn[i, bcol] = g
            acc += g * num[i, bcol]
        dden[i] = -acc / den[i]
    ds = np.zeros((dim, dim_v), dtype=p.dtype)
    for i in range(num_frames):
        for a in range(dim):
            pa = p[i, a]
            for bcol in range(dim_v):
                ds[a, bcol] += pa * gn[i, bcol]
    dp = np.empty((num_frames, dim), dtype=p.dtype)
    for i in range(num_frames):
        for a in range(dim):
            acc = dden[i] * z[a]
            for bcol in range(dim_v):
                acc += gn[i, bcol] * s[a, bcol]
            dp[i, a] = acc
    dz = np.zeros(dim, dtype=p.dtype)
    for i in range(num_frames):
        for a in range(dim):
            dz[a] += dden[i] * p[i, a]
    dkp = np.empty((num_frames, dim), dtype=p.dtype)
    dv = np.empty((num_frames, dim_v), dtype=p.dtype)
    for j in range(num_frames):
        for a in range(dim):
            acc = dz[a]
            for bcol in range(dim_v):
                acc += ds[a, bcol] * v[j, bcol]
            dkp[j, a] = acc
        for bcol in range(dim_v):
            acc = 0.0
            for a in range(dim):
                acc += kp[j, a] * ds[a, bcol]
            dv[j, bcol] = acc
    return dp, dkp, dv

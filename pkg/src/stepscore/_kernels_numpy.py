"""Pure-numpy reference implementations of the hot kernels.

Selected at import time by ``STEPSCORE_BACKEND=numpy`` (see ``backend``);
also the ground truth the numba kernels are tested against.
"""

from __future__ import annotations

import numpy as np


def dilated_conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int) -> np.ndarray:
    """Temporal conv with symmetric zero padding.

    x: (T, D_in), w: (D_out, D_in, k), b: (D_out,) -> (T, D_out).
    """
    num_frames = x.shape[0]
    k = w.shape[2]
    half = k // 2
    y = np.broadcast_to(b, (num_frames, b.shape[0])).copy()
    for tap in range(k):
        off = (tap - half) * dilation
        lo = max(0, -off)
        hi = min(num_frames, num_frames - off)
        if lo < hi:
            y[lo:hi] += x[lo + off : hi + off] @ w[:, :, tap].T
    return y


def dilated_conv_backward(
    x: np.ndarray, w: np.ndarray, dilation: int, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of dilated_conv_forward w.r.t. (x, w, b)."""
    num_frames = x.shape[0]
    k = w.shape[2]
    half = k // 2
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = dy.sum(axis=0)
    for tap in range(k):
        off = (tap - half) * dilation
        lo = max(0, -off)
        hi = min(num_frames, num_frames - off)
        if lo < hi:
            dx[lo + off : hi + off] += dy[lo:hi] @ w[:, :, tap]
            dw[:, :, tap] += dy[lo:hi].T @ x[lo + off : hi + off]
    return dx, dw, db


def linear_attention_core(
    p: np.ndarray, kp: np.ndarray, v: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Kernelized attention with shared key/value summaries.

    p = theta(Q), kp = theta(K), all (T, D). Returns (out, num, den, s, z)
    where s and z are the reused key-value and key sums.
    """
    s = kp.T @ v
    z = kp.sum(axis=0)
    num = p @ s
    den = p @ z + eps
    out = num / den[:, None]
    return out, num, den, s, z


def linear_attention_core_backward(
    p: np.ndarray,
    kp: np.ndarray,
    v: np.ndarray,
    num: np.ndarray,
    den: np.ndarray,
    s: np.ndarray,
    z: np.ndarray,
    dout: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of linear_attention_core w.r.t. (p, kp, v)."""
    gn = dout / den[:, None]
    dden = -(gn * num).sum(axis=1) / den
    ds = p.T @ gn
    dp = gn @ s.T + dden[:, None] * z[None, :]
    dkp = v @ ds.T + (p.T @ dden)[None, :]
    dv = kp @ ds
    return dp, dkp, dv

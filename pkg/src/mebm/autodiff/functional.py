"""Differentiable neural-network operations on :class:`Tensor`."""

from __future__ import annotations

import math

import numpy as np

from .. import rng as _rng
from .tensor import Tensor, _norm_axis, _wrap, make_result


# -- normalizing maps -----------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    (axis,) = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True, dtype=np.float64).astype(s.dtype)
        return (s * (g - dot),)

    return make_result(s, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    (axis,) = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True, dtype=np.float64)).astype(x.dtype)
    out = z - lse

    def bw(g):
        total = g.sum(axis=axis, keepdims=True, dtype=np.float64).astype(out.dtype)
        return (g - np.exp(out) * total,)

    return make_result(out, (x,), bw, "log_softmax")


# -- activations ----------------------------------------------------------------

def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GELU in its tanh form, ``0.5 x (1 + tanh(c (x + 0.044715 x^3)))``."""
    x = _wrap(x)
    xd = x.data
    # in-place arithmetic keeps the number of full-size temporaries down
    th = xd * xd
    th *= 0.044715 * _GELU_C
    th += _GELU_C
    th *= xd
    np.tanh(th, out=th)
    half = th + 1.0
    half *= 0.5

    def bw(g):
        dinner = xd * xd
        dinner *= 3.0 * 0.044715 * _GELU_C
        dinner += _GELU_C
        t = th * th
        np.subtract(1.0, t, out=t)
        t *= dinner
        t *= xd
        t *= 0.5
        t += half
        t *= g
        return (t,)

    return make_result(xd * half, (x,), bw, "gelu")


def activation(x, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(x)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation '{kind}'")


def glu(x, axis: int = 1) -> Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    x = _wrap(x)
    n = x.shape[axis]
    if n % 2:
        raise ValueError(f"glu needs an even extent along axis {axis}, got {n}")
    half = n // 2
    a_idx = [slice(None)] * x.ndim
    b_idx = [slice(None)] * x.ndim
    a_idx[axis] = slice(0, half)
    b_idx[axis] = slice(half, n)
    a_idx, b_idx = tuple(a_idx), tuple(b_idx)
    a = x.data[a_idx]
    gate = 0.5 * (1.0 + np.tanh(0.5 * x.data[b_idx]))

    def bw(g):
        dx = np.empty_like(x.data)
        dx[a_idx] = g * gate
        dx[b_idx] = g * a * gate * (1.0 - gate)
        return (dx,)

    return make_result(a * gate, (x,), bw, "glu")


# -- convolution ----------------------------------------------------------------

def conv1d(x, w, bias=None, dilation: int = 1, groups: int = 1) -> Tensor:
    """Stride-1 1-D convolution with zero "same" padding.

    ``x`` is (B, Cin, T) and ``w`` is (Cout, Cin/groups, K) with K odd.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {x.shape} and {w.shape}")
    B, cin, T = x.shape
    cout, cg, K = w.shape
    if dilation < 1 or groups < 1:
        raise ValueError("dilation and groups must be >= 1")
    if cin % groups or cout % groups:
        raise ValueError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cg != cin // groups:
        raise ValueError(f"weight expects {cg} input channels per group, input gives {cin // groups}")
    if K % 2 == 0:
        raise ValueError(f"even kernel size {K} has no symmetric same padding")
    p = (K - 1) * dilation // 2

    if groups == 1:
        out, bw_core = _conv_dense(x.data, w.data, dilation, p)
    elif cg == 1 and cout == groups:
        out, bw_core = _conv_depthwise(x.data, w.data, dilation, p)
    else:
        out, bw_core = _conv_grouped(x.data, w.data, dilation, p, groups)

    parents = (x, w) if bias is None else (x, w, _wrap(bias))
    if bias is not None:
        b = parents[2]
        if b.shape != (cout,):
            raise ValueError(f"bias shape {b.shape} != ({cout},)")
        out = out + b.data[None, :, None]

    def bw(g):
        dx, dw = bw_core(g, x.requires_grad, w.requires_grad)
        if bias is None:
            return dx, dw
        db = g.sum(axis=(0, 2), dtype=np.float64).astype(g.dtype)
        return dx, dw, db

    return make_result(out, parents, bw, "conv1d")


def _conv_dense(x: np.ndarray, w: np.ndarray, d: int, p: int):
    # Time-major, batch-flattened layout: the padded sequences are stacked into
    # one (B*(T+2p), Cin) matrix so every tap is a single contiguous GEMM.  Rows
    # straddling two sequences are computed and discarded.
    B, cin, T = x.shape
    cout, _, K = w.shape
    tp = T + 2 * p
    L = B * tp - 2 * p
    xf = np.zeros((B, tp, cin), dtype=x.dtype)
    xf[:, p:p + T] = x.transpose(0, 2, 1)
    xf = xf.reshape(B * tp, cin)
    wt = np.ascontiguousarray(w.transpose(2, 1, 0))  # (K, Cin, Cout)
    acc = np.empty((B * tp, cout), dtype=x.dtype)
    np.matmul(xf[0:L], wt[0], out=acc[:L])
    for k in range(1, K):
        acc[:L] += xf[k * d:k * d + L] @ wt[k]
    out = np.ascontiguousarray(acc.reshape(B, tp, cout)[:, :T].transpose(0, 2, 1))

    def bw(g, need_x, need_w):
        gf = np.zeros((B, tp, cout), dtype=g.dtype)
        gf[:, :T] = g.transpose(0, 2, 1)
        gf = gf.reshape(B * tp, cout)[:L]
        dx = dw = None
        if need_w:
            dw = np.empty_like(w)
            for k in range(K):
                dw[:, :, k] = gf.T @ xf[k * d:k * d + L]
        if need_x:
            dxf = np.zeros((B * tp, cin), dtype=g.dtype)
            for k in range(K):
                dxf[k * d:k * d + L] += gf @ wt[k].T
            dx = np.ascontiguousarray(dxf.reshape(B, tp, cin)[:, p:p + T].transpose(0, 2, 1))
        return dx, dw

    return out, bw


def _conv_depthwise(x: np.ndarray, w: np.ndarray, d: int, p: int):
    B, C, T = x.shape
    K = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    taps = w[:, 0, :]  # (C, K)
    out = np.zeros_like(x)
    for k in range(K):
        out += taps[None, :, k, None] * xp[:, :, k * d:k * d + T]

    def bw(g, need_x, need_w):
        dx = dw = None
        if need_w:
            dw = np.empty_like(w)
            for k in range(K):
                dw[:, 0, k] = np.einsum("bct,bct->c", g, xp[:, :, k * d:k * d + T])
        if need_x:
            dxp = np.zeros_like(xp)
            for k in range(K):
                dxp[:, :, k * d:k * d + T] += taps[None, :, k, None] * g
            dx = dxp[:, :, p:p + T].copy()
        return dx, dw

    return out, bw


def _conv_grouped(x: np.ndarray, w: np.ndarray, d: int, p: int, groups: int):
    cin_g = x.shape[1] // groups
    cout_g = w.shape[0] // groups
    parts = []
    for gi in range(groups):
        xs = x[:, gi * cin_g:(gi + 1) * cin_g]
        ws = w[gi * cout_g:(gi + 1) * cout_g]
        parts.append(_conv_dense(xs, ws, d, p))
    out = np.concatenate([o for o, _ in parts], axis=1)

    def bw(g, need_x, need_w):
        dxs, dws = [], []
        for gi, (_, core) in enumerate(parts):
            dxi, dwi = core(np.ascontiguousarray(g[:, gi * cout_g:(gi + 1) * cout_g]), need_x, need_w)
            dxs.append(dxi)
            dws.append(dwi)
        dx = np.concatenate(dxs, axis=1) if need_x else None
        dw = np.concatenate(dws, axis=0) if need_w else None
        return dx, dw

    return out, bw


# -- normalization and regularization ---------------------------------------------

def _channel_sum(a: np.ndarray) -> np.ndarray:
    """Sum over every axis but 1; rows are summed in the input dtype, the rest in float64."""
    if a.ndim == 3:
        a = a.sum(axis=2)
    return a.sum(axis=0, dtype=np.float64)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of (B, C) or (B, C, T) input.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, PyTorch convention).
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    n = x.size // x.shape[1]
    if training:
        if n < 2:
            raise ValueError("batch norm in training mode needs more than one value per channel")
        mu = _channel_sum(x.data) / n
        centered = x.data - mu.astype(x.dtype).reshape(bshape)
        var = _channel_sum(centered * centered) / n
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
        centered = x.data - mu.astype(x.dtype).reshape(bshape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
    xhat = centered * inv_std
    g_ = gamma.data.reshape(bshape)
    out = xhat * g_ + beta.data.reshape(bshape)

    def bw(g):
        dgamma = _channel_sum(g * xhat).astype(x.dtype)
        dbeta = _channel_sum(g).astype(x.dtype)
        if training:
            s1 = (dbeta * gamma.data / n).astype(x.dtype).reshape(bshape)
            s2 = (dgamma * gamma.data / n).astype(x.dtype).reshape(bshape)
            dx = g * g_
            dx -= s1
            dx -= xhat * s2
            dx *= inv_std
        else:
            dx = g * (g_ * inv_std)
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), bw, "batch_norm")


def dropout(x, p: float, training: bool, key: int = 0) -> Tensor:
    """Inverted dropout with a counter-based mask keyed by ``key``.

    Element ``i`` keeps its value when 32-bit word ``i`` of the counter
    stream (little-endian halves, low half first) is at least ``p * 2**32``.
    """
    x = _wrap(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    counters = _rng.counter_u64(key, (x.size + 1) // 2).astype("<u8", copy=False)
    words = counters.view("<u4")[:x.size]
    keep = (words >= np.uint32(min(int(p * 2.0**32), 2**32 - 1))).reshape(x.shape)
    mask = keep * np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")

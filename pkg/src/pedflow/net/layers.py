"""Building blocks: LSTM sequence passes, softmax, attention.

Forward functions return a cache tuple that the matching backward
consumes; backward functions return input gradients plus per-parameter
gradients in caller-supplied dicts.
"""

from __future__ import annotations

import numpy as np

from .. import kernels


def recurrent_cell(x, h, c, wx, wh, b):
    """One LSTM step. x (B,din), h/c (B,H) -> (h', c')."""
    pre = x @ wx + h @ wh + b
    h2, c2, _ = kernels.lstm_gates_forward(pre, c)
    return h2, c2


def lstm_forward(x, wx, wh, b):
    """Run an LSTM over x (B,T,din) from zero state.

    Returns (h_seq (B,T,H), cache)."""
    bsz, steps, _ = x.shape
    hidden = wh.shape[0]
    h = np.zeros((bsz, hidden))
    c = np.zeros((bsz, hidden))
    h_seq = np.empty((bsz, steps, hidden))
    trace = []
    for t in range(steps):
        pre = x[:, t] @ wx + h @ wh + b
        h_new, c_new, act = kernels.lstm_gates_forward(pre, c)
        trace.append((h, c, act, c_new))
        h, c = h_new, c_new
        h_seq[:, t] = h
    return h_seq, (x, wx, wh, trace)


def lstm_backward(dh_seq, cache, grads, prefix):
    """Backprop through lstm_forward.

    dh_seq (B,T,H) carries the gradient arriving at each step's hidden
    output. Parameter gradients are accumulated into grads under
    '<prefix>_Wx', '<prefix>_Wh', '<prefix>_b'. Returns dx (B,T,din).
    """
    x, wx, wh, trace = cache
    bsz, steps, _ = x.shape
    hidden = wh.shape[0]
    dwx = grads[f"{prefix}_Wx"]
    dwh = grads[f"{prefix}_Wh"]
    db = grads[f"{prefix}_b"]
    dx = np.empty_like(x)
    dh_next = np.zeros((bsz, hidden))
    dc_next = np.zeros((bsz, hidden))
    for t in reversed(range(steps)):
        h_prev, c_prev, act, c = trace[t]
        dh = dh_seq[:, t] + dh_next
        dpre, dc_prev = kernels.lstm_gates_backward(dh, dc_next, act, c_prev, c)
        dwx += x[:, t].T @ dpre
        dwh += h_prev.T @ dpre
        db += dpre.sum(axis=0)
        dx[:, t] = dpre @ wx.T
        dh_next = dpre @ wh.T
        dc_next = dc_prev
    return dx


def softmax(scores, axis=-1):
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def scaled_attention(q, k, v, mask=None):
    """Batched scaled dot-product attention.

    q (B,A), k (B,T,A), v (B,T,Av); mask (B,T) bool, True = attend.
    Masked positions receive exactly zero weight. Returns
    (ctx (B,Av), alpha (B,T), cache)."""
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = np.einsum("ba,bta->bt", q, k) * scale
    if mask is not None:
        if not mask.any(axis=1).all():
            raise ValueError("attention mask excludes every position for some row")
        scores = np.where(mask, scores, -np.inf)
    alpha = softmax(scores, axis=1)
    ctx = np.einsum("bt,bta->ba", alpha, v)
    return ctx, alpha, (q, k, v, alpha, scale)


def scaled_attention_backward(dctx, dalpha_extra, cache):
    """Gradients of scaled_attention. dalpha_extra may be None."""
    q, k, v, alpha, scale = cache
    dv = alpha[:, :, None] * dctx[:, None, :]
    dalpha = np.einsum("ba,bta->bt", dctx, v)
    if dalpha_extra is not None:
        dalpha = dalpha + dalpha_extra
    # softmax jacobian: a * (da - sum(a * da))
    inner = (alpha * dalpha).sum(axis=1, keepdims=True)
    dscores = alpha * (dalpha - inner)
    dq = np.einsum("bt,bta->ba", dscores, k) * scale
    dk = dscores[:, :, None] * q[:, None, :] * scale
    return dq, dk, dv


def attention(query, keys, values, mask=None, return_weights=False):
    """Single-query convenience wrapper over scaled_attention.

    query (A,), keys (T,A), values (T,Av), optional mask (T,) bool."""
    q = np.asarray(query, dtype=np.float64)[None]
    k = np.asarray(keys, dtype=np.float64)[None]
    v = np.asarray(values, dtype=np.float64)[None]
    m = None if mask is None else np.asarray(mask, dtype=bool)[None]
    ctx, alpha, _ = scaled_attention(q, k, v, m)
    if return_weights:
        return ctx[0], alpha[0]
    return ctx[0]

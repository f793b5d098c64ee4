"""Pure numpy fallback for the compiled kernels.

Same contracts as _kernels.pyx. Gate order in all LSTM arrays is
[input | forget | cell | output] along the last axis.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def sigmoid(x):
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_gates_forward(preact, c_prev):
    """preact (B,4H), c_prev (B,H) -> h, c, act where act stacks the
    activated gates (B,4H) for reuse in the backward pass."""
    H = c_prev.shape[1]
    i = sigmoid(preact[:, :H])
    f = sigmoid(preact[:, H:2 * H])
    g = np.tanh(preact[:, 2 * H:3 * H])
    o = sigmoid(preact[:, 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    act = np.concatenate([i, f, g, o], axis=1)
    return h, c, act


def lstm_gates_backward(dh, dc_next, act, c_prev, c):
    """Reverse of lstm_gates_forward.

    dh, dc_next: gradients flowing into h and c at this step.
    Returns (dpreact (B,4H), dc_prev (B,H)).
    """
    H = c_prev.shape[1]
    i = act[:, :H]
    f = act[:, H:2 * H]
    g = act[:, 2 * H:3 * H]
    o = act[:, 3 * H:]
    tc = np.tanh(c)
    dc = dc_next + dh * o * (1.0 - tc * tc)
    dpre = np.empty_like(act)
    dpre[:, :H] = dc * g * i * (1.0 - i)
    dpre[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
    dpre[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
    dpre[:, 3 * H:] = dh * tc * o * (1.0 - o)
    dc_prev = dc * f
    return dpre, dc_prev


def _bin_polar(dx, dy, cos_h, sin_h, ring_edges, n_sectors):
    """Map relative offsets to flat ring*sector indices; -1 if out of range."""
    r = np.hypot(dx, dy)
    # rotate into the agent frame: x forward, y to the left
    xf = cos_h * dx + sin_h * dy
    yf = -sin_h * dx + cos_h * dy
    theta = np.arctan2(yf, xf)
    width = 2.0 * np.pi / n_sectors
    sec = np.floor(((theta + 0.5 * width) % (2.0 * np.pi)) / width).astype(np.int64)
    sec = np.minimum(sec, n_sectors - 1)
    ring = np.searchsorted(ring_edges, r, side="left")
    idx = ring * n_sectors + sec
    return np.where(r <= ring_edges[-1], idx, -1)


def occupancy_counts(rel, cos_h, sin_h, ring_edges, n_sectors):
    """rel (m,2) neighbor offsets from the center -> int64 counts (R*S,)."""
    nbins = len(ring_edges) * n_sectors
    counts = np.zeros(nbins, dtype=np.int64)
    if len(rel) == 0:
        return counts
    idx = _bin_polar(rel[:, 0], rel[:, 1], cos_h, sin_h,
                     np.asarray(ring_edges, dtype=np.float64), n_sectors)
    idx = idx[idx >= 0]
    np.add.at(counts, idx, 1)
    return counts


def occupancy_counts_all(pos, cos_h, sin_h, ring_edges, n_sectors):
    """All-pairs occupancy. pos (n,2), cos_h/sin_h (n,) per-agent headings.
    Returns (n, R*S) int64 with each agent excluded from its own map."""
    n = len(pos)
    ring_edges = np.asarray(ring_edges, dtype=np.float64)
    nbins = len(ring_edges) * n_sectors
    out = np.zeros((n, nbins), dtype=np.int64)
    if n < 2:
        return out
    dx = pos[None, :, 0] - pos[:, None, 0]
    dy = pos[None, :, 1] - pos[:, None, 1]
    idx = _bin_polar(dx, dy, cos_h[:, None], sin_h[:, None], ring_edges, n_sectors)
    np.fill_diagonal(idx, -1)
    rows = np.repeat(np.arange(n), n)
    flat = idx.ravel()
    keep = flat >= 0
    np.add.at(out, (rows[keep], flat[keep]), 1)
    return out


def avoidance_terms(pos, a, b, gain, eps):
    """Pairwise repulsion sums.

    pos (n,2). For each i sums gain*sigmoid(-a*(r-b)) * (-r_hat) over the
    other agents. Pairs closer than eps contribute nothing and are counted
    in the second return value so the caller can resolve them.
    Returns (disp (n,2) float64, n_coincident (n,) int64).
    """
    n = len(pos)
    disp = np.zeros((n, 2), dtype=np.float64)
    ncoinc = np.zeros(n, dtype=np.int64)
    if n < 2:
        return disp, ncoinc
    dx = pos[None, :, 0] - pos[:, None, 0]
    dy = pos[None, :, 1] - pos[:, None, 1]
    r = np.hypot(dx, dy)
    off = np.eye(n, dtype=bool)
    near = (r < eps) & ~off
    ncoinc[:] = near.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = gain * sigmoid(-a * (r - b))
        w = np.where((r >= eps) & ~off, s / r, 0.0)
    disp[:, 0] = -(w * dx).sum(axis=1)
    disp[:, 1] = -(w * dy).sum(axis=1)
    return disp, ncoinc

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels.

Contract-identical to the pure numpy fallback in _kernels_py; that file
is the readable reference. Gate order is [input | forget | cell | output].
"""

from libc.math cimport atan2, exp, floor, fmod, sqrt, tanh

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "c"

cdef double TWO_PI = 6.283185307179586476925287


cdef inline double _sig(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(arr.shape, dtype=np.float64)
    cdef double[::1] src = arr.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t k
    for k in range(src.shape[0]):
        dst[k] = _sig(src[k])
    return out


def lstm_gates_forward(preact, c_prev):
    pre_arr = np.ascontiguousarray(preact, dtype=np.float64)
    cp_arr = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t B = pre_arr.shape[0]
    cdef Py_ssize_t H = cp_arr.shape[1]
    h_arr = np.empty((B, H), dtype=np.float64)
    c_arr = np.empty((B, H), dtype=np.float64)
    act_arr = np.empty((B, 4 * H), dtype=np.float64)
    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] cp = cp_arr
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] act = act_arr
    cdef Py_ssize_t bi, k
    cdef double gi, gf, gg, go, cc
    with nogil:
        for bi in range(B):
            for k in range(H):
                gi = _sig(pre[bi, k])
                gf = _sig(pre[bi, H + k])
                gg = tanh(pre[bi, 2 * H + k])
                go = _sig(pre[bi, 3 * H + k])
                cc = gf * cp[bi, k] + gi * gg
                c[bi, k] = cc
                h[bi, k] = go * tanh(cc)
                act[bi, k] = gi
                act[bi, H + k] = gf
                act[bi, 2 * H + k] = gg
                act[bi, 3 * H + k] = go
    return h_arr, c_arr, act_arr


def lstm_gates_backward(dh, dc_next, act, c_prev, c):
    dh_arr = np.ascontiguousarray(dh, dtype=np.float64)
    dcn_arr = np.ascontiguousarray(dc_next, dtype=np.float64)
    act_arr = np.ascontiguousarray(act, dtype=np.float64)
    cp_arr = np.ascontiguousarray(c_prev, dtype=np.float64)
    c_arr = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t B = dh_arr.shape[0]
    cdef Py_ssize_t H = dh_arr.shape[1]
    dpre_arr = np.empty((B, 4 * H), dtype=np.float64)
    dcp_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] vdh = dh_arr
    cdef double[:, ::1] vdcn = dcn_arr
    cdef double[:, ::1] vact = act_arr
    cdef double[:, ::1] vcp = cp_arr
    cdef double[:, ::1] vc = c_arr
    cdef double[:, ::1] dpre = dpre_arr
    cdef double[:, ::1] dcp = dcp_arr
    cdef Py_ssize_t bi, k
    cdef double gi, gf, gg, go, tc, dc
    with nogil:
        for bi in range(B):
            for k in range(H):
                gi = vact[bi, k]
                gf = vact[bi, H + k]
                gg = vact[bi, 2 * H + k]
                go = vact[bi, 3 * H + k]
                tc = tanh(vc[bi, k])
                dc = vdcn[bi, k] + vdh[bi, k] * go * (1.0 - tc * tc)
                dpre[bi, k] = dc * gg * gi * (1.0 - gi)
                dpre[bi, H + k] = dc * vcp[bi, k] * gf * (1.0 - gf)
                dpre[bi, 2 * H + k] = dc * gi * (1.0 - gg * gg)
                dpre[bi, 3 * H + k] = vdh[bi, k] * tc * go * (1.0 - go)
                dcp[bi, k] = dc * gf
    return dpre_arr, dcp_arr


cdef inline Py_ssize_t _polar_bin(double dx, double dy, double ch, double sh,
                                  double[::1] edges, Py_ssize_t n_sectors) noexcept nogil:
    """Flat ring*sector bin of one offset, or -1 when out of range."""
    cdef double r = sqrt(dx * dx + dy * dy)
    cdef Py_ssize_t nrings = edges.shape[0]
    if r > edges[nrings - 1]:
        return -1
    cdef Py_ssize_t ring = 0
    while ring < nrings - 1 and r > edges[ring]:
        ring += 1
    cdef double xf = ch * dx + sh * dy
    cdef double yf = -sh * dx + ch * dy
    cdef double width = TWO_PI / n_sectors
    cdef double m = fmod(atan2(yf, xf) + 0.5 * width, TWO_PI)
    if m < 0.0:
        m += TWO_PI
    cdef Py_ssize_t sec = <Py_ssize_t>floor(m / width)
    if sec >= n_sectors:
        sec = n_sectors - 1
    return ring * n_sectors + sec


def occupancy_counts(rel, cos_h, sin_h, ring_edges, n_sectors):
    rel_arr = np.ascontiguousarray(rel, dtype=np.float64).reshape(-1, 2)
    edges_arr = np.ascontiguousarray(ring_edges, dtype=np.float64)
    cdef Py_ssize_t S = int(n_sectors)
    out = np.zeros(edges_arr.shape[0] * S, dtype=np.int64)
    cdef double[:, ::1] vr = rel_arr
    cdef double[::1] ve = edges_arr
    cdef long long[::1] vo = out
    cdef double ch = cos_h, sh = sin_h
    cdef Py_ssize_t k, idx
    with nogil:
        for k in range(vr.shape[0]):
            idx = _polar_bin(vr[k, 0], vr[k, 1], ch, sh, ve, S)
            if idx >= 0:
                vo[idx] += 1
    return out


def occupancy_counts_all(pos, cos_h, sin_h, ring_edges, n_sectors):
    pos_arr = np.ascontiguousarray(pos, dtype=np.float64).reshape(-1, 2)
    ch_arr = np.ascontiguousarray(cos_h, dtype=np.float64)
    sh_arr = np.ascontiguousarray(sin_h, dtype=np.float64)
    edges_arr = np.ascontiguousarray(ring_edges, dtype=np.float64)
    cdef Py_ssize_t n = pos_arr.shape[0]
    cdef Py_ssize_t S = int(n_sectors)
    cdef Py_ssize_t nbins = edges_arr.shape[0] * S
    out = np.zeros((n, nbins), dtype=np.int64)
    if n < 2:
        return out
    cdef double[:, ::1] vp = pos_arr
    cdef double[::1] vch = ch_arr
    cdef double[::1] vsh = sh_arr
    cdef double[::1] ve = edges_arr
    cdef long long[:, ::1] vo = out
    cdef Py_ssize_t i, j, idx
    with nogil:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                idx = _polar_bin(vp[j, 0] - vp[i, 0], vp[j, 1] - vp[i, 1],
                                 vch[i], vsh[i], ve, S)
                if idx >= 0:
                    vo[i, idx] += 1
    return out


def avoidance_terms(pos, a, b, gain, eps):
    pos_arr = np.ascontiguousarray(pos, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = pos_arr.shape[0]
    disp = np.zeros((n, 2), dtype=np.float64)
    ncoinc = np.zeros(n, dtype=np.int64)
    if n < 2:
        return disp, ncoinc
    cdef double[:, ::1] vp = pos_arr
    cdef double[:, ::1] vd = disp
    cdef long long[::1] vn = ncoinc
    cdef double ca = a, cb = b, cg = gain, ce = eps
    cdef Py_ssize_t i, j
    cdef double dx, dy, r, w
    with nogil:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                dx = vp[j, 0] - vp[i, 0]
                dy = vp[j, 1] - vp[i, 1]
                r = sqrt(dx * dx + dy * dy)
                if r < ce:
                    vn[i] += 1
                    continue
                w = cg * _sig(-ca * (r - cb)) / r
                vd[i, 0] -= w * dx
                vd[i, 1] -= w * dy
    return disp, ncoinc

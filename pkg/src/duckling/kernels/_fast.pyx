# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors duckling.kernels.pure; see that module for the
shared conventions (clamped cosine ratios, exact symmetry, post-activation
ReLU masks, exact gate annihilation). Inner loops run over contiguous
memoryviews so the C compiler can vectorize them; arithmetic stays IEEE
(no fast-math) because the contracts guarantee exact zeros and clamps."""

import numpy as np

from libc.math cimport exp, log, pow, sqrt


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    # Four independent accumulators: a fixed summation order that the
    # compiler can pipeline/vectorize without reassociating on its own
    # (results stay deterministic for a given build).
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


def cosine_distance_matrix(emb):
    cdef const double[:, ::1] x = np.ascontiguousarray(emb, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n, n), dtype=np.float64)
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] norms = norms_arr
    cdef Py_ssize_t i, j
    cdef double cos, dist

    with nogil:
        for i in range(n):
            norms[i] = sqrt(_dot(&x[i, 0], &x[i, 0], d))
        for i in range(n):
            for j in range(i + 1, n):
                cos = _dot(&x[i, 0], &x[j, 0], d) / (norms[i] * norms[j])
                if cos > 1.0:
                    cos = 1.0
                elif cos < -1.0:
                    cos = -1.0
                dist = 1.0 - cos
                out[i, j] = dist
                out[j, i] = dist
    return out_arr


def mean_offdiagonal(dist):
    cdef const double[:, ::1] m = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += m[i, j]
            out[i] = acc / (n - 1)
    return out_arr


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double ez
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


def gated_forward(x, gate, adapter_w, adapter_b, head_w, head_b, out_w, out_b):
    cdef const double[:, ::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(gate, dtype=np.float64)
    cdef const double[:, ::1] wa = np.ascontiguousarray(adapter_w, dtype=np.float64)
    cdef const double[::1] ba = np.ascontiguousarray(adapter_b, dtype=np.float64)
    cdef const double[:, ::1] wh = np.ascontiguousarray(head_w, dtype=np.float64)
    cdef const double[::1] bh = np.ascontiguousarray(head_b, dtype=np.float64)
    cdef const double[::1] wo = np.ascontiguousarray(out_w, dtype=np.float64)
    cdef double bo = float(np.asarray(out_b).reshape(-1)[0]) if np.asarray(out_b).ndim else float(out_b)

    cdef Py_ssize_t nb = xx.shape[0]
    cdef Py_ssize_t nd = xx.shape[1]
    cdef Py_ssize_t na = wa.shape[0]
    cdef Py_ssize_t nh = wh.shape[0]

    adapter_arr = np.empty((nb, na), dtype=np.float64)
    head_arr = np.empty((nb, nh), dtype=np.float64)
    gated_arr = np.empty((nb, nh), dtype=np.float64)
    prob_arr = np.empty(nb, dtype=np.float64)
    cdef double[:, ::1] adapter_out = adapter_arr
    cdef double[:, ::1] head_out = head_arr
    cdef double[:, ::1] gated = gated_arr
    cdef double[::1] prob = prob_arr

    cdef Py_ssize_t b, i
    cdef double acc
    with nogil:
        for b in range(nb):
            for i in range(na):
                acc = ba[i] + _dot(&wa[i, 0], &xx[b, 0], nd)
                adapter_out[b, i] = acc if acc > 0.0 else 0.0
            for i in range(nh):
                acc = bh[i] + _dot(&wh[i, 0], &adapter_out[b, 0], na)
                head_out[b, i] = acc if acc > 0.0 else 0.0
            acc = bo
            for i in range(nh):
                gated[b, i] = g[b] * head_out[b, i]
                acc += wo[i] * gated[b, i]
            prob[b] = _sigmoid(acc)
    return adapter_arr, head_arr, gated_arr, prob_arr


def gated_backward(x, gate, y, sample_w, adapter_w, head_w, out_w,
                   adapter_out, head_out, gated, prob, gamma, alpha):
    cdef const double[:, ::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(gate, dtype=np.float64)
    cdef const double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] sw = np.ascontiguousarray(sample_w, dtype=np.float64)
    cdef const double[:, ::1] wa = np.ascontiguousarray(adapter_w, dtype=np.float64)
    cdef const double[:, ::1] wh = np.ascontiguousarray(head_w, dtype=np.float64)
    cdef const double[::1] wo = np.ascontiguousarray(out_w, dtype=np.float64)
    cdef const double[:, ::1] ao = np.ascontiguousarray(adapter_out, dtype=np.float64)
    cdef const double[:, ::1] ho = np.ascontiguousarray(head_out, dtype=np.float64)
    cdef const double[:, ::1] gt = np.ascontiguousarray(gated, dtype=np.float64)
    cdef const double[::1] pp = np.ascontiguousarray(prob, dtype=np.float64)
    cdef double gam = gamma
    cdef double alp = alpha

    cdef Py_ssize_t nb = xx.shape[0]
    cdef Py_ssize_t nd = xx.shape[1]
    cdef Py_ssize_t na = wa.shape[0]
    cdef Py_ssize_t nh = wh.shape[0]

    g_wa_arr = np.zeros((na, nd), dtype=np.float64)
    g_ba_arr = np.zeros(na, dtype=np.float64)
    g_wh_arr = np.zeros((nh, na), dtype=np.float64)
    g_bh_arr = np.zeros(nh, dtype=np.float64)
    g_wo_arr = np.zeros(nh, dtype=np.float64)
    g_bo_arr = np.zeros(1, dtype=np.float64)
    d_head_arr = np.empty((nb, nh), dtype=np.float64)
    d_gated_arr = np.empty((nb, nh), dtype=np.float64)
    pre_head_arr = np.empty(nh, dtype=np.float64)
    pre_adapter_arr = np.empty(na, dtype=np.float64)

    cdef double[:, ::1] g_wa = g_wa_arr
    cdef double[::1] g_ba = g_ba_arr
    cdef double[:, ::1] g_wh = g_wh_arr
    cdef double[::1] g_bh = g_bh_arr
    cdef double[::1] g_wo = g_wo_arr
    cdef double[::1] g_bo = g_bo_arr
    cdef double[:, ::1] d_head_out = d_head_arr
    cdef double[:, ::1] d_gated = d_gated_arr
    cdef double[::1] d_pre_head = pre_head_arr
    cdef double[::1] d_pre_adapter = pre_adapter_arr

    cdef double loss = 0.0
    cdef Py_ssize_t b, i, j
    cdef double p_t, one_minus, dl_dpt, sign, dz, acc

    with nogil:
        for b in range(nb):
            p_t = pp[b] if yy[b] == 1.0 else 1.0 - pp[b]
            if p_t < 1e-12:
                p_t = 1e-12
            elif p_t > 1.0 - 1e-12:
                p_t = 1.0 - 1e-12
            one_minus = 1.0 - p_t
            loss += sw[b] * (-alp) * pow(one_minus, gam) * log(p_t)

            dl_dpt = alp * (gam * pow(one_minus, gam - 1.0) * log(p_t) - pow(one_minus, gam) / p_t)
            sign = 1.0 if yy[b] == 1.0 else -1.0
            dz = sw[b] * dl_dpt * sign * pp[b] * (1.0 - pp[b])

            g_bo[0] += dz
            for i in range(nh):
                g_wo[i] += gt[b, i] * dz
                d_gated[b, i] = dz * wo[i]
                d_head_out[b, i] = g[b] * d_gated[b, i]
                d_pre_head[i] = d_head_out[b, i] if ho[b, i] > 0.0 else 0.0
                g_bh[i] += d_pre_head[i]
                for j in range(na):
                    g_wh[i, j] += d_pre_head[i] * ao[b, j]
            for j in range(na):
                acc = 0.0
                for i in range(nh):
                    acc += d_pre_head[i] * wh[i, j]
                d_pre_adapter[j] = acc if ao[b, j] > 0.0 else 0.0
                g_ba[j] += d_pre_adapter[j]
                for i in range(nd):
                    g_wa[j, i] += d_pre_adapter[j] * xx[b, i]

    return (loss, g_wa_arr, g_ba_arr, g_wh_arr, g_bh_arr, g_wo_arr, g_bo_arr,
            d_head_arr, d_gated_arr)

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched kernels: detector forward pass and fused loss/gradient.

Same contracts as ``partmint.kernels.fallback``; inputs must be
C-contiguous float64.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def conv_scores(double[:, :, :, ::1] feats, double[:, ::1] kernels):
    cdef Py_ssize_t n = feats.shape[0], H = feats.shape[1], W = feats.shape[2], D = feats.shape[3]
    cdef Py_ssize_t p = kernels.shape[0]
    out_arr = np.empty((n, p, H, W))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t x, i, h, w, d
    cdef double acc
    for x in range(n):
        for h in range(H):
            for w in range(W):
                for i in range(p):
                    acc = 0.0
                    for d in range(D):
                        acc += feats[x, h, w, d] * kernels[i, d]
                    out[x, i, h, w] = acc
    return out_arr


def softmax2d(double[:, :, :, ::1] scores):
    cdef Py_ssize_t n = scores.shape[0], p = scores.shape[1]
    cdef Py_ssize_t H = scores.shape[2], W = scores.shape[3]
    out_arr = np.empty((n, p, H, W))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t x, i, h, w
    cdef double peak, total, e
    for x in range(n):
        for i in range(p):
            peak = scores[x, i, 0, 0]
            for h in range(H):
                for w in range(W):
                    if scores[x, i, h, w] > peak:
                        peak = scores[x, i, h, w]
            total = 0.0
            for h in range(H):
                for w in range(W):
                    e = exp(scores[x, i, h, w] - peak)
                    out[x, i, h, w] = e
                    total += e
            for h in range(H):
                for w in range(W):
                    out[x, i, h, w] /= total
    return out_arr


def box3x3(double[:, :, :, ::1] acts):
    cdef Py_ssize_t n = acts.shape[0], p = acts.shape[1]
    cdef Py_ssize_t H = acts.shape[2], W = acts.shape[3]
    out_arr = np.empty((n, p, H, W))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t x, i, h, w, hh, ww
    cdef double acc
    for x in range(n):
        for i in range(p):
            for h in range(H):
                for w in range(W):
                    acc = 0.0
                    for hh in range(h - 1, h + 2):
                        if hh < 0 or hh >= H:
                            continue
                        for ww in range(w - 1, w + 2):
                            if 0 <= ww < W:
                                acc += acts[x, i, hh, ww]
                    out[x, i, h, w] = acc
    return out_arr


def loss_grad(double[:, :, :, ::1] feats, double[:, ::1] kernels, double lam):
    """Composite loss and exact kernel gradient for one batch.

    Max operators differentiate through their row-major-first argmax cell;
    the unicity hinge contributes only when strictly active.  Returns
    ``(locality, unicity, grad)`` with ``grad`` of shape (p, D).
    """
    cdef Py_ssize_t n = feats.shape[0], H = feats.shape[1], W = feats.shape[2], D = feats.shape[3]
    cdef Py_ssize_t p = kernels.shape[0]

    scores_arr = conv_scores(feats, kernels)
    acts_arr = softmax2d(scores_arr)
    smooth_arr = box3x3(acts_arr)
    cdef double[:, :, :, ::1] acts = acts_arr
    cdef double[:, :, :, ::1] smooth = smooth_arr

    g_h_arr = np.zeros((n, p), dtype=np.intp)
    g_w_arr = np.zeros((n, p), dtype=np.intp)
    s_h_arr = np.zeros(n, dtype=np.intp)
    s_w_arr = np.zeros(n, dtype=np.intp)
    active_arr = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t[:, ::1] g_h = g_h_arr
    cdef Py_ssize_t[:, ::1] g_w = g_w_arr
    cdef Py_ssize_t[::1] s_h = s_h_arr
    cdef Py_ssize_t[::1] s_w = s_w_arr
    cdef unsigned char[::1] active = active_arr

    grad_arr = np.zeros((p, D))
    cdef double[:, ::1] grad = grad_arr

    cdef Py_ssize_t x, i, h, w, d, bh, bw
    cdef double best, cell, excess, locality = 0.0, unicity = 0.0
    cdef double coeff = -1.0 / (p * n)
    cdef double hinge = lam / n
    cdef double dot, gp, gs

    for x in range(n):
        for i in range(p):
            best = smooth[x, i, 0, 0]
            bh = 0
            bw = 0
            for h in range(H):
                for w in range(W):
                    if smooth[x, i, h, w] > best:
                        best = smooth[x, i, h, w]
                        bh = h
                        bw = w
            g_h[x, i] = bh
            g_w[x, i] = bw
            locality -= best
        best = 0.0
        bh = 0
        bw = 0
        for h in range(H):
            for w in range(W):
                cell = 0.0
                for i in range(p):
                    cell += acts[x, i, h, w]
                if (h == 0 and w == 0) or cell > best:
                    best = cell
                    bh = h
                    bw = w
        s_h[x] = bh
        s_w[x] = bw
        excess = best - 1.0
        if excess > 0.0:
            unicity += excess
            active[x] = 1
    locality /= p * n
    unicity /= n

    for x in range(n):
        for i in range(p):
            # dL/dP is sparse: the 3x3 stencil around the smoothed argmax
            # plus (when the hinge is active) the summed-map argmax cell.
            dot = 0.0
            for h in range(g_h[x, i] - 1, g_h[x, i] + 2):
                if h < 0 or h >= H:
                    continue
                for w in range(g_w[x, i] - 1, g_w[x, i] + 2):
                    if 0 <= w < W:
                        dot += coeff * acts[x, i, h, w]
            if active[x] and lam != 0.0:
                dot += hinge * acts[x, i, s_h[x], s_w[x]]
            for h in range(H):
                for w in range(W):
                    gp = 0.0
                    if g_h[x, i] - 1 <= h <= g_h[x, i] + 1 and g_w[x, i] - 1 <= w <= g_w[x, i] + 1:
                        gp = coeff
                    if active[x] and lam != 0.0 and h == s_h[x] and w == s_w[x]:
                        gp += hinge
                    gs = acts[x, i, h, w] * (gp - dot)
                    if gs != 0.0:
                        for d in range(D):
                            grad[i, d] += gs * feats[x, h, w, d]

    return float(locality), float(unicity), grad_arr

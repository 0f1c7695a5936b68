# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled loss/gradient kernels.

Same contracts as ``_kernels_py`` (see its docstring); the point of this
module is to remove per-batch numpy dispatch overhead from the client-update
inner loop, where batches are small. Results agree with the fallback to
floating-point reassociation (~1e-12 relative), not bit level.
"""

from libc.math cimport exp, log

import numpy as np

BACKEND_NAME = "cython"


def linear_logits(const double[:, ::1] W, const double[::1] b, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], C = W.shape[1]
    out = np.empty((n, C))
    cdef double[:, ::1] z = out
    cdef Py_ssize_t i, j, c
    cdef double xv
    for i in range(n):
        for c in range(C):
            z[i, c] = b[c]
        for j in range(d):
            xv = X[i, j]
            for c in range(C):
                z[i, c] += xv * W[j, c]
    return out


cdef double _row_ce(const double[::1] zrow, Py_ssize_t label, double[::1] probs) nogil:
    """Fill probs with softmax(zrow); return cross-entropy of `label`."""
    cdef Py_ssize_t C = zrow.shape[0]
    cdef Py_ssize_t c
    cdef double peak = zrow[0], norm = 0.0
    for c in range(1, C):
        if zrow[c] > peak:
            peak = zrow[c]
    for c in range(C):
        probs[c] = exp(zrow[c] - peak)
        norm += probs[c]
    for c in range(C):
        probs[c] /= norm
    return log(norm) - (zrow[label] - peak)


def linear_loss_grad(const double[:, ::1] W, const double[::1] b, const double[:, ::1] X,
                     const long[::1] y, sample_weight, double weight_decay):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], C = W.shape[1]
    per_example = np.empty(n)
    gW_arr = np.zeros((d, C))
    gb_arr = np.zeros(C)
    zrow_arr = np.empty(C)
    probs_arr = np.empty(C)
    cdef double[::1] pe = per_example
    cdef double[:, ::1] gW = gW_arr
    cdef double[::1] gb = gb_arr
    cdef double[::1] zrow = zrow_arr
    cdef double[::1] probs = probs_arr

    cdef const double[::1] w
    if sample_weight is None:
        w = np.ones(n)
    else:
        w = np.ascontiguousarray(sample_weight, dtype=np.float64)

    cdef Py_ssize_t i, j, c
    cdef double wsum = 0.0, loss = 0.0, xv, coeff, g
    for i in range(n):
        wsum += w[i]
    for i in range(n):
        for c in range(C):
            zrow[c] = b[c]
        for j in range(d):
            xv = X[i, j]
            for c in range(C):
                zrow[c] += xv * W[j, c]
        pe[i] = _row_ce(zrow, y[i], probs)
        loss += pe[i] * w[i]
        coeff = w[i] / wsum
        for c in range(C):
            probs[c] *= coeff
        probs[y[i]] -= coeff
        for c in range(C):
            gb[c] += probs[c]
        for j in range(d):
            xv = X[i, j]
            for c in range(C):
                gW[j, c] += xv * probs[c]
    loss /= wsum

    cdef double sq = 0.0
    if weight_decay != 0.0:
        for j in range(d):
            for c in range(C):
                sq += W[j, c] * W[j, c]
                gW[j, c] += weight_decay * W[j, c]
        loss += 0.5 * weight_decay * sq
    return loss, per_example, gW_arr, gb_arr


def mlp_logits(const double[:, ::1] W1, const double[::1] b1, const double[:, ::1] W2,
               const double[::1] b2, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t h = W1.shape[1], C = W2.shape[1]
    out = np.empty((n, C))
    hid_arr = np.empty(h)
    cdef double[:, ::1] z = out
    cdef double[::1] hid = hid_arr
    cdef Py_ssize_t i, j, u, c
    cdef double xv, hv
    for i in range(n):
        for u in range(h):
            hid[u] = b1[u]
        for j in range(d):
            xv = X[i, j]
            for u in range(h):
                hid[u] += xv * W1[j, u]
        for u in range(h):
            if hid[u] < 0.0:
                hid[u] = 0.0
        for c in range(C):
            z[i, c] = b2[c]
        for u in range(h):
            hv = hid[u]
            if hv != 0.0:
                for c in range(C):
                    z[i, c] += hv * W2[u, c]
    return out


def mlp_loss_grad(const double[:, ::1] W1, const double[::1] b1, const double[:, ::1] W2,
                  const double[::1] b2, const double[:, ::1] X, const long[::1] y,
                  sample_weight, double weight_decay):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t h = W1.shape[1], C = W2.shape[1]
    per_example = np.empty(n)
    gW1_arr = np.zeros((d, h))
    gb1_arr = np.zeros(h)
    gW2_arr = np.zeros((h, C))
    gb2_arr = np.zeros(C)
    pre_arr = np.empty(h)
    hid_arr = np.empty(h)
    dh_arr = np.empty(h)
    zrow_arr = np.empty(C)
    probs_arr = np.empty(C)
    cdef double[::1] pe = per_example
    cdef double[:, ::1] gW1 = gW1_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[:, ::1] gW2 = gW2_arr
    cdef double[::1] gb2 = gb2_arr
    cdef double[::1] pre = pre_arr
    cdef double[::1] hid = hid_arr
    cdef double[::1] dh = dh_arr
    cdef double[::1] zrow = zrow_arr
    cdef double[::1] probs = probs_arr

    cdef const double[::1] w
    if sample_weight is None:
        w = np.ones(n)
    else:
        w = np.ascontiguousarray(sample_weight, dtype=np.float64)

    cdef Py_ssize_t i, j, u, c
    cdef double wsum = 0.0, loss = 0.0, xv, hv, coeff, acc
    for i in range(n):
        wsum += w[i]
    for i in range(n):
        for u in range(h):
            pre[u] = b1[u]
        for j in range(d):
            xv = X[i, j]
            for u in range(h):
                pre[u] += xv * W1[j, u]
        for u in range(h):
            hid[u] = pre[u] if pre[u] > 0.0 else 0.0
        for c in range(C):
            zrow[c] = b2[c]
        for u in range(h):
            hv = hid[u]
            if hv != 0.0:
                for c in range(C):
                    zrow[c] += hv * W2[u, c]
        pe[i] = _row_ce(zrow, y[i], probs)
        loss += pe[i] * w[i]
        coeff = w[i] / wsum
        for c in range(C):
            probs[c] *= coeff
        probs[y[i]] -= coeff
        for c in range(C):
            gb2[c] += probs[c]
        for u in range(h):
            hv = hid[u]
            if hv != 0.0:
                for c in range(C):
                    gW2[u, c] += hv * probs[c]
        for u in range(h):
            if pre[u] <= 0.0:  # ReLU subgradient at the kink fixed to 0
                dh[u] = 0.0
            else:
                acc = 0.0
                for c in range(C):
                    acc += probs[c] * W2[u, c]
                dh[u] = acc
        for u in range(h):
            gb1[u] += dh[u]
        for j in range(d):
            xv = X[i, j]
            for u in range(h):
                gW1[j, u] += xv * dh[u]
    loss /= wsum

    cdef double sq = 0.0
    if weight_decay != 0.0:
        for j in range(d):
            for u in range(h):
                sq += W1[j, u] * W1[j, u]
                gW1[j, u] += weight_decay * W1[j, u]
        for u in range(h):
            for c in range(C):
                sq += W2[u, c] * W2[u, c]
                gW2[u, c] += weight_decay * W2[u, c]
        loss += 0.5 * weight_decay * sq
    return loss, per_example, gW1_arr, gb1_arr, gW2_arr, gb2_arr

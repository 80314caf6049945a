# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Mirrors ``_pykernels`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def im2col(double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1
    out = np.empty((b * oh * ow, c * kh * kw), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t n, oy, ox, ch, i, j, row, col
    with nogil:
        for n in range(b):
            for oy in range(oh):
                for ox in range(ow):
                    row = (n * oh + oy) * ow + ox
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                o[row, col] = x[n, ch, oy * stride + i, ox * stride + j]
                                col += 1
    return out


def col2im(double[:, ::1] cols, tuple x_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1
    out = np.zeros((b, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t n, oy, ox, ch, i, j, row
    # (i, j) outermost keeps the accumulation order of the numpy fallback
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for n in range(b):
                    for ch in range(c):
                        for oy in range(oh):
                            for ox in range(ow):
                                row = (n * oh + oy) * ow + ox
                                o[n, ch, oy * stride + i, ox * stride + j] += cols[row, (ch * kh + i) * kw + j]
    return out


def random_shift(double[:, :, :, ::1] frames, Py_ssize_t pad, cnp.int64_t[:, ::1] shifts):
    cdef Py_ssize_t b = frames.shape[0], c = frames.shape[1], h = frames.shape[2], w = frames.shape[3]
    out = np.empty((b, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t n, ch, y, xx, sy, sx
    with nogil:
        for n in range(b):
            for ch in range(c):
                for y in range(h):
                    sy = y + shifts[n, 0] - pad
                    if sy < 0:
                        sy = 0
                    elif sy > h - 1:
                        sy = h - 1
                    for xx in range(w):
                        sx = xx + shifts[n, 1] - pad
                        if sx < 0:
                            sx = 0
                        elif sx > w - 1:
                            sx = w - 1
                        o[n, ch, y, xx] = frames[n, ch, sy, sx]
    return out


def nstep_returns(
    double[::1] rewards,
    cnp.npy_bool[::1] dones,
    cnp.npy_bool[::1] terminals,
    cnp.int64_t[::1] indices,
    Py_ssize_t n,
    double gamma,
    Py_ssize_t newest,
):
    cdef Py_ssize_t cap = rewards.shape[0], m = indices.shape[0]
    ret = np.zeros(m, dtype=np.float64)
    disc = np.ones(m, dtype=np.float64)
    last = np.empty(m, dtype=np.int64)
    cdef double[::1] r = ret, d = disc
    cdef cnp.int64_t[::1] l = last
    cdef Py_ssize_t row, j, k
    cdef double acc, g
    with nogil:
        for row in range(m):
            acc = 0.0
            g = 1.0
            k = indices[row]
            for j in range(n):
                k = (indices[row] + j) % cap
                acc = acc + g * rewards[k]
                g = g * gamma
                if terminals[k]:
                    g = 0.0
                    break
                if dones[k] or k == newest:
                    break
            r[row] = acc
            d[row] = g
            l[row] = k
    return ret, disc, last


def ppe_weights(cnp.int64_t[::1] insert_steps, cnp.int64_t current_step, double alpha, cnp.int64_t capacity):
    cdef Py_ssize_t m = insert_steps.shape[0], i
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double dt, x, e
    with nogil:
        for i in range(m):
            dt = <double>(current_step - insert_steps[i])
            if dt < 1.0:
                dt = 1.0
            x = 2.0 * alpha - (alpha * 2.0 * <double>capacity) / dt
            if x <= 0.0:
                o[i] = 1.0 / (1.0 + exp(x))
            else:
                e = exp(-x)
                o[i] = e / (e + 1.0)
    return out

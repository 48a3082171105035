# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_pykernels`` exactly."""

from cpython.mem cimport PyMem_Malloc, PyMem_Free

import numpy as np


def edit_distance(const long long[:] a, const long long[:] b):
    """Unit-cost Levenshtein distance between two id sequences."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef long long *prev
    cdef long long *cur
    cdef long long *tmp
    cdef long long sub, best
    if n == 0:
        return m
    if m == 0:
        return n
    prev = <long long *> PyMem_Malloc((m + 1) * sizeof(long long))
    cur = <long long *> PyMem_Malloc((m + 1) * sizeof(long long))
    if prev == NULL or cur == NULL:
        PyMem_Free(prev)
        PyMem_Free(cur)
        raise MemoryError()
    try:
        for j in range(m + 1):
            prev[j] = j
        for i in range(1, n + 1):
            cur[0] = i
            for j in range(1, m + 1):
                sub = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
                best = prev[j] + 1
                if cur[j - 1] + 1 < best:
                    best = cur[j - 1] + 1
                if sub < best:
                    best = sub
                cur[j] = best
            tmp = prev
            prev = cur
            cur = tmp
        return prev[m]
    finally:
        PyMem_Free(prev)
        PyMem_Free(cur)


def polyphase_resample(const double[:] x, const double[:] h, Py_ssize_t up,
                       Py_ssize_t down, Py_ssize_t n_out, Py_ssize_t delay):
    """y[m] = sum_n x[n] * h[m*down + delay - n*up], taps outside h skipped."""
    cdef Py_ssize_t n_in = x.shape[0], n_taps = h.shape[0]
    cdef Py_ssize_t m, n, n_lo, n_hi, t, k
    cdef double acc
    out = np.zeros(n_out, dtype=np.float64)
    cdef double[:] y = out
    for m in range(n_out):
        t = m * down + delay
        # n must satisfy 0 <= t - n*up < n_taps
        n_hi = t // up
        if t - n_taps + 1 > 0:
            n_lo = (t - n_taps + up) // up
        else:
            n_lo = 0
        if n_hi > n_in - 1:
            n_hi = n_in - 1
        acc = 0.0
        for n in range(n_lo, n_hi + 1):
            k = t - n * up
            acc += x[n] * h[k]
        y[m] = acc
    return out

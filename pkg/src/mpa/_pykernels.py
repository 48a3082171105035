"""Pure-Python reference versions of the compiled kernels."""

import numpy as np


def edit_distance(a, b):
    """Unit-cost Levenshtein distance between two id sequences."""
    a = list(a)
    b = list(b)
    n, m = len(a), len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[m]


def polyphase_resample(x, h, up, down, n_out, delay):
    """y[m] = sum_n x[n] * h[m*down + delay - n*up], taps outside h skipped."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n_in, n_taps = len(x), len(h)
    out = np.zeros(n_out, dtype=np.float64)
    for m in range(n_out):
        t = m * down + delay
        n_hi = min(t // up, n_in - 1)
        n_lo = max(0, -((n_taps - 1 - t) // up))
        if n_hi < n_lo:
            continue
        n = np.arange(n_lo, n_hi + 1)
        # sequential accumulation keeps results identical to the compiled loop
        acc = 0.0
        for xv, hv in zip(x[n].tolist(), h[t - n * up].tolist()):
            acc += xv * hv
        out[m] = acc
    return out

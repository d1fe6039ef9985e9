"""Independent reference implementations used by several test modules."""

import math

import numpy as np


def mask_by_enumeration(l, e, bw, ov):
    """Transcribes the band-index formula with plain loops.

    lx = a + (g - 1) * (l + (bw - ov)), a in [0, bw-1], g in [1, ceil(l*e / (l + (bw - ov)))],
    cell (lx mod l, lx div l) when lx < l*e.
    """
    m = [[0] * e for _ in range(l)]
    g_max = math.ceil((l * e) / (l + (bw - ov)))
    for g in range(1, g_max + 1):
        for a in range(0, bw):
            lx = a + (g - 1) * (l + (bw - ov))
            if lx < l * e:
                m[lx % l][lx // l] = 1
    return np.array(m, dtype=np.float64).reshape(l, e)


def clnn_by_loops(x, w, b, n, f=lambda v: v):
    """Window-conditioned activation, one hidden node at a time.

    y[j, t] = f(b[j] + sum_{u=-n}^{n} sum_{i} x[i, u + t] * W[i, j, u]) with x
    indexed (frame, feature) and W given as w[u + n, i, j].
    """
    q, l = x.shape
    e = w.shape[2]
    out = np.zeros((q - 2 * n, e))
    for t in range(n, q - n):
        for j in range(e):
            s = b[j]
            for u in range(-n, n + 1):
                for i in range(l):
                    s += x[u + t, i] * w[u + n, i, j]
            out[t - n, j] = f(s)
    return out


def central_difference(fn, x, h=1e-5):
    """Numerical gradient of a scalar function of an array (modifies a copy)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = fn(x)
        x[idx] = old - h
        fm = fn(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Relative error of a whole gradient tensor: ||a - b|| / max(||a||, ||b||)."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0


def naive_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * f * k / n)) for f in range(n)])

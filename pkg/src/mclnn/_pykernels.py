"""Numpy fallback for the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and array layout. Arrays are float64 (complex128 for the FFT) and
C-contiguous; callers in :mod:`mclnn.kernels` take care of that.
"""

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def matmul(a, b):
    return a @ b


def _unfold(x, d):
    # (B, q, l) -> (B*T, d*l) with row (b, t) = concat(x[b, t], ..., x[b, t+d-1])
    B, q, l = x.shape
    T = q - d + 1
    win = sliding_window_view(x, d, axis=1)  # (B, T, l, d)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * T, d * l)


def clnn_forward(x, z, runs=None):
    """Pre-activation of a conditional layer, bias excluded.

    x: (B, q, l), z: (d, l, e) -> (B, q - d + 1, e). ``runs`` (the mask's
    column runs) is accepted for parity with the compiled kernel; masked
    cells are already zero in ``z`` so the dense product is exact.
    """
    d, l, e = z.shape
    B, q, _ = x.shape
    T = q - d + 1
    out = _unfold(x, d) @ z.reshape(d * l, e)
    return out.reshape(B, T, e)


def clnn_backward(x, z, delta, runs=None):
    """Gradients of the pre-activation wrt the masked weights and the input.

    delta: (B, T, e) -> (grad_z (d, l, e), grad_x (B, q, l))

    ``runs`` is ignored: grad_z is dense here, and cells outside the mask
    hold whatever the dense product gives. Callers zero them.
    """
    d, l, e = z.shape
    B, q, _ = x.shape
    T = q - d + 1
    flat = delta.reshape(B * T, e)
    gz = (_unfold(x, d).T @ flat).reshape(d, l, e)
    gxu = (flat @ z.reshape(d * l, e).T).reshape(B, T, d, l)
    gx = np.zeros_like(x)
    for u in range(d):
        gx[:, u:u + T, :] += gxu[:, :, u, :]
    return gz, gx


@lru_cache(maxsize=32)
def _bitrev(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for k in range(bits):
        rev |= ((idx >> k) & 1) << (bits - 1 - k)
    return rev


def fft_rows(data, twiddles):
    """In-place iterative radix-2 DIT FFT over every row of ``data``.

    ``twiddles[k]`` holds exp(-+2j*pi*k/N) for k < N/2; the sign picks the
    direction and no scaling is applied.
    """
    m, n = data.shape
    data[:] = data[:, _bitrev(n)]
    half = 1
    while half < n:
        stride = n // (2 * half)
        w = twiddles[::stride][:half]
        blk = data.reshape(m, stride, 2, half)
        top = blk[:, :, 0, :].copy()
        bot = blk[:, :, 1, :] * w
        blk[:, :, 0, :] = top + bot
        blk[:, :, 1, :] = top - bot
        half *= 2


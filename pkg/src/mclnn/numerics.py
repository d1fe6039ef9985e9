"""Numerical substrate: matrix product, radix-2 FFT, transfer functions,
seeded randomness and the ADAM update.

Everything works on float64 numpy arrays.
"""

from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from . import kernels

__all__ = [
    "Rng",
    "TransferKind",
    "AdamState",
    "matmul",
    "fft",
    "ifft",
    "rfft",
    "transfer",
    "transfer_derivative",
    "transfer_derivative_from_output",
    "adam_step",
]


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

_TWO_M53 = 2.0 ** -53


class Rng:
    """Seeded generator on top of the PCG64 (XSL-RR 128/64) bit stream.

    Only the raw 64-bit output of ``numpy.random.PCG64`` is consumed; numpy
    guarantees that stream is stable across versions and platforms. Every
    derived quantity is computed here:

    * uniform double in [0, 1): ``(raw >> 11) * 2**-53``
    * integer below ``n``: ``floor(uniform * n)``
    * normal: Box-Muller on two uniforms
    * shuffle: Fisher-Yates, swapping ``i`` with ``integer(i + 1)`` for
      ``i = len-1 .. 1``
    """

    def __init__(self, seed=0, *, _seed_seq=None):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self._seq = _seed_seq if _seed_seq is not None else np.random.SeedSequence(seed)
        self._bits = np.random.PCG64(self._seq)

    def spawn(self, key):
        """Independent child stream identified by a non-negative integer key."""
        seq = np.random.SeedSequence(self._seq.entropy, spawn_key=self._seq.spawn_key + (int(key),))
        return Rng(self.seed, _seed_seq=seq)

    def raw(self, size):
        return self._bits.random_raw(size)

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low, high, size=None):
        return low + (high - low) * self.random(size)

    def integers(self, n, size=None):
        if n < 1:
            raise ValueError("upper bound must be >= 1")
        u = self.random(size)
        if size is None:
            return int(u * n)
        return np.floor(u * n).astype(np.int64)

    def normal(self, size):
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1]
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(size)

    def permutation(self, n):
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


# ---------------------------------------------------------------------------
# linear algebra and FFT
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product with a fixed summation order.

    Raises ValueError naming both shapes when inner dimensions differ.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return kernels.matmul(a, b)


@lru_cache(maxsize=32)
def _twiddles(n, inverse):
    k = np.arange(n // 2)
    sign = 1.0 if inverse else -1.0
    ang = sign * 2.0 * np.pi * k / n
    tw = np.cos(ang) + 1j * np.sin(ang)
    tw.setflags(write=False)
    return tw


def _check_pow2(n):
    if n < 2 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two >= 2, got {n}")


def _transform(x, inverse):
    x = np.asarray(x)
    one_d = x.ndim == 1
    rows = np.array(np.atleast_2d(x), dtype=np.complex128, order="C", copy=True)
    _check_pow2(rows.shape[-1])
    kernels.fft_rows(rows, _twiddles(rows.shape[-1], inverse))
    if inverse:
        rows /= rows.shape[-1]
    return rows[0] if one_d else rows


def fft(x):
    """Unnormalized forward DFT along the last axis (1-D or 2-D input)."""
    return _transform(x, inverse=False)


def ifft(x):
    """Inverse DFT with 1/N scaling."""
    return _transform(x, inverse=True)


def rfft(x):
    """Forward DFT of real rows, keeping bins 0 .. N/2."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return fft(x)[..., : n // 2 + 1]


# ---------------------------------------------------------------------------
# transfer functions
# ---------------------------------------------------------------------------


class TransferKind(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value):
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown transfer {value!r}; expected one of {names}") from None


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def transfer(kind, x):
    kind = TransferKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is TransferKind.SIGMOID:
        return _sigmoid(x)
    if kind is TransferKind.TANH:
        return np.tanh(x)
    if kind is TransferKind.RELU:
        return np.maximum(x, 0.0)
    return x.copy()


def transfer_derivative(kind, x):
    """Derivative of the transfer function evaluated at the pre-activation."""
    return transfer_derivative_from_output(kind, transfer(kind, x))


def transfer_derivative_from_output(kind, y):
    """Same derivative, expressed through the activation ``y = f(x)``.

    Every supported kind admits this form, so backward passes only need the
    stored activations. For relu the derivative at 0 is taken as 0.
    """
    kind = TransferKind.parse(kind)
    y = np.asarray(y, dtype=np.float64)
    if kind is TransferKind.SIGMOID:
        return y * (1.0 - y)
    if kind is TransferKind.TANH:
        return 1.0 - y * y
    if kind is TransferKind.RELU:
        return (y > 0).astype(np.float64)
    return np.ones_like(y)


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size, **hyper):
        return cls(m=np.zeros(size), v=np.zeros(size), **hyper)


def adam_step(params, grads, state):
    """One bias-corrected ADAM update.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ValueError(
            f"adam_step length mismatch: params {params.shape}, grads {grads.shape}, "
            f"m {state.m.shape}, v {state.v.shape}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)

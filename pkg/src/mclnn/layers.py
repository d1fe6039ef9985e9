"""Forward and backward passes for conditional layers, pooling and the dense head.

Frame blocks are arrays shaped ``(q, l)`` or batched ``(B, q, l)`` with time
running down the rows. A conditional layer of order ``n`` keeps one weight
matrix per window offset ``u in [-n, n]``; they are stored stacked as
``weights[u + n]`` in a ``(d, l, e)`` array with ``d = 2n + 1``.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .masking import Mask
from .numerics import TransferKind, transfer, transfer_derivative_from_output

__all__ = [
    "ClnnLayerParams",
    "clnn_forward",
    "clnn_backward",
    "global_pool",
    "global_pool_backward",
    "dense_forward",
    "dense_backward",
    "softmax",
]


@dataclass
class ClnnLayerParams:
    order: int
    weights: np.ndarray  # (2n+1, l, e)
    bias: np.ndarray  # (e,)
    transfer: TransferKind = TransferKind.SIGMOID
    mask: Mask | None = None

    def __post_init__(self):
        self.transfer = TransferKind.parse(self.transfer)
        if self.order < 0:
            raise ValueError(f"order must be >= 0, got {self.order}")
        d = 2 * self.order + 1
        if self.weights.ndim != 3 or self.weights.shape[0] != d:
            raise ValueError(f"weights must be shaped (2n+1={d}, l, e), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[2],):
            raise ValueError(f"bias shape {self.bias.shape} does not match width {self.weights.shape[2]}")
        if self.mask is not None and self.mask.shape != self.weights.shape[1:]:
            raise ValueError(f"mask shape {self.mask.shape} does not match weights {self.weights.shape[1:]}")

    @property
    def window(self):
        return 2 * self.order + 1

    @property
    def effective_weights(self):
        if self.mask is None:
            return self.weights
        return self.weights * self.mask.pattern


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"frame block must be 2-D or 3-D, got shape {x.shape}")


def clnn_forward(frames, params):
    """Slide the window over the block; output has ``q - 2n`` frames of width e.

    No padding: edge frames only ever appear as window neighbours.
    """
    x, squeeze = _batched(frames)
    q, l = x.shape[1:]
    if l != params.weights.shape[1]:
        raise ValueError(f"input feature length {l} does not match layer ({params.weights.shape[1]})")
    if q < params.window:
        raise ValueError(f"segment shorter than window: {q} frames < 2n+1 = {params.window}")
    pre = kernels.clnn_forward(x, params.effective_weights, params.mask) + params.bias
    y = transfer(params.transfer, pre)
    return y[0] if squeeze else y


def clnn_backward(frames, params, upstream, output=None):
    """Gradients of a conditional layer.

    Returns ``(grad_weights, grad_bias, grad_input)``. ``output`` is the
    forward activation; it is recomputed when not given. Weight gradients
    are summed over the batch; cells the mask switches off are exactly 0.
    """
    x, squeeze = _batched(frames)
    g, _ = _batched(upstream)
    T = x.shape[1] - 2 * params.order
    if g.shape != (x.shape[0], T, params.weights.shape[2]):
        raise ValueError(
            f"upstream gradient shape {g.shape} does not match layer output "
            f"{(x.shape[0], T, params.weights.shape[2])}"
        )
    y = clnn_forward(x, params) if output is None else _batched(output)[0]
    delta = g * transfer_derivative_from_output(params.transfer, y)
    gz, gx = kernels.clnn_backward(x, params.effective_weights, delta, params.mask)
    if params.mask is not None:
        gz = np.where(params.mask.pattern != 0, gz, 0.0)
    gb = delta.sum(axis=(0, 1))
    return gz, gb, (gx[0] if squeeze else gx)


def global_pool(block, statistic="mean"):
    """Aggregate each feature over time: ``(k, e) -> (e,)``, batched likewise."""
    x, squeeze = _batched(block)
    if x.shape[1] < 1:
        raise ValueError("cannot pool an empty frame block")
    if statistic == "mean":
        out = x.mean(axis=1)
    elif statistic == "max":
        out = x.max(axis=1)
    else:
        raise ValueError(f"unknown pooling statistic {statistic!r}")
    return out[0] if squeeze else out


def global_pool_backward(block, upstream, statistic="mean"):
    """Mean splits the gradient evenly; max routes it to the first argmax."""
    x, squeeze = _batched(block)
    g = np.asarray(upstream, dtype=np.float64).reshape(x.shape[0], x.shape[2])
    k = x.shape[1]
    if statistic == "mean":
        gx = np.repeat(g[:, None, :] / k, k, axis=1)
    elif statistic == "max":
        gx = np.zeros_like(x)
        arg = x.argmax(axis=1)
        b_idx, f_idx = np.meshgrid(np.arange(x.shape[0]), np.arange(x.shape[2]), indexing="ij")
        gx[b_idx, arg, f_idx] = g
    else:
        raise ValueError(f"unknown pooling statistic {statistic!r}")
    return gx[0] if squeeze else gx


def dense_forward(x, weights, bias, transfer_kind=TransferKind.IDENTITY):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, W {weights.shape}, b {bias.shape}")
    x2 = np.atleast_2d(x)
    y = transfer(transfer_kind, kernels.matmul(x2, weights) + bias)
    return y[0] if x.ndim == 1 else y


def dense_backward(x, weights, output, upstream, transfer_kind=TransferKind.IDENTITY):
    """Returns ``(grad_weights, grad_bias, grad_x)`` summed over the batch."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y2 = np.atleast_2d(output)
    g2 = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    delta = g2 * transfer_derivative_from_output(transfer_kind, y2)
    gw = kernels.matmul(np.ascontiguousarray(x2.T), delta)
    gb = delta.sum(axis=0)
    gx = kernels.matmul(delta, np.ascontiguousarray(weights.T))
    return gw, gb, (gx[0] if np.ndim(x) == 1 else gx)


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)

"""Band-patterned binary masks for masked conditional layers.

A mask has one row per input feature and one column per hidden node. Ones
are laid out in runs of ``bandwidth`` cells along the column-major
flattening of the matrix, consecutive runs starting ``l + (bw - ov)`` cells
apart. Positive overlap makes neighbouring columns share features; negative
overlap leaves gaps between them.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["MaskSpec", "Mask", "build_mask", "apply_mask", "mask_stats", "to_csv", "to_pgm"]


@dataclass(frozen=True)
class MaskSpec:
    l: int
    e: int
    bw: int
    ov: int

    def __post_init__(self):
        if self.l < 1:
            raise ValueError(f"feature length l must be >= 1, got {self.l}")
        if self.e < 1:
            raise ValueError(f"hidden width e must be >= 1, got {self.e}")
        if not 1 <= self.bw <= self.l:
            raise ValueError(f"bandwidth bw must satisfy 1 <= bw <= l={self.l}, got {self.bw}")
        if self.ov > self.bw:
            raise ValueError(f"overlap ov must satisfy ov <= bw={self.bw}, got {self.ov}")
        if self.stride <= 0:
            raise ValueError(f"l + (bw - ov) must be > 0, got {self.stride}")

    @property
    def stride(self):
        return self.l + (self.bw - self.ov)

    @property
    def band_count(self):
        return math.ceil(self.l * self.e / self.stride)


@dataclass(frozen=True, eq=False)
class Mask:
    pattern: np.ndarray
    spec: MaskSpec = None

    @property
    def shape(self):
        return self.pattern.shape

    @cached_property
    def column_runs(self):
        """CSR view of the ones: column ``j`` owns runs ``ptr[j]:ptr[j+1]`` of
        ``(start_row, length)``. Used by the compiled kernels to skip zeros."""
        ptr, starts, lengths = [0], [], []
        for runs in mask_stats(self)["columns"]:
            for s, n in runs:
                starts.append(s)
                lengths.append(n)
            ptr.append(len(starts))
        return (np.asarray(ptr, dtype=np.int64), np.asarray(starts, dtype=np.int64),
                np.asarray(lengths, dtype=np.int64))


def build_mask(spec):
    """Binary (l, e) float64 pattern for ``spec``.

    Linear index ``a + (g-1)*stride`` for ``a in [0, bw-1]`` and
    ``g in [1, ceil(l*e/stride)]``; indices past ``l*e`` are dropped.
    """
    l, e, bw = spec.l, spec.e, spec.bw
    starts = np.arange(spec.band_count, dtype=np.int64) * spec.stride
    lx = (starts[:, None] + np.arange(bw, dtype=np.int64)[None, :]).ravel()
    lx = lx[lx < l * e]
    flat = np.zeros(l * e)
    flat[lx] = 1.0
    pattern = flat.reshape(e, l).T.copy()  # column-major fill
    pattern.setflags(write=False)
    return Mask(pattern, spec)


def apply_mask(w, mask):
    """Element-wise product of a weight matrix (or a stack of them) with the mask."""
    w = np.asarray(w, dtype=np.float64)
    pat = mask.pattern if isinstance(mask, Mask) else np.asarray(mask)
    if w.shape[-2:] != pat.shape:
        raise ValueError(f"mask shape {pat.shape} does not match weights {w.shape}")
    return w * pat


def mask_stats(mask):
    """Density and, per column, the maximal runs of ones as (start_row, length)."""
    pat = mask.pattern if isinstance(mask, Mask) else np.asarray(mask)
    l, e = pat.shape
    columns = []
    for j in range(e):
        runs = []
        col = pat[:, j] != 0
        i = 0
        while i < l:
            if col[i]:
                start = i
                while i < l and col[i]:
                    i += 1
                runs.append((start, i - start))
            else:
                i += 1
        columns.append(runs)
    density = float(np.count_nonzero(pat)) / pat.size if pat.size else 0.0
    return {"density": density, "columns": columns}


def to_csv(mask):
    pat = mask.pattern if isinstance(mask, Mask) else np.asarray(mask)
    return "".join(",".join(str(int(v)) for v in row) + "\n" for row in pat)


def to_pgm(mask):
    """Plain (P2) greymap, one pixel per cell, width = hidden nodes."""
    pat = mask.pattern if isinstance(mask, Mask) else np.asarray(mask)
    l, e = pat.shape
    lines = ["P2", f"{e} {l}", "255"]
    lines += [" ".join("255" if v else "0" for v in row) for row in pat]
    return "\n".join(lines) + "\n"

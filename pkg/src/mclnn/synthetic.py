"""Small synthetic genre-like dataset for smoke tests.

Each class is band-limited noise: per frame and bin the energy is an
exponential draw scaled by a class-specific band gain, and every clip moves
its band by a random shift of up to two bins. Clips are stored directly as
log-energy feature frames.
"""

import os

import numpy as np

from .data import FeatureClip, IndexRow, write_clip, write_index
from .numerics import Rng

__all__ = ["make_synthetic", "write_synthetic"]


def make_synthetic(seed=0, class_count=3, clips_per_class=10, frames=40, bins=32,
                   band_width=5, max_shift=2, floor_gain=0.02):
    rng = Rng(seed)
    centres = np.linspace(0, bins, class_count + 2)[1:-1].round().astype(int)
    clips = []
    for c in range(class_count):
        for i in range(clips_per_class):
            shift = rng.integers(2 * max_shift + 1) - max_shift
            lo = centres[c] + shift - band_width // 2
            gain = np.full(bins, floor_gain)
            gain[max(lo, 0):max(lo + band_width, 0)] = 1.0
            energy = -np.log(1.0 - rng.random((frames, bins))) * gain  # Exp(1) * gain
            feats = np.log(energy + 1e-6)
            clips.append(FeatureClip(f"syn{c}_{i:02d}", feats, c))
    return clips


def write_synthetic(out_dir, seed=0, **kwargs):
    os.makedirs(out_dir, exist_ok=True)
    clips = make_synthetic(seed, **kwargs)
    rows = []
    for clip in clips:
        name = clip.id + ".mcln"
        write_clip(os.path.join(out_dir, name), clip)
        rows.append(IndexRow(clip.id, name, clip.label))
    write_index(os.path.join(out_dir, "index.csv"), rows)
    return clips

"""Small synthetic datasets built inside tests."""

import numpy as np

from mclnn.data import FeatureClip
from mclnn.model import ModelConfig

TINY_CONFIG = {
    "schema_version": 1,
    "input_length": 4,
    "class_count": 2,
    "clnn_layers": [{"order": 1, "width": 3, "mask": {"bandwidth": 2, "overlap": 1}}],
    "pooling": {"extra_frames": 2},
    "dense_head": [{"width": 4}],
}


def tiny_config(**overrides):
    return ModelConfig.from_dict({**TINY_CONFIG, **overrides})


def separable_clips(n_per_class=5, classes=2, frames=8, l=4, seed=0, gap=2.0):
    """Class c has feature c shifted by ``gap``; everything else is unit noise."""
    r = np.random.default_rng(seed)
    clips = []
    for c in range(classes):
        for i in range(n_per_class):
            x = r.normal(size=(frames, l))
            x[:, c % l] += gap
            clips.append(FeatureClip(f"c{c}_{i}", x, c))
    return clips


def constant_clips(n_per_class=6, classes=3, frames=8, l=4):
    """Every clip of class c has the constant value c in every cell, plus a tiny ramp."""
    clips = []
    for c in range(classes):
        for i in range(n_per_class):
            x = np.full((frames, l), float(c)) + 0.01 * i
            clips.append(FeatureClip(f"k{c}_{i}", x, c))
    return clips

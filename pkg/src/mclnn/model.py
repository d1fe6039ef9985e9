"""Model configuration, segment arithmetic and the composed network.

A network is a stack of conditional layers, a global temporal pooling layer
over the ``k`` frames that survive the stack, a dense head and a softmax
output. Each conditional layer of order ``n`` consumes ``2n`` frames, so the
input segment must be ``q = k + sum(2 n_i)`` frames long.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .layers import (
    ClnnLayerParams,
    clnn_backward,
    clnn_forward,
    dense_backward,
    dense_forward,
    global_pool,
    global_pool_backward,
    softmax,
)
from .masking import MaskSpec, build_mask
from .numerics import TransferKind

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "MaskConfig",
    "ClnnLayerConfig",
    "PoolingConfig",
    "DenseConfig",
    "ModelConfig",
    "ShapePlan",
    "segment_size",
    "shape_plan",
    "build_model",
    "Network",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A configuration document failed validation; the message names the key."""


def _take(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(f"{where}: missing key {missing[0]!r}")
    return obj


def _int(obj, key, where, minimum=None):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}, got {v}")
    return v


def _transfer(obj, key, where, default):
    if key not in obj:
        return default
    try:
        return TransferKind.parse(obj[key])
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from None


@dataclass(frozen=True)
class MaskConfig:
    bandwidth: int
    overlap: int


@dataclass(frozen=True)
class ClnnLayerConfig:
    order: int
    width: int
    mask: MaskConfig | None = None
    transfer: TransferKind = TransferKind.SIGMOID


@dataclass(frozen=True)
class PoolingConfig:
    extra_frames: int
    statistic: str = "mean"


@dataclass(frozen=True)
class DenseConfig:
    width: int
    transfer: TransferKind = TransferKind.RELU


@dataclass(frozen=True)
class ModelConfig:
    input_length: int
    class_count: int
    clnn_layers: tuple
    pooling: PoolingConfig
    dense_head: tuple = ()

    # ---- serialization -------------------------------------------------

    @classmethod
    def from_dict(cls, doc):
        _take(doc, "config", ["schema_version", "input_length", "class_count", "clnn_layers", "pooling"],
              ["dense_head"])
        if doc["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"config.schema_version: unsupported version {doc['schema_version']!r}")
        layers = []
        if not isinstance(doc["clnn_layers"], list):
            raise ConfigError("config.clnn_layers: expected a list")
        for i, raw in enumerate(doc["clnn_layers"]):
            where = f"clnn_layers[{i}]"
            _take(raw, where, ["order", "width"], ["mask", "transfer"])
            mask = raw.get("mask")
            if mask is not None:
                _take(mask, where + ".mask", ["bandwidth", "overlap"])
                mask = MaskConfig(_int(mask, "bandwidth", where + ".mask", 1), _int(mask, "overlap", where + ".mask"))
            layers.append(ClnnLayerConfig(
                order=_int(raw, "order", where, 0),
                width=_int(raw, "width", where, 1),
                mask=mask,
                transfer=_transfer(raw, "transfer", where, TransferKind.SIGMOID),
            ))
        pool = _take(doc["pooling"], "pooling", ["extra_frames"], ["statistic"])
        statistic = pool.get("statistic", "mean")
        if statistic not in ("mean", "max"):
            raise ConfigError(f"pooling.statistic: expected 'mean' or 'max', got {statistic!r}")
        head = []
        raw_head = doc.get("dense_head", [])
        if not isinstance(raw_head, list):
            raise ConfigError("config.dense_head: expected a list")
        for i, raw in enumerate(raw_head):
            where = f"dense_head[{i}]"
            _take(raw, where, ["width"], ["transfer"])
            head.append(DenseConfig(_int(raw, "width", where, 1), _transfer(raw, "transfer", where, TransferKind.RELU)))
        cfg = cls(
            input_length=_int(doc, "input_length", "config", 1),
            class_count=_int(doc, "class_count", "config", 2),
            clnn_layers=tuple(layers),
            pooling=PoolingConfig(_int(pool, "extra_frames", "pooling", 1), statistic),
            dense_head=tuple(head),
        )
        cfg.validate()
        return cfg

    def to_dict(self):
        layers = []
        for lc in self.clnn_layers:
            d = {"order": lc.order, "width": lc.width}
            if lc.mask is not None:
                d["mask"] = {"bandwidth": lc.mask.bandwidth, "overlap": lc.mask.overlap}
            d["transfer"] = lc.transfer.value
            layers.append(d)
        return {
            "schema_version": SCHEMA_VERSION,
            "input_length": self.input_length,
            "class_count": self.class_count,
            "clnn_layers": layers,
            "pooling": {"extra_frames": self.pooling.extra_frames, "statistic": self.pooling.statistic},
            "dense_head": [{"width": h.width, "transfer": h.transfer.value} for h in self.dense_head],
        }

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # ---- validation ----------------------------------------------------

    def validate(self):
        if not self.clnn_layers:
            raise ConfigError("config.clnn_layers: at least one conditional layer is required")
        if self.class_count < 2:
            raise ConfigError(f"config.class_count: must be >= 2, got {self.class_count}")
        if self.pooling.extra_frames < 1:
            raise ConfigError(f"pooling.extra_frames: must be >= 1, got {self.pooling.extra_frames}")
        width = self.input_length
        for i, lc in enumerate(self.clnn_layers):
            if lc.order == 0:
                warnings.warn(f"clnn_layers[{i}] has order 0: the window is a single frame", stacklevel=3)
            if lc.mask is not None:
                try:
                    MaskSpec(width, lc.width, lc.mask.bandwidth, lc.mask.overlap)
                except ValueError as exc:
                    raise ConfigError(f"clnn_layers[{i}].mask: {exc}") from None
            width = lc.width
        return self

    @property
    def layer_widths(self):
        widths = [self.input_length]
        widths += [lc.width for lc in self.clnn_layers]
        return widths


@dataclass(frozen=True)
class ShapePlan:
    segment_size: int
    frame_counts: tuple  # frames entering layer 0, leaving layer 0, ..., entering pooling
    head_input_width: int


def segment_size(config):
    """Shortest input segment that leaves ``k`` frames for pooling."""
    return config.pooling.extra_frames + sum(2 * lc.order for lc in config.clnn_layers)


def shape_plan(config, q=None):
    """Frame counts at every layer boundary for a segment of ``q`` frames."""
    q = segment_size(config) if q is None else q
    counts = [q]
    width = config.input_length
    for i, lc in enumerate(config.clnn_layers):
        if lc.mask is not None:
            try:
                MaskSpec(width, lc.width, lc.mask.bandwidth, lc.mask.overlap)
            except ValueError as exc:
                raise ConfigError(f"clnn_layers[{i}]: inconsistent mask for input width {width}: {exc}") from None
        nxt = counts[-1] - 2 * lc.order
        if nxt < 1:
            raise ConfigError(f"clnn_layers[{i}]: {counts[-1]} frames cannot feed a window of {2 * lc.order + 1}")
        counts.append(nxt)
        width = lc.width
    if counts[-1] != config.pooling.extra_frames and q == segment_size(config):
        raise ConfigError(f"plan ends with {counts[-1]} frames, expected k={config.pooling.extra_frames}")
    return ShapePlan(q, tuple(counts), width)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


@dataclass
class _Slot:
    name: str
    shape: tuple
    offset: int

    @property
    def size(self):
        return int(np.prod(self.shape))


def _layout(config):
    slots = []
    off = 0

    def add(name, shape):
        nonlocal off
        slots.append(_Slot(name, tuple(shape), off))
        off += slots[-1].size

    width = config.input_length
    for i, lc in enumerate(config.clnn_layers):
        add(f"clnn{i}.weights", (2 * lc.order + 1, width, lc.width))
        add(f"clnn{i}.bias", (lc.width,))
        width = lc.width
    for i, h in enumerate(config.dense_head):
        add(f"dense{i}.weights", (width, h.width))
        add(f"dense{i}.bias", (h.width,))
        width = h.width
    add("output.weights", (width, config.class_count))
    add("output.bias", (config.class_count,))
    return slots, off


class Network:
    """Parameters of a full model held in one flat float64 vector.

    ``tensors[name]`` are reshaped views into ``flat``, so optimizers can
    update the vector in place.
    """

    def __init__(self, config, flat=None):
        config.validate()
        self.config = config
        self.slots, size = _layout(config)
        self.flat = np.zeros(size) if flat is None else np.array(flat, dtype=np.float64)
        if self.flat.shape != (size,):
            raise ValueError(f"parameter vector has {self.flat.size} entries, config needs {size}")
        self.masks = []
        width = config.input_length
        for lc in config.clnn_layers:
            self.masks.append(
                None if lc.mask is None else build_mask(MaskSpec(width, lc.width, lc.mask.bandwidth, lc.mask.overlap))
            )
            width = lc.width
        self.plan = shape_plan(config)

    @property
    def tensors(self):
        return {s.name: self.flat[s.offset:s.offset + s.size].reshape(s.shape) for s in self.slots}

    @property
    def segment_size(self):
        return self.plan.segment_size

    def copy(self):
        return Network(self.config, self.flat.copy())

    def clnn_params(self, i, tensors=None):
        t = self.tensors if tensors is None else tensors
        lc = self.config.clnn_layers[i]
        return ClnnLayerParams(lc.order, t[f"clnn{i}.weights"], t[f"clnn{i}.bias"], lc.transfer, self.masks[i])

    # ---- forward / backward --------------------------------------------

    def forward(self, segments, dropout=0.0, rng=None):
        """Class probabilities for a batch of segments ``(B, q, l)``.

        With ``dropout > 0`` an inverted-dropout mask drawn from ``rng`` is
        applied to the pooled vector and after every hidden dense layer.
        Returns ``(probs, cache)``; pass the cache to :meth:`backward`.
        """
        from .training import dropout_mask  # local: training imports model

        x = np.asarray(segments, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.config.input_length:
            raise ValueError(f"segments must be (B, q, {self.config.input_length}), got {x.shape}")
        if x.shape[1] != self.segment_size:
            raise ValueError(f"segments have {x.shape[1]} frames, model expects q={self.segment_size}")
        t = self.tensors
        cache = {"clnn_in": [], "clnn_out": [], "dense_in": [], "dense_out": [], "drop": []}
        h = x
        for i in range(len(self.config.clnn_layers)):
            p = self.clnn_params(i, t)
            cache["clnn_in"].append(h)
            h = clnn_forward(h, p)
            cache["clnn_out"].append(h)
        cache["pool_in"] = h
        v = global_pool(h, self.config.pooling.statistic)

        def drop(vec):
            mask = dropout_mask(vec.shape, dropout, rng) if dropout > 0 else None
            cache["drop"].append(mask)
            return vec if mask is None else vec * mask

        v = drop(v)
        for i, hc in enumerate(self.config.dense_head):
            cache["dense_in"].append(v)
            v = dense_forward(v, t[f"dense{i}.weights"], t[f"dense{i}.bias"], hc.transfer)
            cache["dense_out"].append(v)
            v = drop(v)
        cache["out_in"] = v
        logits = dense_forward(v, t["output.weights"], t["output.bias"])
        cache["logits"] = logits
        probs = softmax(logits)
        return probs, cache

    def backward(self, cache, grad_logits):
        """Flat gradient vector for upstream gradient wrt the logits (summed over batch)."""
        t = self.tensors
        grad = np.zeros_like(self.flat)
        gt = {s.name: grad[s.offset:s.offset + s.size].reshape(s.shape) for s in self.slots}
        g = np.asarray(grad_logits, dtype=np.float64)
        gw, gb, g = dense_backward(cache["out_in"], t["output.weights"], cache["logits"], g)
        gt["output.weights"][...] = gw
        gt["output.bias"][...] = gb
        drops = cache["drop"]
        for i in reversed(range(len(self.config.dense_head))):
            if drops[i + 1] is not None:
                g = g * drops[i + 1]
            hc = self.config.dense_head[i]
            gw, gb, g = dense_backward(cache["dense_in"][i], t[f"dense{i}.weights"], cache["dense_out"][i], g, hc.transfer)
            gt[f"dense{i}.weights"][...] = gw
            gt[f"dense{i}.bias"][...] = gb
        if drops[0] is not None:
            g = g * drops[0]
        g = global_pool_backward(cache["pool_in"], g, self.config.pooling.statistic)
        for i in reversed(range(len(self.config.clnn_layers))):
            p = self.clnn_params(i, t)
            gw, gb, g = clnn_backward(cache["clnn_in"][i], p, g, output=cache["clnn_out"][i])
            gt[f"clnn{i}.weights"][...] = gw
            gt[f"clnn{i}.bias"][...] = gb
        return grad

    def predict_proba(self, segments, batch_size=256):
        x = np.asarray(segments, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, self.config.class_count))
        return np.concatenate(out)


def build_model(config, rng):
    """Allocate and initialise a network.

    Conditional layers use uniform [-s, s] with s = sqrt(6 / (l*d + e)),
    dense layers s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    net = Network(config)
    t = net.tensors
    width = config.input_length
    for i, lc in enumerate(config.clnn_layers):
        d = 2 * lc.order + 1
        s = np.sqrt(6.0 / (width * d + lc.width))
        t[f"clnn{i}.weights"][...] = rng.uniform(-s, s, (d, width, lc.width))
        width = lc.width
    for i, hc in enumerate(config.dense_head):
        s = np.sqrt(6.0 / (width + hc.width))
        t[f"dense{i}.weights"][...] = rng.uniform(-s, s, (width, hc.width))
        width = hc.width
    s = np.sqrt(6.0 / (width + config.class_count))
    t["output.weights"][...] = rng.uniform(-s, s, (width, config.class_count))
    return net

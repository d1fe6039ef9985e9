"""Loss, dropout and the mini-batch ADAM training loop."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import apply_zscore, default_stride, extract_segments, fit_zscore
from .model import ConfigError, Network, build_model
from .numerics import AdamState, Rng, adam_step

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "TrainResult",
    "TrainingDiverged",
    "cross_entropy",
    "dropout",
    "dropout_mask",
    "segment_arrays",
    "train",
]

log = logging.getLogger(__name__)

EPS_CE = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.5
    patience: int = 20
    seed: int = 0
    segment_stride: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"train.epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size: must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"train.dropout: must be in [0, 1), got {self.dropout}")
        if self.patience < 1:
            raise ConfigError(f"train.patience: must be >= 1, got {self.patience}")
        if self.segment_stride is not None and self.segment_stride < 1:
            raise ConfigError(f"train.segment_stride: must be >= 1, got {self.segment_stride}")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("train config: expected an object")
        known = {f for f in cls.__dataclass_fields__} | {"schema_version"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"train config: unknown key {unknown[0]!r}")
        if doc.get("schema_version", 1) != 1:
            raise ConfigError(f"train config.schema_version: unsupported version {doc['schema_version']!r}")
        kwargs = {k: v for k, v in doc.items() if k != "schema_version"}
        for k in ("epochs", "batch_size", "patience", "seed"):
            if k in kwargs and (isinstance(kwargs[k], bool) or not isinstance(kwargs[k], int)):
                raise ConfigError(f"train config.{k}: expected an integer, got {kwargs[k]!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"train config is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return {"schema_version": 1, **asdict(self)}


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self):
        lines = ["epoch,train_loss,val_loss,val_acc"]
        for i, (tl, vl, va) in enumerate(zip(self.train_loss, self.val_loss, self.val_acc)):
            lines.append(f"{i},{tl!r},{vl!r},{va!r}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    network: Network
    history: TrainHistory
    zscore: object


def cross_entropy(pred, target):
    """Categorical cross-entropy for one probability vector or a batch.

    Returns ``(loss, grad)`` where ``grad = pred - onehot`` is the gradient
    of the loss with respect to the pre-softmax logits. For a batch the loss
    is per-sample.
    """
    p = np.asarray(pred, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    t = np.atleast_1d(np.asarray(target))
    c = p2.shape[1]
    if np.any(t < 0) or np.any(t >= c):
        raise ValueError(f"target index out of range for {c} classes: {t.tolist()}")
    idx = np.arange(len(t))
    loss = -np.log(np.maximum(p2[idx, t], EPS_CE))
    grad = p2.copy()
    grad[idx, t] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def dropout_mask(shape, rate, rng):
    """Keep-mask scaled by 1/(1-rate): entries are 0 or 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, rng, training):
    """Inverted dropout; the identity at inference time or when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, rng)


def segment_arrays(clips, q, stride):
    """Stack every segment of every clip: ``(segments (N, q, l), labels (N,), clip_index (N,))``."""
    segs, labels, owner = [], [], []
    for ci, clip in enumerate(clips):
        for s in extract_segments(clip, q, stride):
            segs.append(s.frames)
            labels.append(clip.label)
            owner.append(ci)
    if not segs:
        return np.zeros((0, q, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.stack(segs), np.asarray(labels, dtype=np.int64), np.asarray(owner, dtype=np.int64)


def _mean_loss(net, x, y, batch_size):
    if len(x) == 0:
        return math.nan
    probs = net.predict_proba(x, batch_size)
    return float(cross_entropy(probs, y)[0].mean())


def _clip_accuracy(net, x, owner, clips, batch_size):
    from .evaluate import vote

    if len(x) == 0:
        return math.nan
    probs = net.predict_proba(x, batch_size)
    correct = 0
    for ci, clip in enumerate(clips):
        correct += vote(probs[owner == ci])[1] == clip.label
    return correct / len(clips)


def train(config, train_clips, val_clips=(), train_config=TrainConfig(), rng=None, network=None):
    """Fit a network on ``train_clips``, monitoring ``val_clips``.

    Z-score parameters are fitted on the training clips only and applied to
    both sets. Each epoch shuffles the training segments, runs mini-batch
    ADAM on the mean batch loss, then evaluates (without dropout) the
    training loss, validation loss and clip-level validation accuracy.
    History row 0 is the untrained network. The returned network holds the
    parameters of the epoch with the lowest validation loss (training loss
    when there is no validation set). Training stops after ``patience``
    epochs without improvement.
    """
    tc = train_config
    rng = Rng(tc.seed) if rng is None else rng
    train_clips = list(train_clips)
    val_clips = list(val_clips)
    if not train_clips:
        raise ValueError("training set is empty")
    zs = fit_zscore(train_clips)
    train_std = [apply_zscore(c, zs) for c in train_clips]
    val_std = [apply_zscore(c, zs) for c in val_clips]

    init_rng = rng.spawn(0)
    shuffle_rng = rng.spawn(1)
    drop_rng = rng.spawn(2)
    net = build_model(config, init_rng) if network is None else network.copy()
    q = net.segment_size
    stride = tc.segment_stride or default_stride(q)
    xt, yt, _ = segment_arrays(train_std, q, stride)
    xv, yv, ov = segment_arrays(val_std, q, stride)
    eval_bs = max(tc.batch_size, 256)

    history = TrainHistory()

    def record():
        tl = _mean_loss(net, xt, yt, eval_bs)
        vl = _mean_loss(net, xv, yv, eval_bs)
        va = _clip_accuracy(net, xv, ov, val_std, eval_bs)
        history.train_loss.append(tl)
        history.val_loss.append(vl)
        history.val_acc.append(va)
        return vl if val_clips else tl

    best = record()
    best_flat = net.flat.copy()
    state = AdamState.fresh(net.flat.size, lr=tc.learning_rate, beta1=tc.beta1, beta2=tc.beta2, eps=tc.epsilon)
    stale = 0
    for epoch in range(1, tc.epochs + 1):
        order = shuffle_rng.permutation(len(xt))
        for b, start in enumerate(range(0, len(order), tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            probs, cache = net.forward(xt[idx], dropout=tc.dropout, rng=drop_rng)
            loss, g = cross_entropy(probs, yt[idx])
            mean_loss = float(loss.mean())
            if not math.isfinite(mean_loss):
                raise TrainingDiverged(epoch, b, mean_loss)
            grad = net.backward(cache, g / len(idx))
            new_flat, state = adam_step(net.flat, grad, state)
            net.flat[:] = new_flat
        score = record()
        if not math.isfinite(score):
            raise TrainingDiverged(epoch, -1, score)
        log.info("epoch %d train_loss %.6f val_loss %.6f val_acc %.4f", epoch,
                 history.train_loss[-1], history.val_loss[-1], history.val_acc[-1])
        if score < best:
            best = score
            best_flat = net.flat.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    net.flat[:] = best_flat
    return TrainResult(net, history, zs)

"""Clip-level voting, confusion matrices and k-fold cross-validation."""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import apply_zscore, default_stride
from .numerics import Rng
from .training import TrainConfig, segment_arrays, train

__all__ = [
    "vote",
    "confusion",
    "accuracy",
    "predict_clips",
    "FoldResult",
    "CvReport",
    "cross_validate",
    "confusion_csv",
    "confusion_table",
]

log = logging.getLogger(__name__)


def vote(segment_probs, method="mean"):
    """Combine per-segment probability vectors of one clip.

    ``mean`` averages the vectors (values are sorted per class before
    summing, so the result does not depend on segment order); ``product``
    sums log-probabilities instead. The label is the argmax, lowest index on
    ties. Returns ``(clip_probs, label)``.
    """
    p = np.asarray(segment_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("vote needs at least one probability vector")
    if method == "mean":
        clip = np.sort(p, axis=0).sum(axis=0) / p.shape[0]
    elif method == "product":
        logs = np.sort(np.log(np.maximum(p, 1e-300)), axis=0).sum(axis=0)
        clip = np.exp(logs - logs.max())
        clip /= clip.sum()
    else:
        raise ValueError(f"unknown voting method {method!r}")
    return clip, int(np.argmax(clip))


def confusion(preds, labels, class_count):
    """Rows are true classes, columns predicted classes."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        bad = arr[(arr < 0) | (arr >= class_count)]
        if bad.size:
            raise ValueError(f"{name} class index {int(bad[0])} out of range for {class_count} classes")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def accuracy(cm):
    cm = np.asarray(cm)
    total = cm.sum()
    return float(np.trace(cm) / total) if total else float("nan")


def predict_clips(network, clips, zscore, stride=None, method="mean", batch_size=256):
    """Standardize, segment, score and vote; returns ``(clip_probs (N, C), labels (N,))``."""
    q = network.segment_size
    stride = stride or default_stride(q)
    std = [apply_zscore(c, zscore) for c in clips]
    x, _, owner = segment_arrays(std, q, stride)
    probs = network.predict_proba(x, batch_size)
    out = np.zeros((len(clips), network.config.class_count))
    labels = np.zeros(len(clips), dtype=np.int64)
    for ci in range(len(clips)):
        out[ci], labels[ci] = vote(probs[owner == ci], method)
    return out, labels


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    confusion: np.ndarray
    history: object = None


@dataclass
class CvReport:
    fold_accuracies: list
    mean_accuracy: float
    confusion: np.ndarray
    seed: int
    fold_count: int

    def to_dict(self):
        return {
            "seed": self.seed,
            "fold_count": self.fold_count,
            "fold_accuracies": [float(a) for a in self.fold_accuracies],
            "mean_accuracy": float(self.mean_accuracy),
            "confusion": self.confusion.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def fold_split(folds, test_fold, fold_count):
    """Index arrays (train, val, test). The fold after the test fold
    (cyclically) validates when there are at least three folds."""
    folds = np.asarray(folds)
    test = np.flatnonzero(folds == test_fold)
    if fold_count >= 3:
        val_fold = (test_fold + 1) % fold_count
        val = np.flatnonzero(folds == val_fold)
        tr = np.flatnonzero((folds != test_fold) & (folds != val_fold))
    else:
        val = np.zeros(0, dtype=np.int64)
        tr = np.flatnonzero(folds != test_fold)
    return tr, val, test


def run_fold(clips, folds, fold, fold_count, model_config, train_config, vote_method="mean"):
    tr, va, te = fold_split(folds, fold, fold_count)
    if len(tr) == 0:
        raise RuntimeError(f"fold {fold}: no training clips")
    rng = Rng(train_config.seed).spawn(fold)
    try:
        res = train(model_config, [clips[i] for i in tr], [clips[i] for i in va], train_config, rng=rng)
        test_clips = [clips[i] for i in te]
        probs, preds = predict_clips(res.network, test_clips, res.zscore, train_config.segment_stride, vote_method)
    except Exception as exc:
        raise RuntimeError(f"fold {fold} failed: {exc}") from exc
    cm = confusion(preds, [c.label for c in test_clips], model_config.class_count)
    log.info("fold %d accuracy %.4f", fold, accuracy(cm))
    return FoldResult(fold, accuracy(cm), cm, res.history)


def _run_fold_star(args):
    return run_fold(*args)


def cross_validate(clips, folds, model_config, train_config=TrainConfig(), fold_count=None,
                   vote_method="mean", jobs=1, return_folds=False):
    """Train and test once per fold; z-score statistics always come from the
    training split of that fold."""
    folds = np.asarray(folds, dtype=np.int64)
    fold_count = int(folds.max()) + 1 if fold_count is None else fold_count
    tasks = [(clips, folds, f, fold_count, model_config, train_config, vote_method) for f in range(fold_count)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_star, tasks))
    else:
        results = [_run_fold_star(t) for t in tasks]
    accs = [r.accuracy for r in results]
    total = sum((r.confusion for r in results), np.zeros((model_config.class_count,) * 2, dtype=np.int64))
    report = CvReport(accs, float(np.mean(accs)), total, train_config.seed, fold_count)
    return (report, results) if return_folds else report


def _names(class_count, class_names):
    if class_names is None:
        return [str(i) for i in range(class_count)]
    if len(class_names) != class_count:
        raise ValueError(f"{len(class_names)} class names for {class_count} classes")
    return list(class_names)


def confusion_csv(cm, class_names=None):
    names = _names(len(cm), class_names)
    lines = ["true\\pred," + ",".join(names)]
    for name, row in zip(names, cm):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def confusion_table(cm, class_names=None):
    names = _names(len(cm), class_names)
    width = max(max(len(n) for n in names), max(len(str(int(v))) for v in np.ravel(cm)) if np.size(cm) else 1)
    head = " " * width + " | " + " ".join(n.rjust(width) for n in names)
    lines = [head, "-" * len(head)]
    for name, row in zip(names, cm):
        lines.append(name.rjust(width) + " | " + " ".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines) + "\n"

"""Command-line entry point: ``mclnn <subcommand> ...``.

Exit codes: 0 success, 1 usage error (bad flags, invalid configs),
2 runtime error. ``MCLNN_LOG`` selects quiet / info / debug logging.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import kernels
from .data import (
    ContainerError,
    FeatureClip,
    IndexRow,
    ZScoreParams,
    load_dataset,
    make_folds,
    read_checkpoint,
    read_index,
    write_checkpoint,
    write_clip,
    write_index,
)
from .dsp import log_mel, mel_filterbank, read_wav, stft_magnitude
from .evaluate import (
    accuracy,
    confusion,
    confusion_csv,
    confusion_table,
    cross_validate,
    predict_clips,
)
from .masking import MaskSpec, build_mask, mask_stats, to_csv, to_pgm
from .model import ConfigError, ModelConfig, Network
from .numerics import Rng
from .synthetic import write_synthetic
from .training import TrainConfig, train

log = logging.getLogger("mclnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("MCLNN_LOG", "info").lower()
    levels = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"MCLNN_LOG must be one of quiet, info, debug; got {level!r}")
    logging.basicConfig(level=levels[level], format="%(message)s", stream=sys.stderr)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _resolve_folds(clips, fold_count, source, seed):
    if source == "index":
        folds = np.array([c.fold for c in clips])
        if np.any(folds < 0) or np.any(folds >= fold_count):
            raise UsageError(f"--fold-source index needs every fold in [0, {fold_count}) in the index")
        return folds
    return make_folds([c.label for c in clips], fold_count, Rng(seed).spawn(10_000))


def _class_names(arg, class_count):
    if not arg:
        return None
    names = arg.split(",")
    if len(names) != class_count:
        raise UsageError(f"--classes lists {len(names)} names for {class_count} classes")
    return names


def _load_train_config(path, seed):
    tc = TrainConfig.load(path) if path else TrainConfig()
    if seed is not None:
        tc = TrainConfig(**{**tc.__dict__, "seed": seed})
    return tc


def save_model(path, network, zscore):
    tensors = dict(network.tensors)
    tensors["zscore.mean"] = zscore.mean
    tensors["zscore.std"] = zscore.std
    write_checkpoint(path, network.config.to_json(), tensors)


def load_model(path):
    if os.path.isdir(path):
        path = os.path.join(path, "model.mclw")
    config_json, tensors = read_checkpoint(path)
    config = ModelConfig.from_json(config_json)
    net = Network(config)
    t = net.tensors
    for name, view in t.items():
        if name not in tensors:
            raise ContainerError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].size != view.size:
            raise ContainerError(f"tensor {name!r} has {tensors[name].size} values, expected {view.size}")
        view[...] = tensors[name].reshape(view.shape)
    zs = ZScoreParams(tensors["zscore.mean"].ravel(), tensors["zscore.std"].ravel())
    return net, zs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_preprocess(args):
    rows = read_index(args.index)
    if not rows:
        raise RuntimeError("no clips in index")
    os.makedirs(args.out, exist_ok=True)
    fb_cache = {}
    out_rows, failures = [], []
    for r in rows:
        src = os.path.join(args.audio_dir, r.path)
        try:
            audio = read_wav(src)
            fb = fb_cache.get(audio.sample_rate)
            if fb is None:
                fb = fb_cache[audio.sample_rate] = mel_filterbank(audio.sample_rate, args.mels, args.n_fft)
            feats = log_mel(stft_magnitude(audio, args.n_fft, args.hop), fb)
        except (OSError, ValueError, EOFError) as exc:
            failures.append((r.id, str(exc)))
            continue
        name = r.id + ".mcln"
        write_clip(os.path.join(args.out, name), FeatureClip(r.id, feats, r.label))
        out_rows.append(IndexRow(r.id, name, r.label, r.fold))
        log.info("%s: %d frames x %d", r.id, feats.shape[0], feats.shape[1])
    write_index(os.path.join(args.out, "index.csv"), out_rows)
    for cid, msg in failures:
        print(f"failed: {cid}: {msg}", file=sys.stderr)
    if failures:
        raise RuntimeError(f"{len(failures)} of {len(rows)} clips failed")
    print(f"preprocessed {len(out_rows)} clips -> {args.out}")


def cmd_mask(args):
    try:
        spec = MaskSpec(args.l, args.e, args.bw, args.ov)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    mask = build_mask(spec)
    if args.out:
        _write_text(args.out, to_pgm(mask))
    if args.csv:
        _write_text(args.csv, to_csv(mask))
    stats = mask_stats(mask)
    print(f"mask l={spec.l} e={spec.e} bw={spec.bw} ov={spec.ov}")
    print(f"density {stats['density']!r}")


def _split_clips(clips, folds, val_fold, test_fold):
    tr, va, te = [], [], []
    for c, f in zip(clips, folds):
        if test_fold is not None and f == test_fold:
            te.append(c)
        elif val_fold is not None and f == val_fold:
            va.append(c)
        else:
            tr.append(c)
    return tr, va, te


def cmd_train(args):
    config = ModelConfig.load(args.config)
    tc = _load_train_config(args.train_config, args.seed)
    clips = load_dataset(args.data)
    folds = _resolve_folds(clips, args.folds, args.fold_source, tc.seed)
    val_fold = None if args.val_fold < 0 else args.val_fold
    test_fold = None if args.test_fold is None or args.test_fold < 0 else args.test_fold
    tr, va, _ = _split_clips(clips, folds, val_fold, test_fold)
    print(f"seed {tc.seed}  backend {kernels.BACKEND}")
    print(f"train clips {len(tr)}  validation clips {len(va)}  segment size {Network(config).segment_size}")
    res = train(config, tr, va, tc)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.mclw")
    save_model(ckpt, res.network, res.zscore)
    _write_text(os.path.join(args.out, "history.csv"), res.history.to_csv())
    # score what was saved: float32 parameters, as `eval` will see them
    net, zs = load_model(ckpt)
    val_acc = None
    if va:
        _, preds = predict_clips(net, va, zs, tc.segment_stride)
        val_acc = accuracy(confusion(preds, [c.label for c in va], config.class_count))
    summary = {
        "seed": tc.seed,
        "best_epoch": res.history.best_epoch,
        "epochs_run": len(res.history.train_loss) - 1,
        "val_fold": val_fold,
        "test_fold": test_fold,
        "val_accuracy": val_acc,
        "train_config": tc.to_dict(),
    }
    _write_text(os.path.join(args.out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"best epoch {res.history.best_epoch}  validation accuracy {val_acc!r}")


def cmd_eval(args):
    net, zs = load_model(args.ckpt)
    config = net.config
    clips = load_dataset(args.data)
    if args.fold is not None:
        folds = _resolve_folds(clips, args.folds, args.fold_source, args.seed)
        clips = [c for c, f in zip(clips, folds) if f == args.fold]
    if not clips:
        raise RuntimeError("no clips to evaluate")
    names = _class_names(args.classes, config.class_count)
    _, preds = predict_clips(net, clips, zs, args.stride, args.vote)
    cm = confusion(preds, [c.label for c in clips], config.class_count)
    acc = accuracy(cm)
    print(confusion_table(cm, names), end="")
    print(f"clips {len(clips)}  accuracy {acc!r}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text(os.path.join(args.out, "confusion.csv"), confusion_csv(cm, names))
        _write_text(os.path.join(args.out, "confusion.txt"), confusion_table(cm, names))
        report = {"accuracy": acc, "clips": len(clips), "confusion": cm.tolist(), "fold": args.fold}
        _write_text(os.path.join(args.out, "report.json"), json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_cv(args):
    config = ModelConfig.load(args.config)
    tc = _load_train_config(args.train_config, args.seed)
    clips = load_dataset(args.data)
    names = _class_names(args.classes, config.class_count)
    folds = _resolve_folds(clips, args.folds, args.fold_source, tc.seed)
    print(f"seed {tc.seed}  folds {args.folds}  backend {kernels.BACKEND}")
    report, results = cross_validate(clips, folds, config, tc, args.folds, args.vote, args.jobs, return_folds=True)
    for r in results:
        print(f"fold {r.fold}: accuracy {r.accuracy:.4f}")
    print(confusion_table(report.confusion, names), end="")
    print(f"mean accuracy {report.mean_accuracy:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text(os.path.join(args.out, "report.json"), report.to_json())
        _write_text(os.path.join(args.out, "confusion.csv"), confusion_csv(report.confusion, names))
        _write_text(os.path.join(args.out, "confusion.txt"), confusion_table(report.confusion, names))
        for r in results:
            _write_text(os.path.join(args.out, f"fold{r.fold}_history.csv"), r.history.to_csv())


def cmd_synth(args):
    clips = write_synthetic(args.out, seed=args.seed)
    print(f"wrote {len(clips)} synthetic clips -> {args.out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_fold_flags(p, seed_default=None):
    p.add_argument("--folds", type=int, default=10, help="number of folds (default 10)")
    p.add_argument("--fold-source", choices=["stratified", "index"], default="stratified",
                   help="assign stratified folds from the seed, or use the index's fold column")
    p.add_argument("--seed", type=int, default=seed_default,
                   help="seed for folds, init, shuffling and dropout (default: train config seed, 0)")


def build_parser():
    parser = _Parser(prog="mclnn", description="Masked conditional neural networks for audio classification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="WAV files -> log-mel feature containers")
    p.add_argument("--audio-dir", required=True, help="directory the index's paths are relative to")
    p.add_argument("--index", required=True, help="CSV index id,path,label,fold of WAV files")
    p.add_argument("--out", required=True, help="output directory for .mcln files and index.csv")
    p.add_argument("--n-fft", type=int, default=2048, help="FFT size (power of two, default 2048)")
    p.add_argument("--hop", type=int, default=1024, help="hop size in samples (default 1024)")
    p.add_argument("--mels", type=int, default=256, help="number of mel bands (default 256)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("mask", help="render a band mask as PGM/CSV and print its density")
    p.add_argument("--l", type=int, required=True, help="feature vector length (mask rows)")
    p.add_argument("--e", type=int, required=True, help="hidden width (mask columns)")
    p.add_argument("--bw", type=int, required=True, help="bandwidth: consecutive ones per band")
    p.add_argument("--ov", type=int, required=True, help="overlap between bands (may be negative)")
    p.add_argument("--out", help="write a plain PGM (P2) image here")
    p.add_argument("--csv", help="write the 0/1 matrix as CSV here")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train one model on a train/validation split")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--train-config", help="training config JSON (defaults if omitted)")
    p.add_argument("--data", required=True, help="feature index CSV")
    p.add_argument("--out", required=True, help="output directory (model.mclw, history.csv, summary.json)")
    p.add_argument("--val-fold", type=int, default=0, help="validation fold, -1 for none (default 0)")
    p.add_argument("--test-fold", type=int, default=None, help="fold held out entirely (default none)")
    _add_fold_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with probability voting")
    p.add_argument("--ckpt", required=True, help="checkpoint file or train output directory")
    p.add_argument("--data", required=True, help="feature index CSV")
    p.add_argument("--fold", type=int, default=None, help="evaluate only this fold (default all clips)")
    p.add_argument("--stride", type=int, default=None, help="segment stride (default ceil(q/2))")
    p.add_argument("--vote", choices=["mean", "product"], default="mean", help="probability voting rule")
    p.add_argument("--classes", help="comma-separated class names for reports")
    p.add_argument("--out", help="directory for confusion.csv, confusion.txt, report.json")
    _add_fold_flags(p, seed_default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--train-config", help="training config JSON (defaults if omitted)")
    p.add_argument("--data", required=True, help="feature index CSV")
    p.add_argument("--out", help="directory for report.json, confusion.csv/.txt and fold histories")
    p.add_argument("--vote", choices=["mean", "product"], default="mean", help="probability voting rule")
    p.add_argument("--classes", help="comma-separated class names for reports")
    p.add_argument("--jobs", type=int, default=1, help="folds trained in parallel (default 1)")
    _add_fold_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("synth", help="write the synthetic smoke-test dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mclnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        if os.environ.get("MCLNN_LOG", "").lower() == "debug":
            raise
        print(f"mclnn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

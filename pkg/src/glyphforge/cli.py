"""Command-line entry point: ``glyphforge <subcommand> ...``.

Exit codes: 0 ok, 1 internal error, 2 usage or dataset layout, 3 I/O or
unreadable file, 4 numeric abort (including a failed gradient check).
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .ablation import run_ablation, write_ablation_csv
from .dataset import (
    METHODS,
    SPLITS,
    AugmentPlan,
    LabeledImage,
    SplitManifest,
    augment_dataset,
    autocrop,
    discover,
    load_image,
    load_samples,
    resize,
    save_png,
    split_dataset,
)
from .errors import ConfigError, DataError, FormatError, IntegrityError, NumericError, ShapeError
from .layers import softmax
from .metrics import LETTERS
from .model import ModelConfig, count_parameters, load_model, save_model
from .plotting import plot_ablation, plot_confusion, plot_loss_curve
from .trainer import emit_loss_curve, evaluate, train

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
DEFAULT_SEED = 42

log = logging.getLogger("glyphforge")


def _rel(path, start):
    return Path(os.path.relpath(Path(path).resolve(), Path(start).resolve())).as_posix()


# ----------------------------------------------------------------- commands --


def cmd_preprocess(args):
    src, dst = Path(args.input), Path(args.out)
    items = discover(src)
    for path, label in items:
        img = load_image(path, label=label)
        px = autocrop(img.pixels, threshold=args.threshold, invert=args.invert)
        px = resize(px, args.size, args.size)
        save_png(px, dst / path.parent.name / (path.stem + ".png"))
    print(f"preprocessed {len(items)} images into {dst}")
    return EXIT_OK


def _plan_from_args(args):
    plan = AugmentPlan(seed=args.seed)
    enabled = set(args.methods.split(",")) if args.methods else set(METHODS)
    unknown = enabled - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown augmentation methods: {sorted(unknown)}")
    for name, mp in plan.methods.items():
        mp.enabled = name in enabled
        mp.count = args.count
        mp.probability = args.probability
        rng = getattr(args, name)
        if rng is not None:
            mp.low, mp.high = rng
    return plan.validate()


def cmd_augment(args):
    src, dst = Path(args.input), Path(args.out)
    images = []
    for path, label in discover(src):
        img = load_image(path, label=label)
        # paths relative to the tree keep the per-sample seeds location independent
        img.path = _rel(path, src)
        images.append(img)
    result = augment_dataset(images, _plan_from_args(args))
    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "provenance.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "source", "method", "param"])
        for img in result:
            out_path = Path(img.path).with_suffix(".png").as_posix()
            save_png(img.pixels, dst / out_path)
            param = "" if img.provenance == "original" else f"{img.param:.6f}"
            source = img.path if img.provenance == "original" else img.source
            writer.writerow([out_path, LETTERS[img.label], Path(source).with_suffix(".png").as_posix(), img.provenance, param])
    print(f"wrote {len(result)} images ({len(result) - len(images)} augmented) into {dst}")
    return EXIT_OK


def _read_provenance(root):
    path = Path(root) / "provenance.csv"
    if not path.exists():
        return {}
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["path"]: row for row in csv.DictReader(fh)}


def cmd_split(args):
    src, out = Path(args.input), Path(args.out)
    provenance = _read_provenance(src)
    if args.mode == "leakage-safe" and not provenance:
        raise DataError(f"leakage-safe mode needs {src / 'provenance.csv'} (written by `augment`)")
    base = out.parent
    images = []
    for path, label in discover(src):
        rel = _rel(path, src)
        row = provenance.get(rel)
        method = row["method"] if row else "original"
        source = (src / row["source"]) if row and method != "original" else path
        images.append(LabeledImage(None, label, path=_rel(path, base), provenance=method, source=_rel(source, base)))
    manifest = split_dataset(images, ratios=tuple(args.ratios), seed=args.seed, mode=args.mode)
    base.mkdir(parents=True, exist_ok=True)
    manifest.write_csv(out)
    counts = manifest.counts()
    print(" ".join(f"{s}={counts[s]}" for s in SPLITS) + f" mode={args.mode}")
    return EXIT_OK


def _load_config(args):
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    overrides = {
        k: getattr(args, k)
        for k in ("epochs", "batch_size", "lr", "input_size", "seed")
        if getattr(args, k, None) is not None
    }
    return cfg.replace(**overrides).validate()


def _split_arrays(manifest_path, split, size):
    manifest = SplitManifest.read_csv(manifest_path)
    entries = manifest.subset(split)
    if not entries:
        raise DataError(f"{manifest_path}: split {split!r} is empty")
    return load_samples(entries, base_dir=Path(manifest_path).parent, compact=True, expected_size=size)


def cmd_train(args):
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set = _split_arrays(args.manifest, "train", cfg.input_size)
    val_set = _split_arrays(args.manifest, "val", cfg.input_size)
    print(f"# {cfg.name}: {count_parameters(cfg)} parameters, {len(train_set[1])} train / {len(val_set[1])} val")
    artifact, logs = train(cfg, train_set, val_set, out=sys.stdout)
    save_model(artifact, out / "model.hiec")
    emit_loss_curve(logs, out / "loss_curve.csv")
    plot_loss_curve(logs, out / "loss_curve.png")
    best = max(logs, key=lambda e: e.val_accuracy) if logs else None
    if best is not None:
        print(f"best epoch={best.epoch} val_acc={best.val_accuracy:.6f}")
    return EXIT_OK


def cmd_evaluate(args):
    artifact = load_model(args.model)
    X, y = _split_arrays(args.manifest, args.split, None)
    report = evaluate(artifact, X, y, average=args.average)
    print(report.table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        plot_confusion(report, out / "confusion.png")
    return EXIT_OK


def cmd_predict(args):
    artifact = load_model(args.model)
    cfg = artifact.config
    px = load_image(args.image, label=0).pixels
    if args.preprocess:
        px = resize(autocrop(px, threshold=args.threshold), cfg.input_size, cfg.input_size)
    if px.shape != (cfg.input_size, cfg.input_size, cfg.input_channels):
        raise ShapeError(f"image is {px.shape}, model expects {cfg.input_size}x{cfg.input_size} (try --preprocess)")
    logits = artifact.to_model().logits(px[None])[0]
    probs = softmax(logits.astype(np.float64))
    order = np.argsort(-probs, kind="stable")[: args.top]
    for k in order:
        print(f"{LETTERS[k]} {probs[k]:.6f}")
    return EXIT_OK


def cmd_ablate(args):
    paths = sorted(Path(args.configs).glob("*.json"))
    if not paths:
        raise DataError(f"no *.json configs in {args.configs}")
    overrides = {k: getattr(args, k) for k in ("epochs", "input_size", "seed") if getattr(args, k) is not None}
    configs = [ModelConfig.load(p).replace(**overrides) for p in paths]
    sizes = {c.input_size for c in configs}
    if len(sizes) != 1:
        raise ConfigError(f"all configs must share one input size, got {sorted(sizes)}")
    size = sizes.pop()
    sets = [_split_arrays(args.manifest, s, size) for s in SPLITS]
    rows = run_ablation(configs, *sets, out=sys.stdout, average=args.average)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for row in rows:
        if not row.failed:
            run_dir = out / row.name
            run_dir.mkdir(exist_ok=True)
            save_model(row.artifact, run_dir / "model.hiec")
            emit_loss_curve(row.logs, run_dir / "loss_curve.csv")
    write_ablation_csv(rows, out / "ablation.csv")
    plot_ablation(rows, out / "ablation.png")
    for row in rows:
        status = "failed: " + row.error if row.failed else f"accuracy {100 * row.report.accuracy:.2f}%"
        print(f"{row.name} params={row.params} {status}")
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run(args.layer or None, seed=args.seed)
    print(f"{'layer':<8} {'tensor':<16} {'rel_error':>12}  status")
    worst = {}
    for r in results:
        print(f"{r.layer:<8} {r.tensor:<16} {r.rel_error:12.3e}  {'ok' if r.passed else 'FAIL'}")
        if r.layer not in worst or r.rel_error > worst[r.layer].rel_error:
            worst[r.layer] = r
    print()
    for name, r in worst.items():
        print(f"{name:<8} max_rel_error={r.rel_error:.3e} {'pass' if r.passed else 'fail'}")
    failed = [r for r in worst.values() if not r.passed]
    for r in failed:
        print(f"FAILED {r.layer}: worst {r.tensor} index {r.worst_index}", file=sys.stderr)
    return EXIT_NUMERIC if failed else EXIT_OK


# ------------------------------------------------------------------ parser --


def build_parser():
    seed_help = f"random seed for every stochastic step (default {DEFAULT_SEED})"
    parser = argparse.ArgumentParser(prog="glyphforge", description="Handwritten lowercase-letter CNN pipeline.")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help=seed_help)
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=seed_help)

    p = sub.add_parser("preprocess", parents=[common], help="crop to the ink and resize every image")
    p.add_argument("--in", dest="input", required=True, help="input tree root/<letter>/<image>")
    p.add_argument("--out", required=True, help="output tree (PNG, same layout)")
    p.add_argument("--threshold", type=float, default=0.5, help="ink threshold in (0, 1) (default 0.5)")
    p.add_argument("--size", type=int, default=224, help="output side length in pixels (default 224)")
    p.add_argument("--invert", action="store_true", help="light ink on dark background")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", parents=[common], help="add brightness/contrast/rotation/sharpness copies")
    p.add_argument("--in", dest="input", required=True, help="preprocessed tree")
    p.add_argument("--out", required=True, help="output tree; also receives provenance.csv")
    p.add_argument("--methods", default=",".join(METHODS), help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--count", type=int, default=1, help="copies per original and method (default 1)")
    p.add_argument("--probability", type=float, default=1.0, help="keep probability per copy (default 1.0)")
    p.add_argument("--brightness", type=float, nargs=2, metavar=("LO", "HI"), help="factor range (0.7 1.3)")
    p.add_argument("--contrast", type=float, nargs=2, metavar=("LO", "HI"), help="factor range (0.7 1.3)")
    p.add_argument("--rotation", type=float, nargs=2, metavar=("LO", "HI"), help="degrees range (-15 15)")
    p.add_argument("--sharpness", type=float, nargs=2, metavar=("LO", "HI"), help="factor range (0.5 2.0)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", parents=[common], help="write a train/val/test manifest CSV")
    p.add_argument("--in", dest="input", required=True, help="image tree to split")
    p.add_argument("--out", required=True, help="manifest CSV path (path,label,split)")
    p.add_argument("--mode", choices=("augment-first", "leakage-safe"), default="augment-first", help="split order (default augment-first)")
    p.add_argument("--ratios", type=float, nargs=3, default=[0.8, 0.1, 0.1], metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=cmd_split)

    def model_flags(p):
        p.add_argument("--epochs", type=int, help="override the config's epoch count")
        p.add_argument("--input-size", type=int, help="override the config's input size")

    p = sub.add_parser("train", parents=[common], help="train one configuration")
    p.add_argument("--manifest", required=True, help="manifest CSV from `split`")
    p.add_argument("--config", help="JSON model config (default: the base model)")
    p.add_argument("--out", required=True, help="directory for model.hiec and loss_curve.csv/.png")
    model_flags(p)
    p.add_argument("--batch-size", type=int, help="override the config's batch size")
    p.add_argument("--lr", type=float, help="override the config's learning rate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a model on one split")
    p.add_argument("--model", required=True, help=".hiec model file")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--split", choices=SPLITS, default="test", help="split to score (default test)")
    p.add_argument("--out", help="directory for report.json and confusion.png")
    p.add_argument("--average", choices=("macro", "weighted"), default="macro", help="averaging (default macro)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="top-k letters for one image")
    p.add_argument("--image", required=True, help="image file")
    p.add_argument("--model", required=True, help=".hiec model file")
    p.add_argument("--top", type=int, default=5, help="number of letters to print (default 5)")
    p.add_argument("--preprocess", action="store_true", help="autocrop and resize a raw image first")
    p.add_argument("--threshold", type=float, default=0.5, help="ink threshold for --preprocess")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", parents=[common], help="train and compare every config in a directory")
    p.add_argument("--configs", required=True, help="directory of *.json configs (run in name order)")
    p.add_argument("--manifest", required=True, help="manifest CSV shared by all runs")
    p.add_argument("--out", required=True, help="directory for ablation.csv/.png and per-config runs")
    p.add_argument("--average", choices=("macro", "weighted"), default="macro", help="averaging (default macro)")
    model_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every backward pass")
    p.add_argument("--layer", action="append", choices=list(gradcheck.CHECKS), help="restrict to a layer (repeatable)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (FormatError, IntegrityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a bug
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

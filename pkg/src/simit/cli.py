"""Command-line entry point: ``simit {gen-data,train,translate,evaluate}``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import PRESETS, VARIANTS, TrainConfig, load_config, save_config
from .datagen import ToyConfig, _write_png, read_image, read_label, split_counts, write_toy_dataset
from .errors import ConfigError, DataError, SimitError, UsageError

OUTPUT_ROOT_ENV = "SIMIT_OUTPUT_ROOT"
METRICS = ("ssim", "kid", "fid", "bone-iou", "seg")


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated fractions, got {text!r}")
    if len(parts) != 3 or abs(sum(parts) - 1.0) > 1e-6 or min(parts) < 0:
        raise argparse.ArgumentTypeError("split fractions must be three non-negative numbers summing to 1")
    return parts


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = ToyConfig(args.size, args.classes, color_mode="gray" if args.gray else "rgb")
    manifest = write_toy_dataset(args.out, args.seed, args.num_scenes, cfg,
                                 split_counts(args.num_scenes, args.splits))
    counts = {s: len(v["paired"]) for s, v in manifest.splits.items()}
    print(f"wrote {args.num_scenes} scenes to {args.out} ({counts})")
    return 0


def _train_config(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(args.config, args.preset) if args.config else PRESETS[args.preset]
    overrides = {
        "variant": args.variant, "seed": args.seed, "epochs": args.epochs,
        "batch_size": args.batch_size, "ada_target": args.ada_target, "ada_speed": args.ada_speed,
        "lambda_F": args.lambda_F,
    }
    if args.ada is not None:
        overrides["ada"] = args.ada == "on"
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args: argparse.Namespace) -> int:
    from .trainer import fit

    cfg = _train_config(args)
    out = Path(args.out) if args.out else _default_out(cfg.variant)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    result = fit(args.data, cfg, out, resume=args.resume, max_steps=args.max_steps)
    stats = vars(result.trainer.stats)
    summary = {
        "variant": cfg.variant,
        "steps": result.trainer.step,
        "wiring": stats,
        "validation": result.validation,
        "final_checkpoint": str(result.final_checkpoint) if result.final_checkpoint else None,
        "best_checkpoint": str(result.best_checkpoint) if result.best_checkpoint else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps({"event": "done", "steps": result.trainer.step, "sim_reads": stats["sim_reads"],
                      "reconstructions": stats["reconstructions"]}))
    return 0


def _pngs(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.png"))
    if not files:
        raise DataError(f"no PNG files in {directory}")
    return files


def cmd_translate(args: argparse.Namespace) -> int:
    from .trainer import Trainer

    trainer = Trainer.load(args.checkpoint)
    files = _pngs(args.input)
    out = Path(args.out) if args.out else _default_out("translated")
    if args.direction == "label2image":
        labels = np.stack([read_label(f, trainer.num_classes) for f in files])
        images = np.clip(trainer.translate_labels(labels, seed=args.seed), 0.0, 1.0)
        for f, img in zip(files, images):
            _write_png(out / f.name, img)
    else:
        images = np.stack([read_image(f, trainer.channels) for f in files])
        for f, lab in zip(files, trainer.translate_images(images)):
            _write_png(out / f.name, lab)
    print(f"translated {len(files)} files into {out}")
    return 0


def _paired_files(dir_a: str, dir_b: str) -> list[tuple[Path, Path]]:
    a, b = _pngs(dir_a), _pngs(dir_b)
    names_a, names_b = {f.name for f in a}, {f.name for f in b}
    for f in a:
        if f.name not in names_b:
            raise DataError(f"{f} has no counterpart in {dir_b}")
    for f in b:
        if f.name not in names_a:
            raise DataError(f"{f} has no counterpart in {dir_a}")
    return [(f, Path(dir_b) / f.name) for f in a]


def _read_checked(path: Path, reader, shape=None):
    arr = reader(path)
    if shape is not None and arr.shape != shape:
        raise DataError(f"size mismatch: {path} is {arr.shape}, expected {shape}")
    return arr


def evaluate_dirs(metric: str, dir_a: str, dir_b: str, channels: int = 3, num_classes: int | None = None,
                  embedder: str = "random-projection") -> dict:
    """Compute one metric between two directories of PNGs.

    Paired metrics (ssim, bone-iou, seg) match files by name and report one
    score per file plus mean(std); set metrics (kid, fid) compare the two
    embedded sets.
    """
    if metric in ("kid", "fid"):
        emb = metrics.get_embedder(embedder)
        sets = []
        for d in (dir_a, dir_b):
            files = _pngs(d)
            first = read_image(files[0], channels)
            sets.append(emb(np.stack([_read_checked(f, lambda p: read_image(p, channels), first.shape)
                                      for f in files])))
        value = metrics.kid(*sets) if metric == "kid" else metrics.fid(*sets)
        return {"metric": metric, "embedder": embedder, "n_a": len(sets[0]), "n_b": len(sets[1]),
                "value": value}
    pairs = _paired_files(dir_a, dir_b)
    per_file = {}
    if metric == "seg":
        preds = [np.asarray(read_label(a, 256)) for a, _ in pairs]
        gts = [_read_checked(b, lambda p: read_label(p, 256), preds[i].shape) for i, (_, b) in enumerate(pairs)]
        c = num_classes or int(max(max(p.max() for p in preds), max(g.max() for g in gts)) + 1)
        for (a, _), p, g in zip(pairs, preds, gts):
            per_file[a.name] = metrics.toy_segmentation_accuracy(p, g, c).pix_acc
        total = metrics.toy_segmentation_accuracy(np.stack(preds), np.stack(gts), c)
        extra = {"pix_acc": total.pix_acc, "class_acc": total.mean_class_acc,
                 "precision": total.mean_precision, "num_classes": c}
    else:
        for a, b in pairs:
            xa = read_image(a, channels)
            xb = _read_checked(b, lambda p: read_image(p, channels), xa.shape)
            if metric == "ssim":
                per_file[a.name] = metrics.ssim(xa, xb)
            else:
                per_file[a.name] = metrics.bone_iou(metrics.bone_mask(xa), metrics.bone_mask(xb))
        extra = {}
    values = list(per_file.values())
    mean, std = metrics.mean_std(values)
    return {"metric": metric, "per_file": per_file, "mean": mean, "std": std,
            "summary": metrics.format_mean_std(values, scale=100.0), **extra}


def _report_table(report: dict) -> str:
    lines = [f"metric: {report['metric']}"]
    if "per_file" in report:
        width = max(len(k) for k in report["per_file"])
        lines += [f"{k:<{width}}  {v:.6f}" for k, v in report["per_file"].items()]
        lines.append(f"{'mean(std) x100':<{width}}  {report['summary']}")
    else:
        lines.append(f"value ({report['embedder']}, n={report['n_a']}/{report['n_b']}): {report['value']:.8g}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args: argparse.Namespace) -> int:
    report = evaluate_dirs(args.metric, args.dir_a, args.dir_b, 1 if args.gray else 3,
                           args.classes, args.embedder)
    table = _report_table(report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".json").write_text(json.dumps(report, indent=2) + "\n")
    out.with_suffix(".txt").write_text(table)
    sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a toy dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-scenes", type=int, default=320)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--splits", type=_fractions, default=(0.8, 0.1, 0.1), help="train,val,test fractions")
    p.add_argument("--gray", action="store_true", help="grayscale images")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a translator pair")
    p.add_argument("--config", help="YAML config; CLI flags override it")
    p.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--data", required=True, help="dataset root or manifest")
    p.add_argument("--out", help=f"run directory (default ${OUTPUT_ROOT_ENV}/<variant>)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lambda-F", dest="lambda_F", type=float)
    p.add_argument("--ada", choices=("on", "off"))
    p.add_argument("--ada-target", type=float)
    p.add_argument("--ada-speed", type=float)
    p.add_argument("--max-steps", type=int, help="stop after this many global steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="run a trained translator on a directory of PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--direction", choices=("label2image", "image2label"), default="label2image")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="compare two directories of PNGs")
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--dir-a", required=True)
    p.add_argument("--dir-b", required=True)
    p.add_argument("--out", required=True, help="report path; .json and .txt are written")
    p.add_argument("--classes", type=int, help="class count for --metric seg")
    p.add_argument("--embedder", default="random-projection", choices=("random-projection", "inception"))
    p.add_argument("--gray", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"simit {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (SimitError, OSError) as exc:
        print(f"simit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

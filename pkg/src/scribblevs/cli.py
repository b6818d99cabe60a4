"""``scribblevs`` command line: train, eval, synth, ablate, dump-pseudolabels.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from scribblevs import data as data_mod
from scribblevs.ablation import AblationGrid, ablate, format_table
from scribblevs.config import VARIANTS, load_config
from scribblevs.labels import ConfigError
from scribblevs.metrics import pseudo_label_accuracy
from scribblevs.panels import compose_panel, pseudo_label_maps, save_panel
from scribblevs.trainer import (
    CheckpointError,
    DatasetError,
    evaluate,
    load_checkpoint,
    model_from_checkpoint,
    train,
)

log = logging.getLogger("scribblevs")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

REPORT_SCHEMA = {
    "type": "object",
    "required": ["checkpoint", "data", "split", "num_classes", "num_images", "dice_per_class", "hd95_per_class", "mean_dice", "mean_hd95"],
    "properties": {
        "checkpoint": {"type": "string"},
        "data": {"type": "string"},
        "split": {"type": "string"},
        "num_classes": {"type": "integer", "minimum": 2},
        "num_images": {"type": "integer", "minimum": 1},
        "dice_per_class": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "hd95_per_class": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "mean_dice": {"type": "number", "minimum": 0, "maximum": 1},
        "mean_hd95": {"type": "number", "minimum": 0},
    },
}


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


# --- commands ---------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.tau is not None:
        overrides["tau"] = args.tau
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = cfg.replace(**overrides)
    if args.variant is not None:
        cfg = cfg.with_variant(args.variant)
    result = train(cfg)
    print(f"variant {cfg.variant_name}  seed {cfg.seed}  tau {cfg.tau}")
    print(f"best val mean Dice {result.best_val.get('mean_dice', float('nan')):.4f}")
    _print_metrics("test", result.test_metrics)
    print(f"outputs in {result.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    manifest = data_mod.read_manifest(args.data)
    k_ckpt = int(payload["model_config"]["num_classes"])
    k_data = int(manifest["num_classes"])
    if k_ckpt != k_data:
        raise CommandError(f"class-count mismatch: checkpoint K={k_ckpt}, dataset K={k_data}", EXIT_CONFIG)
    samples = data_mod.load_split(args.data, args.split, manifest)
    if not samples:
        raise CommandError(f"split {args.split!r} in {args.data} is empty", EXIT_CONFIG)
    model = model_from_checkpoint(payload, args.network)
    metrics = evaluate(model, samples, k_data)
    report = {
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "split": args.split,
        "network": args.network,
        "num_classes": k_data,
        "num_images": len(samples),
        **metrics,
    }
    out = Path(args.report) if args.report else Path(args.checkpoint).with_name(f"eval_{args.split}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _print_metrics(args.split, metrics)
    print(f"report written to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.classes < 2:
        raise CommandError("--classes must be at least 2", EXIT_CONFIG)
    try:
        spec = data_mod.DatasetSpec(
            num_samples=args.n, height=args.size, width=args.size, num_classes=args.classes, seed=args.seed
        )
    except ConfigError as exc:
        raise CommandError(str(exc), EXIT_CONFIG) from exc
    try:
        root = data_mod.write_synthetic(args.out, spec)
    except OSError as exc:
        raise CommandError(f"cannot write dataset to {args.out}: {exc}", EXIT_RUNTIME) from exc
    counts = spec.split_counts()
    print(f"wrote {spec.num_samples} samples to {root} (train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg = cfg.replace(out_dir=args.out)
    bad = [v for v in args.variants if v not in VARIANTS]
    if bad:
        raise CommandError(f"unknown variant(s): {', '.join(bad)}", EXIT_CONFIG)
    grid = AblationGrid(
        variants=args.variants,
        taus=args.taus or [],
        train_sizes=args.train_sizes or [None],
        seeds=args.seeds or [cfg.seed],
    )
    rows = ablate(cfg, grid, cfg.out_dir)
    print(format_table(rows))
    print(f"table written to {Path(cfg.out_dir) / 'ablation.csv'}")
    return EXIT_OK


def cmd_dump_pseudolabels(args) -> int:
    ckpt = Path(args.checkpoint)
    paths = {}
    if ckpt.is_dir():
        paths = {n: ckpt / f"iter_{n:06d}.pt" for n in args.iters}
    elif args.iters:
        paths = {n: ckpt.with_name(f"iter_{n:06d}.pt") for n in args.iters}
    else:
        paths = {0: ckpt}
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        raise CommandError("missing checkpoint(s): " + ", ".join(missing), EXIT_RUNTIME)
    manifest = data_mod.read_manifest(args.data)
    samples = data_mod.load_split(args.data, args.split, manifest)[: args.max_samples]
    if not samples:
        raise CommandError(f"split {args.split!r} in {args.data} is empty", EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for n, path in sorted(paths.items()):
        payload = load_checkpoint(path)
        tau = args.tau if args.tau is not None else float(payload["config"]["tau"])
        model = model_from_checkpoint(payload, args.network)
        rpd_maps, arg_maps = pseudo_label_maps(model, samples, tau)
        panel = compose_panel(samples, rpd_maps, arg_maps)
        name = f"pseudolabels_iter_{payload['iteration']:06d}.png"
        save_panel(panel, out / name)
        rec = {"iter": int(payload["iteration"]), "checkpoint": str(path), "tau": tau, "panel": name}
        if all(s.dense_mask is not None for s in samples):
            gts = np.stack([s.dense_mask for s in samples])
            rec["rpd"] = pseudo_label_accuracy(rpd_maps, gts)
            rec["argmax"] = pseudo_label_accuracy(arg_maps, gts)
        else:
            rec["rpd"] = {"active_fraction": float((rpd_maps >= 0).mean())}
        summary.append(rec)
        print(f"iter {rec['iter']:6d}  RPD active fraction {rec['rpd']['active_fraction']:.3f}  -> {out / name}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _print_metrics(split: str, m: dict) -> None:
    if not m:
        print(f"{split}: no samples")
        return
    dice = "  ".join(f"c{i + 1} {d:.4f}" for i, d in enumerate(m["dice_per_class"]))
    hd = "  ".join(f"c{i + 1} {d:.2f}" for i, d in enumerate(m["hd95_per_class"]))
    print(f"{split} Dice  {dice}  mean {m['mean_dice']:.4f}")
    print(f"{split} HD95  {hd}  mean {m['mean_hd95']:.2f}")


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scribblevs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--variant", choices=["full", "rpd", "arg", "pce"])
    p.add_argument("--out", help="override out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--network", choices=["student", "teacher"], default="student")
    p.add_argument("--report", help="JSON report path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic nested-ring dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=48)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="run a variant/tau/train-size grid")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", type=lambda s: s.split(","), default=["arg", "rpd", "full"])
    p.add_argument("--taus", type=_float_list)
    p.add_argument("--train-sizes", type=_int_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-pseudolabels", help="render RPD vs argmax pseudo-label panels")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or checkpoints/ directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=_int_list, default=[])
    p.add_argument("--split", default="train")
    p.add_argument("--max-samples", type=int, default=4)
    p.add_argument("--tau", type=float)
    p.add_argument("--network", choices=["student", "teacher"], default="student")
    p.set_defaults(func=cmd_dump_pseudolabels)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (data_mod.LoadError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Grid runner over variants, thresholds, training-set sizes and seeds."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scribblevs.config import TrainingConfig
from scribblevs.trainer import load_splits, train

log = logging.getLogger(__name__)


@dataclass
class AblationGrid:
    variants: list[str] = field(default_factory=lambda: ["full"])
    taus: list[float] = field(default_factory=list)
    train_sizes: list[int | None] = field(default_factory=lambda: [None])
    seeds: list[int] = field(default_factory=lambda: [0])

    def cells(self, base: TrainingConfig):
        taus = self.taus or [base.tau]
        return list(itertools.product(self.variants, taus, self.train_sizes))


def ablate(config: TrainingConfig, grid: AblationGrid, out_dir=None) -> list[dict]:
    """Train and test every grid cell for every seed; write ``runs.csv`` and ``ablation.csv``.

    Returns one aggregated row per (variant, tau, train_size) with mean and
    std of per-class and mean test Dice across seeds.
    """
    out = Path(out_dir or config.out_dir or "ablation")
    out.mkdir(parents=True, exist_ok=True)
    splits, k = load_splits(config.replace(train_size=None))
    runs, rows = [], []
    for variant, tau, size in grid.cells(config):
        per_seed = []
        for seed in grid.seeds:
            tag = f"{variant}_tau{tau:g}_n{size if size is not None else 'all'}_s{seed}"
            cfg = config.with_variant(variant).replace(tau=tau, seed=seed, train_size=size, out_dir=str(out / tag))
            cell_splits = dict(splits, train=splits["train"][:size] if size is not None else splits["train"])
            log.info("ablation cell %s", tag)
            res = train(cfg, cell_splits, k)
            per_seed.append(res.test_metrics)
            runs.append({"variant": variant, "tau": tau, "train_size": size if size is not None else len(splits["train"]),
                         "seed": seed, "mean_dice": res.test_metrics["mean_dice"],
                         "mean_hd95": res.test_metrics["mean_hd95"],
                         **{f"dice_c{c + 1}": d for c, d in enumerate(res.test_metrics["dice_per_class"])}})
        dice = np.array([m["dice_per_class"] for m in per_seed])
        means = np.array([m["mean_dice"] for m in per_seed])
        row = {
            "variant": variant,
            "tau": tau,
            "train_size": size if size is not None else len(splits["train"]),
            "n_seeds": len(per_seed),
            "mean_dice": float(means.mean()),
            "mean_dice_std": float(means.std()),
        }
        for c in range(dice.shape[1]):
            row[f"dice_c{c + 1}"] = float(dice[:, c].mean())
            row[f"dice_c{c + 1}_std"] = float(dice[:, c].std())
        rows.append(row)
    _write_csv(out / "runs.csv", runs)
    _write_csv(out / "ablation.csv", rows)
    return rows


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def format_table(rows: list[dict]) -> str:
    lines = []
    for r in rows:
        classes = sorted(k for k in r if k.startswith("dice_c") and not k.endswith("_std"))
        per = "  ".join(f"{r[c]:.3f}±{r[c + '_std']:.3f}" for c in classes)
        lines.append(f"{r['variant']:8s} tau={r['tau']:<5g} n={r['train_size']:<4d} {per}  mean {r['mean_dice']:.3f}±{r['mean_dice_std']:.3f}")
    return "\n".join(lines)

"""Training loop: scribble loss on the student, pseudo labels from RPD and/or
DCS, warm-up weighted pseudo-label loss, SGD with poly decay, EMA teacher."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from scribblevs import data as data_mod
from scribblevs.config import TrainingConfig
from scribblevs.dcs import select
from scribblevs.labels import IGNORE, ConfigError
from scribblevs.losses import partial_cross_entropy, pl_loss, total_loss
from scribblevs.mean_teacher import TeacherStudentPair
from scribblevs.metrics import evaluate_masks, pseudo_label_accuracy
from scribblevs.model import UNet, UNetConfig, build_model
from scribblevs.rpd import hard_labels, normalize, pseudo_labels_from_probs
from scribblevs.schedule import PolyLRSchedule, WarmupSchedule, lambda_at, lr_at

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "scribblevs-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLoss(FloatingPointError):
    pass


class DatasetError(RuntimeError):
    pass


@dataclass
class IterationRecord:
    iter: int
    l_sup: float
    l_pl: float
    total: float
    # "lambda" is a keyword, so the field is renamed on output.
    lambda_: float
    lr: float
    dcs_winner: str | None = None
    loss_student: float | None = None
    loss_teacher: float | None = None
    pseudo_active_fraction: float | None = None
    pseudo_accuracy: float | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return {"event": "iter", **d}


@dataclass
class TrainState:
    config: TrainingConfig
    pair: TeacherStudentPair
    optimizer: torch.optim.Optimizer
    warmup: WarmupSchedule
    lr_schedule: PolyLRSchedule
    iteration: int = 0


@dataclass
class TrainResult:
    out_dir: Path
    best_checkpoint: Path
    log_path: Path
    test_metrics: dict
    best_val: dict


# --- setup -------------------------------------------------------------------


def model_config(config: TrainingConfig, num_classes: int) -> UNetConfig:
    return UNetConfig(config.in_channels, num_classes, config.base_width, config.depth)


def init_state(config: TrainingConfig, num_classes: int) -> TrainState:
    student = build_model(model_config(config, num_classes), seed=config.seed)
    pair = TeacherStudentPair(student, config.ema_decay)
    optimizer = torch.optim.SGD(
        student.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
    )
    return TrainState(
        config=config,
        pair=pair,
        optimizer=optimizer,
        warmup=WarmupSchedule(config.t_warm),
        lr_schedule=PolyLRSchedule(config.lr, config.max_iters, config.poly_power),
    )


def load_splits(config: TrainingConfig) -> tuple[dict[str, list[data_mod.Sample]], int]:
    """Samples per split plus the class count, from ``data_dir`` or the synthetic spec."""
    if config.data_dir is not None:
        root = Path(config.data_dir)
        try:
            manifest = data_mod.read_manifest(root)
            splits = {s: data_mod.load_split(root, s, manifest) for s in data_mod.SPLITS}
        except data_mod.LoadError as exc:
            raise DatasetError(str(exc)) from exc
        k = int(manifest["num_classes"])
    elif config.synthetic is not None:
        spec = data_mod.DatasetSpec(**_spec_kwargs(config.synthetic))
        splits = data_mod.split_samples(data_mod.generate(spec), spec)
        k = spec.num_classes
    else:
        raise DatasetError("no dataset: set data_dir or synthetic")
    if config.num_classes is not None and config.num_classes != k:
        raise ConfigError(f"num_classes={config.num_classes} but dataset has K={k}")
    if config.train_size is not None:
        splits["train"] = splits["train"][: config.train_size]
    if not splits["train"]:
        raise DatasetError("training split is empty")
    return splits, k


def _spec_kwargs(raw: dict) -> dict:
    kw = dict(raw)
    if "splits" in kw:
        kw["splits"] = tuple(kw["splits"])
    return kw


class BatchSampler:
    """Epoch-wise shuffled batches with dihedral augmentation, driven by one seeded RNG."""

    def __init__(self, samples: list[data_mod.Sample], batch_size: int, seed: int, augment: bool = True):
        self.samples = samples
        self.batch_size = batch_size
        self.augment = augment
        self.rng = np.random.default_rng([int(seed), 1])
        self._order: list[int] = []

    def _next_index(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.samples)))
        return int(self._order.pop())

    def next(self) -> dict:
        picked = []
        for _ in range(self.batch_size):
            s = self.samples[self._next_index()]
            picked.append(data_mod.augment(s, self.rng) if self.augment else s)
        return collate(picked)


def collate(samples: list[data_mod.Sample]) -> dict:
    batch = {
        "image": torch.from_numpy(np.stack([s.image for s in samples])).float(),
        "scribble": torch.from_numpy(np.stack([s.scribble for s in samples])).long(),
        "dense": None,
    }
    if all(s.dense_mask is not None for s in samples):
        batch["dense"] = torch.from_numpy(np.stack([s.dense_mask for s in samples])).long()
    return batch


# --- one step ----------------------------------------------------------------


def make_pseudo_labels(config: TrainingConfig, p_student, p_teacher, scribble):
    """Pseudo-label map under the configured variant; returns ``(labels, outcome or None)``."""
    tau = config.tau if config.use_rpd else None
    if config.use_dcs:
        outcome = select(p_student, p_teacher, scribble, tau, config.dcs_granularity)
        return outcome.pseudo_labels, outcome
    if tau is None:
        return hard_labels(p_student), None
    return pseudo_labels_from_probs(p_student, tau), None


def _winner_str(outcome) -> str | None:
    if outcome is None:
        return None
    if isinstance(outcome.winner, list):
        return ",".join(w.value for w in outcome.winner)
    return outcome.winner.value


def _scalar_loss(v) -> float | None:
    if v is None:
        return None
    return float(np.sum(v)) if isinstance(v, list) else float(v)


def compute_losses(config: TrainingConfig, logits, scribble, pseudo):
    """Scribble and pseudo-label losses with the configured reduction."""
    probs = normalize(logits)
    bsz = logits.shape[0]
    if config.loss_reduction == "sum":
        l_sup = partial_cross_entropy(probs, scribble) / bsz
        l_pl = pl_loss(probs, pseudo) / bsz if pseudo is not None else probs.sum() * 0.0
    else:
        l_sup = partial_cross_entropy(probs, scribble, reduction="mean")
        l_pl = pl_loss(probs, pseudo, reduction="mean") if pseudo is not None else probs.sum() * 0.0
    return l_sup, l_pl


def train_step(state: TrainState, batch: dict, dump_dir: Path | None = None) -> IterationRecord:
    cfg = state.config
    t = state.iteration
    student, teacher = state.pair.student, state.pair.teacher
    lr = lr_at(state.lr_schedule, t)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    # Logged even when the pseudo-label loss is disabled (it then multiplies 0).
    lam = lambda_at(state.warmup, t)

    student.train()
    logits = student(batch["image"])
    if not torch.isfinite(logits).all():
        path = _dump_batch(batch, dump_dir, t)
        raise NonFiniteLoss(f"non-finite logits at iteration {t}; batch dumped to {path}")
    pseudo, outcome = None, None
    if cfg.use_pl:
        p_s = normalize(logits.detach())
        p_t = None
        if cfg.use_dcs:
            teacher.eval()
            with torch.no_grad():
                p_t = normalize(teacher(batch["image"]))
        pseudo, outcome = make_pseudo_labels(cfg, p_s, p_t, batch["scribble"])
    l_sup, l_pl = compute_losses(cfg, logits, batch["scribble"], pseudo)
    loss = total_loss(l_sup, l_pl, lam)
    if not torch.isfinite(loss):
        path = _dump_batch(batch, dump_dir, t)
        raise NonFiniteLoss(f"non-finite loss at iteration {t} (l_sup={float(l_sup)}, l_pl={float(l_pl)}); batch dumped to {path}")

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.pair.ema_update(t)
    state.iteration += 1

    rec = IterationRecord(
        iter=t,
        l_sup=l_sup.item(),
        l_pl=l_pl.item(),
        total=loss.item(),
        lambda_=lam,
        lr=lr,
        dcs_winner=_winner_str(outcome),
        loss_student=_scalar_loss(outcome.loss_student) if outcome else None,
        loss_teacher=_scalar_loss(outcome.loss_teacher) if outcome else None,
    )
    if pseudo is not None:
        active = pseudo != IGNORE
        rec.pseudo_active_fraction = float(active.float().mean())
        if batch.get("dense") is not None:
            rec.pseudo_accuracy = pseudo_label_accuracy(pseudo, batch["dense"])["active_accuracy"]
    return rec


def _dump_batch(batch: dict, dump_dir: Path | None, t: int) -> Path | None:
    if dump_dir is None:
        return None
    dump_dir.mkdir(parents=True, exist_ok=True)
    path = dump_dir / f"nonfinite_iter{t:06d}.npz"
    np.savez(path, **{k: v.numpy() for k, v in batch.items() if v is not None})
    return path


# --- evaluation and checkpoints ------------------------------------------------


@torch.no_grad()
def predict(model: UNet, samples: list[data_mod.Sample], batch_size: int = 8) -> list[np.ndarray]:
    model.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        images = torch.from_numpy(np.stack([s.image for s in samples[i : i + batch_size]])).float()
        out.extend(model(images).argmax(dim=1).numpy())
    return out


def evaluate(model: UNet, samples: list[data_mod.Sample], num_classes: int) -> dict:
    if not samples:
        raise DatasetError("evaluation split is empty")
    if any(s.dense_mask is None for s in samples):
        raise DatasetError("evaluation needs dense masks for every sample")
    preds = predict(model, samples)
    return evaluate_masks(preds, [s.dense_mask for s in samples], num_classes)


@torch.no_grad()
def pseudo_label_snapshot(state: TrainState, samples: list[data_mod.Sample]) -> dict:
    """Pseudo-label coverage and accuracy over ``samples`` under the variant's rule."""
    cfg = state.config
    student, teacher = state.pair.student, state.pair.teacher
    student.eval()
    teacher.eval()
    n_pix = n_active = n_agree = 0
    winners = []
    for i in range(0, len(samples), cfg.batch_size):
        b = collate(samples[i : i + cfg.batch_size])
        p_s = normalize(student(b["image"]))
        p_t = normalize(teacher(b["image"])) if cfg.use_dcs else None
        pseudo, outcome = make_pseudo_labels(cfg, p_s, p_t, b["scribble"])
        if outcome is not None:
            winners.append(_winner_str(outcome))
        active = pseudo != IGNORE
        n_pix += pseudo.numel()
        n_active += int(active.sum())
        if b["dense"] is not None:
            n_agree += int((pseudo[active] == b["dense"][active]).sum())
    student.train()
    return {
        "active_fraction": n_active / n_pix,
        "active_accuracy": n_agree / n_active if n_active else 1.0,
        "winners": winners,
    }


def save_checkpoint(path: Path, state: TrainState, num_classes: int, extra: dict | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "model_config": model_config(state.config, num_classes).to_dict(),
        "student": state.pair.student.state_dict(),
        "teacher": state.pair.teacher.state_dict(),
        "ema_decay": state.pair.ema_decay,
        "optimizer": state.optimizer.state_dict(),
        "iteration": state.iteration,
        **(extra or {}),
    }
    torch.save(payload, path)
    return path


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a scribblevs checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def model_from_checkpoint(payload: dict, which: str = "student") -> UNet:
    model = UNet(UNetConfig(**payload["model_config"]))
    model.load_state_dict(payload[which])
    model.eval()
    return model


# --- full run ------------------------------------------------------------------


class JsonlLog:
    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()


def train(
    config: TrainingConfig,
    splits: dict[str, list[data_mod.Sample]] | None = None,
    num_classes: int | None = None,
    on_step: Callable[[TrainState, IterationRecord], None] | None = None,
) -> TrainResult:
    """Run ``max_iters`` steps, evaluating on val every ``eval_every`` and keeping the best checkpoint.

    Writes ``config.json``, ``metrics.jsonl``, ``checkpoints/`` and
    ``final_metrics.json`` under ``out_dir``. The test split is scored with the
    best-on-validation student.
    """
    if config.out_dir is None:
        raise ConfigError("out_dir: required for training")
    if splits is None:
        splits, num_classes = load_splits(config)
    elif num_classes is None:
        raise ConfigError("num_classes must accompany explicit splits")
    if not splits.get("train"):
        raise DatasetError("training split is empty")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    torch.manual_seed(config.seed)
    state = init_state(config, num_classes)
    sampler = BatchSampler(splits["train"], config.batch_size, config.seed, config.augment)
    val = splits.get("val") or []
    logf = JsonlLog(out / "metrics.jsonl")
    logf.write({"event": "config", "variant": config.variant_name, **config.to_dict()})
    best_val, best_path = None, ckpt_dir / "best.pt"
    save_iters = set(config.save_iters)
    snapshot_iters = set(config.pl_snapshot_iters)
    try:
        for t in range(config.max_iters):
            rec = train_step(state, sampler.next(), dump_dir=out)
            logf.write(rec.to_json())
            if on_step is not None:
                on_step(state, rec)
            done = t + 1
            if done in snapshot_iters and config.use_pl:
                snap = pseudo_label_snapshot(state, splits["train"])
                logf.write({"event": "pl_snapshot", "iter": done, **snap})
            if done in save_iters:
                save_checkpoint(ckpt_dir / f"iter_{done:06d}.pt", state, num_classes)
            if done % config.eval_every == 0 or done == config.max_iters:
                metrics = evaluate(state.pair.student, val, num_classes) if val else None
                logf.write({"event": "eval", "split": "val", "iter": done, **(metrics or {})})
                if best_val is None or (metrics and metrics["mean_dice"] > best_val["mean_dice"]):
                    best_val = metrics or {"mean_dice": float("nan")}
                    save_checkpoint(best_path, state, num_classes, {"val_metrics": best_val})
                log.info("iter %d  l_sup %.4f  l_pl %.4f  val %s", done, rec.l_sup, rec.l_pl,
                         None if metrics is None else round(metrics["mean_dice"], 4))
        save_checkpoint(ckpt_dir / "last.pt", state, num_classes)
        best = model_from_checkpoint(load_checkpoint(best_path))
        test = evaluate(best, splits["test"], num_classes) if splits.get("test") else {}
        logf.write({"event": "final", "split": "test", **test})
    finally:
        logf.close()
    (out / "final_metrics.json").write_text(json.dumps({"test": test, "best_val": best_val}, indent=2, sort_keys=True) + "\n")
    return TrainResult(out, best_path, out / "metrics.jsonl", test, best_val)


def read_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def is_finite_record(rec: IterationRecord) -> bool:
    vals = [rec.l_sup, rec.l_pl, rec.total, rec.lambda_, rec.lr]
    return all(math.isfinite(v) for v in vals)

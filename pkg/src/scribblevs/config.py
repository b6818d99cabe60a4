"""Training configuration record, presets and JSON loading."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from scribblevs.labels import ConfigError

VARIANTS = {
    # name: (use_pl, use_rpd, use_argmax, use_dcs)
    "pce": dict(use_pl=False, use_rpd=True, use_argmax=False, use_dcs=False),
    "arg": dict(use_pl=True, use_rpd=False, use_argmax=True, use_dcs=False),
    "rpd": dict(use_pl=True, use_rpd=True, use_argmax=False, use_dcs=False),
    "arg_dcs": dict(use_pl=True, use_rpd=False, use_argmax=True, use_dcs=True),
    "full": dict(use_pl=True, use_rpd=True, use_argmax=False, use_dcs=True),
}

PRESETS: dict[str, dict[str, Any]] = {
    "paper": dict(batch_size=12, max_iters=60000, t_warm=12000, eval_every=1000, base_width=64, depth=5),
    "desk": dict(
        batch_size=4,
        max_iters=2000,
        t_warm=400,
        eval_every=200,
        base_width=16,
        depth=4,
        # harder imaging than the generator defaults (bias field, blur, jitter, short strokes)
        synthetic=dict(
            num_samples=48, height=64, width=64, num_classes=4,
            bias=0.4, noise=0.12, blur=1.2, jitter=0.08, margin=2, max_stroke=16,
        ),
        pl_snapshot_iters=[100, 2000],
    ),
}


@dataclass
class TrainingConfig:
    tau: float = 0.5
    batch_size: int = 12
    max_iters: int = 60000
    t_warm: int = 12000
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    ema_decay: float = 0.99
    seed: int = 0
    use_pl: bool = True
    use_rpd: bool = True
    use_argmax: bool = False
    use_dcs: bool = True
    dcs_granularity: str = "batch"
    loss_reduction: str = "mean"
    augment: bool = True
    base_width: int = 16
    depth: int = 4
    in_channels: int = 1
    num_classes: int | None = None
    train_size: int | None = None
    data_dir: str | None = None
    synthetic: dict | None = None
    out_dir: str | None = None
    eval_every: int = 1000
    save_iters: list[int] = field(default_factory=list)
    pl_snapshot_iters: list[int] = field(default_factory=list)
    variant: str | None = None
    preset: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if not 0.0 < self.tau < 1.0:
            errors.append(f"tau: must lie in (0, 1), got {self.tau}")
        if self.batch_size < 1:
            errors.append("batch_size: must be >= 1")
        if self.max_iters < 1:
            errors.append("max_iters: must be >= 1")
        if not 1 <= self.t_warm <= self.max_iters:
            errors.append(f"t_warm: must satisfy 1 <= t_warm <= max_iters, got {self.t_warm}")
        if self.lr <= 0:
            errors.append("lr: must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            errors.append("ema_decay: must lie in [0, 1)")
        if self.use_rpd == self.use_argmax:
            errors.append("use_rpd/use_argmax: exactly one must be true")
        if self.dcs_granularity not in ("batch", "image"):
            errors.append("dcs_granularity: must be 'batch' or 'image'")
        if self.loss_reduction not in ("sum", "mean"):
            errors.append("loss_reduction: must be 'sum' or 'mean'")
        if self.eval_every < 1:
            errors.append("eval_every: must be >= 1")
        if self.variant is not None and self.variant not in VARIANTS:
            errors.append(f"variant: must be one of {sorted(VARIANTS)}, got {self.variant!r}")
        if self.num_classes is not None and self.num_classes < 2:
            errors.append("num_classes: must be >= 2")
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def variant_name(self) -> str:
        if not self.use_pl:
            return "pce"
        base = "rpd" if self.use_rpd else "arg"
        if self.use_dcs:
            return "full" if base == "rpd" else "arg_dcs"
        return base

    def with_variant(self, name: str) -> "TrainingConfig":
        if name not in VARIANTS:
            raise ConfigError(f"variant: must be one of {sorted(VARIANTS)}, got {name!r}")
        return dataclasses.replace(self, variant=name, **VARIANTS[name])

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged: dict[str, Any] = {}
        preset = raw.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"preset: must be one of {sorted(PRESETS)}, got {preset!r}")
            merged.update(PRESETS[preset])
        variant = raw.get("variant")
        if variant is not None:
            if variant not in VARIANTS:
                raise ConfigError(f"variant: must be one of {sorted(VARIANTS)}, got {variant!r}")
            merged.update(VARIANTS[variant])
        merged.update(raw)
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def desk(cls, **overrides) -> "TrainingConfig":
        return cls.from_dict({"preset": "desk", **overrides})


REQUIRED_FILE_KEYS = ("out_dir",)


def load_config(path) -> TrainingConfig:
    """Read a JSON config file. ``out_dir`` and one of ``data_dir``/``synthetic`` are required."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    missing = [k for k in REQUIRED_FILE_KEYS if k not in raw]
    cfg = TrainingConfig.from_dict(raw)
    if cfg.data_dir is None and cfg.synthetic is None:
        missing.append("data_dir")
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    return cfg

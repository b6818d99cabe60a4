"""Synthetic nested-ring datasets, simulated scribbles and PNG dataset I/O.

On-disk layout::

    root/images/NNNN.png      16-bit grayscale, min-max scaled
    root/masks/NNNN.png       8-bit class indices
    root/scribbles/NNNN.png   8-bit palette PNG, 255 = unannotated
    root/manifest.json        {"splits": {...}, "num_classes": K, "ignore_value": 255, ...}
"""

from __future__ import annotations

import json
import os
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.morphology import skeletonize

from scribblevs.labels import FILE_IGNORE, IGNORE, ConfigError

MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


class LoadError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # float32 (1, H, W) in [0, 1]
    dense_mask: np.ndarray | None  # int64 (H, W)
    scribble: np.ndarray  # int64 (H, W), IGNORE where unannotated
    name: str = ""


@dataclass(frozen=True)
class DatasetSpec:
    num_samples: int = 48
    height: int = 64
    width: int = 64
    num_classes: int = 4
    noise: float = 0.08
    blur: float = 0.8
    bias: float = 0.0
    clutter: float = 0.35
    jitter: float = 0.04
    margin: int = 1
    splits: tuple[float, float, float] = (32 / 48, 8 / 48, 8 / 48)
    seed: int = 0
    scribble_style: str = "skeleton"
    max_stroke: int = 24

    def __post_init__(self):
        if self.num_classes < 2 or self.num_classes > 4:
            raise ConfigError(f"num_classes must be in 2..4, got {self.num_classes}")
        if self.height < 32 or self.width < 32:
            raise ConfigError(f"image must be at least 32x32, got {self.height}x{self.width}")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be positive")
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9 or min(self.splits) < 0:
            raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {self.splits}")
        if self.noise < 0 or self.blur < 0:
            raise ConfigError("noise and blur must be non-negative")

    def split_counts(self) -> dict[str, int]:
        n_train = int(round(self.splits[0] * self.num_samples))
        n_val = int(round(self.splits[1] * self.num_samples))
        n_val = min(n_val, self.num_samples - n_train)
        return {"train": n_train, "val": n_val, "test": self.num_samples - n_train - n_val}


@dataclass
class ScribbleResult:
    labels: np.ndarray
    coverage: dict[int, float] = field(default_factory=dict)
    omitted: list[int] = field(default_factory=list)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _ellipse(shape, cy, cx, ry, rx, angle) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v <= 1.0


def nested_ring_mask(shape: tuple[int, int], num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Cavity (2) inside a ring (1), with a neighbouring crescent (3) when K=4.

    For K=2 only the ring and cavity merge into one foreground class.
    """
    h, w = shape
    scale = min(h, w) / 64.0
    mask = np.zeros(shape, dtype=np.int64)
    cy = h / 2 + rng.uniform(-4, 4) * scale
    cx = w / 2 + rng.uniform(-2, 6) * scale
    r_out = rng.uniform(12, 16) * scale
    thick = rng.uniform(3.5, 5.5) * scale
    ang = rng.uniform(0, np.pi)
    ecc = rng.uniform(0.8, 1.0)
    outer = _ellipse(shape, cy, cx, r_out * ecc, r_out, ang)
    inner = _ellipse(shape, cy, cx, (r_out - thick) * ecc, r_out - thick, ang)
    if num_classes >= 4:
        # Crescent hugging the ring on the left: a larger ellipse minus the dilated ring.
        off = r_out + rng.uniform(2, 5) * scale
        rv = _ellipse(shape, cy + rng.uniform(-3, 3) * scale, cx - off, r_out * rng.uniform(0.8, 1.05),
                      r_out * rng.uniform(0.55, 0.75), rng.uniform(-0.3, 0.3))
        rv &= ~ndimage.binary_dilation(outer, iterations=1)
        mask[rv] = 3
    if num_classes == 2:
        mask[outer] = 1
    else:
        mask[outer] = 1
        mask[inner] = 2
    return mask


def _smooth_field(shape, rng: np.random.Generator, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    return f / (np.abs(f).max() + 1e-12)


def render_image(
    mask: np.ndarray,
    num_classes: int,
    rng: np.random.Generator,
    noise: float,
    blur: float,
    bias: float = 0.0,
    clutter: float = 0.35,
    jitter: float = 0.04,
) -> np.ndarray:
    """Piecewise-constant class intensities degraded by background clutter, a
    multiplicative bias field, blur and Gaussian noise; min-max scaled and
    quantized to 16 bits. With every degradation at 0 the image is a function
    of the mask alone."""
    base = {0: 0.15, 1: 0.45, 2: 0.85, 3: 0.75}
    if num_classes == 2:
        base = {0: 0.15, 1: 0.7}
    levels = np.array([base[k] + (rng.uniform(-jitter, jitter) if jitter else 0.0) for k in range(num_classes)])
    img = levels[mask]
    if clutter > 0:
        img = img + clutter * np.clip(_smooth_field(mask.shape, rng, 4.0), 0, None) * (mask == 0)
    if bias > 0:
        img = img * (1.0 + bias * _smooth_field(mask.shape, rng, 12.0))
    if blur > 0:
        img = ndimage.gaussian_filter(img, blur)
    if noise > 0:
        img = img + rng.normal(0.0, noise, mask.shape)
    return _quantize(img)[None].astype(np.float32)


def _quantize(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros_like(img, dtype=np.float32)
    q = np.round((img - lo) / (hi - lo) * 65535.0)
    return (q / 65535.0).astype(np.float32)


def _stroke_from(candidates: np.ndarray, rng: np.random.Generator, max_len: int) -> np.ndarray:
    """Connected run of at most ``max_len`` candidate pixels grown by BFS from a random seed."""
    coords = np.argwhere(candidates)
    start = tuple(coords[rng.integers(len(coords))])
    stroke = np.zeros_like(candidates)
    stroke[start] = True
    queue = deque([start])
    count = 1
    h, w = candidates.shape
    while queue and count < max_len:
        y, x = queue.popleft()
        nbrs = [(y + dy, x + dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
        order = rng.permutation(len(nbrs))
        for j in order:
            ny, nx = nbrs[j]
            if 0 <= ny < h and 0 <= nx < w and candidates[ny, nx] and not stroke[ny, nx]:
                stroke[ny, nx] = True
                queue.append((ny, nx))
                count += 1
                if count >= max_len:
                    break
    return stroke


def _walk_from(region: np.ndarray, rng: np.random.Generator, max_len: int, stroke: np.ndarray | None = None) -> np.ndarray:
    """Random walk with momentum confined to ``region``, optionally extending ``stroke``."""
    if stroke is None or not stroke.any():
        coords = np.argwhere(region)
        stroke = np.zeros_like(region)
    else:
        coords = np.argwhere(stroke)
        stroke = stroke.copy()
    y, x = coords[rng.integers(len(coords))]
    stroke[y, x] = True
    dirs = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
    d = dirs[rng.integers(8)]
    h, w = region.shape
    for _ in range(4 * max_len):
        if stroke.sum() >= max_len:
            break
        if rng.random() < 0.3:
            d = dirs[rng.integers(8)]
        ny, nx = y + d[0], x + d[1]
        if 0 <= ny < h and 0 <= nx < w and region[ny, nx]:
            y, x = ny, nx
            stroke[y, x] = True
        else:
            d = dirs[rng.integers(8)]
    return stroke


def scribble_from_mask(
    dense_mask: np.ndarray,
    style: str = "skeleton",
    seed: int | np.random.Generator = 0,
    margin: int = 1,
    max_len: int = 24,
    num_classes: int | None = None,
    min_len: int = 8,
    max_coverage: float = 0.15,
) -> ScribbleResult:
    """Simulate one connected stroke per class strictly inside its region.

    ``skeleton`` picks a connected piece of the eroded region's skeleton;
    ``erosion-walk`` random-walks inside the eroded region. Classes whose
    eroded region is empty are omitted and listed in ``omitted``. Stroke
    length is capped at ``max_coverage`` of the class area.
    """
    if style not in ("skeleton", "erosion-walk"):
        raise ConfigError(f"unknown scribble style {style!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dense_mask = np.asarray(dense_mask)
    classes = range(num_classes) if num_classes is not None else np.unique(dense_mask)
    out = np.full(dense_mask.shape, IGNORE, dtype=np.int64)
    result = ScribbleResult(out)
    structure = ndimage.generate_binary_structure(2, 1)
    for k in classes:
        region = dense_mask == k
        area = int(region.sum())
        if area == 0:
            continue
        inner = ndimage.binary_erosion(region, structure=structure, iterations=margin, border_value=0) if margin else region
        if not inner.any():
            result.omitted.append(int(k))
            warnings.warn(f"class {k} region too small to scribble (area {area})", stacklevel=2)
            continue
        cap = max(1, min(max_len, int(max_coverage * area)))
        if style == "skeleton":
            stroke = _stroke_from(skeletonize(inner), rng, cap)
            if stroke.sum() < min(min_len, cap):
                # Skeletons of compact blobs collapse to a few pixels.
                stroke = _walk_from(inner, rng, min(min_len, cap), stroke)
        else:
            stroke = _walk_from(inner, rng, cap)
        out[stroke] = k
        result.coverage[int(k)] = float(stroke.sum()) / area
    return result


def make_sample(spec: DatasetSpec, index: int) -> Sample:
    rng = sample_rng(spec.seed, index)
    mask = nested_ring_mask((spec.height, spec.width), spec.num_classes, rng)
    image = render_image(mask, spec.num_classes, rng, spec.noise, spec.blur, spec.bias, spec.clutter, spec.jitter)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scr = scribble_from_mask(
            mask, spec.scribble_style, rng, margin=spec.margin, max_len=spec.max_stroke, num_classes=spec.num_classes
        )
    return Sample(image=image, dense_mask=mask, scribble=scr.labels, name=f"{index:04d}")


def generate(spec: DatasetSpec) -> list[Sample]:
    """Deterministic list of samples; sample ``i`` depends only on ``(seed, i)``."""
    return [make_sample(spec, i) for i in range(spec.num_samples)]


def split_samples(samples: list[Sample], spec: DatasetSpec) -> dict[str, list[Sample]]:
    counts = spec.split_counts()
    out, start = {}, 0
    for name in SPLITS:
        out[name] = samples[start : start + counts[name]]
        start += counts[name]
    return out


# --- augmentation -----------------------------------------------------------


def dihedral(sample: Sample, k: int, flip: bool) -> Sample:
    """Rotate by ``k`` quarter turns then optionally flip left-right, on every array."""

    def tf(a, axes):
        if a is None:
            return None
        a = np.rot90(a, k, axes=axes)
        if flip:
            a = np.flip(a, axis=axes[1])
        return np.ascontiguousarray(a)

    return replace(
        sample,
        image=tf(sample.image, (1, 2)),
        dense_mask=tf(sample.dense_mask, (0, 1)),
        scribble=tf(sample.scribble, (0, 1)),
    )


def augment(sample: Sample, seed: int | np.random.Generator) -> Sample:
    """Random element of the dihedral group (90 degree rotations and flips)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    return dihedral(sample, k, flip)


# --- file I/O -----------------------------------------------------------------


def _palette() -> list[int]:
    pal = [0] * 768
    colors = [(0, 0, 0), (220, 60, 60), (60, 200, 80), (70, 110, 230), (230, 200, 40), (200, 80, 220)]
    for i, c in enumerate(colors):
        pal[3 * i : 3 * i + 3] = c
    pal[3 * FILE_IGNORE : 3 * FILE_IGNORE + 3] = (111, 185, 211)
    return pal


PALETTE = _palette()


def save_label_png(labels: np.ndarray, path: Path, ignore_index: int = IGNORE) -> None:
    arr = np.where(labels == ignore_index, FILE_IGNORE, labels).astype(np.uint8)
    img = Image.fromarray(arr, mode="P")
    img.putpalette(PALETTE)
    img.save(path)


def save_sample(sample: Sample, root: Path, name: str) -> None:
    root = Path(root)
    img16 = np.round(sample.image[0].astype(np.float64) * 65535.0).astype(np.uint16)
    Image.fromarray(img16).save(root / "images" / f"{name}.png")
    save_label_png(sample.scribble, root / "scribbles" / f"{name}.png")
    if sample.dense_mask is not None:
        Image.fromarray(sample.dense_mask.astype(np.uint8), mode="L").save(root / "masks" / f"{name}.png")


def _read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing file: {path}")
    with Image.open(path) as im:
        if im.mode == "P":
            return np.array(im)  # palette indices, not colours
        return np.array(im)


def load_sample(image_path, scribble_path, dense_path=None, num_classes: int | None = None) -> Sample:
    """Read one PNG triple; the image is min-max scaled to [0, 1], 255 scribble pixels become IGNORE."""
    raw = _read_png(image_path).astype(np.float64)
    if raw.ndim == 3:
        raw = raw[..., 0]
    lo, hi = raw.min(), raw.max()
    image = ((raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)).astype(np.float32)[None]
    scr = _read_png(scribble_path).astype(np.int64)
    scr[scr == FILE_IGNORE] = IGNORE
    dense = _read_png(dense_path).astype(np.int64) if dense_path is not None else None
    for name, arr in (("scribble", scr), ("mask", dense)):
        if arr is None:
            continue
        if arr.shape != image.shape[1:]:
            raise LoadError(f"{name} shape {arr.shape} differs from image shape {image.shape[1:]}")
        valid = arr[arr != IGNORE]
        if num_classes is not None and valid.size and valid.max() >= num_classes:
            raise LoadError(f"{name} {Path(image_path).stem} has class index {valid.max()} >= K={num_classes}")
    return Sample(image=image, dense_mask=dense, scribble=scr, name=Path(image_path).stem)


def write_dataset(root, samples: list[Sample], splits: dict[str, list[str]], num_classes: int, extra: dict | None = None) -> Path:
    root = Path(root)
    for sub in ("images", "scribbles", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_sample(s, root, s.name)
    manifest = {"splits": splits, "num_classes": num_classes, "ignore_value": FILE_IGNORE}
    if extra:
        manifest.update(extra)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def write_synthetic(root, spec: DatasetSpec) -> Path:
    samples = generate(spec)
    parts = split_samples(samples, spec)
    splits = {k: [s.name for s in v] for k, v in parts.items()}
    spec_dict = asdict(spec)
    spec_dict["splits"] = list(spec.splits)
    return write_dataset(root, samples, splits, spec.num_classes, {"generator": spec_dict})


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise LoadError(f"no {MANIFEST} under {root}")
    manifest = json.loads(path.read_text())
    for key in ("splits", "num_classes"):
        if key not in manifest:
            raise LoadError(f"{MANIFEST} missing key {key!r}")
    if manifest.get("ignore_value", FILE_IGNORE) != FILE_IGNORE:
        raise LoadError(f"unsupported ignore_value {manifest['ignore_value']}")
    return manifest


def num_workers() -> int:
    return max(1, int(os.environ.get("SCRIBBLEVS_NUM_WORKERS", "1")))


def load_split(root, split: str, manifest: dict | None = None) -> list[Sample]:
    root = Path(root)
    manifest = manifest or read_manifest(root)
    names = manifest["splits"].get(split, [])
    k = int(manifest["num_classes"])

    def one(name):
        dense = root / "masks" / f"{name}.png"
        return load_sample(root / "images" / f"{name}.png", root / "scribbles" / f"{name}.png",
                           dense if dense.is_file() else None, k)

    workers = num_workers()
    if workers == 1:
        return [one(n) for n in names]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, names))

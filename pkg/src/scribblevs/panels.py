"""Indexed-colour panels comparing RPD pseudo labels with plain argmax labels."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from scribblevs.data import FILE_IGNORE, PALETTE, Sample
from scribblevs.labels import IGNORE
from scribblevs.rpd import hard_labels, normalize, pseudo_labels_from_probs

GRAY_START, GRAY_LEVELS = 32, 192
SEPARATOR = 254
INACTIVE_INDEX = FILE_IGNORE


def panel_palette() -> list[int]:
    pal = list(PALETTE)
    for i in range(GRAY_LEVELS):
        v = int(round(255 * i / (GRAY_LEVELS - 1)))
        pal[3 * (GRAY_START + i) : 3 * (GRAY_START + i) + 3] = (v, v, v)
    pal[3 * SEPARATOR : 3 * SEPARATOR + 3] = (255, 255, 255)
    return pal


def _gray(image: np.ndarray) -> np.ndarray:
    return (GRAY_START + np.round(np.clip(image, 0, 1) * (GRAY_LEVELS - 1))).astype(np.uint8)


def _labels(lab: np.ndarray) -> np.ndarray:
    return np.where(lab == IGNORE, INACTIVE_INDEX, lab).astype(np.uint8)


@torch.no_grad()
def pseudo_label_maps(model, samples: list[Sample], tau: float) -> tuple[np.ndarray, np.ndarray]:
    """RPD and argmax label maps ``(N, H, W)`` for the model's predictions."""
    model.eval()
    images = torch.from_numpy(np.stack([s.image for s in samples])).float()
    probs = normalize(model(images))
    return pseudo_labels_from_probs(probs, tau).numpy(), hard_labels(probs).numpy()


def compose_panel(samples: list[Sample], rpd_maps: np.ndarray, arg_maps: np.ndarray, gap: int = 2) -> dict:
    """One row per sample: image | RPD | argmax | ground truth (if present).

    Returns the composed index array plus the column slices so callers can
    inspect each panel.
    """
    h, w = rpd_maps.shape[1:]
    cols = ["image", "rpd", "argmax"] + (["gt"] if all(s.dense_mask is not None for s in samples) else [])
    width = len(cols) * w + (len(cols) - 1) * gap
    height = len(samples) * h + (len(samples) - 1) * gap
    canvas = np.full((height, width), SEPARATOR, dtype=np.uint8)
    for i, s in enumerate(samples):
        y = i * (h + gap)
        tiles = {"image": _gray(s.image[0]), "rpd": _labels(rpd_maps[i]), "argmax": _labels(arg_maps[i])}
        if "gt" in cols:
            tiles["gt"] = _labels(s.dense_mask)
        for j, c in enumerate(cols):
            x = j * (w + gap)
            canvas[y : y + h, x : x + w] = tiles[c]
    return {"canvas": canvas, "columns": cols, "tile": (h, w), "gap": gap}


def column(panel: dict, name: str) -> np.ndarray:
    """Stack of the tiles in one column, without separators."""
    h, w = panel["tile"]
    gap = panel["gap"]
    j = panel["columns"].index(name)
    x = j * (w + gap)
    rows = (panel["canvas"].shape[0] + gap) // (h + gap)
    return np.stack([panel["canvas"][i * (h + gap) : i * (h + gap) + h, x : x + w] for i in range(rows)])


def save_panel(panel: dict, path) -> None:
    img = Image.fromarray(panel["canvas"], mode="P")
    img.putpalette(panel_palette())
    img.save(path)

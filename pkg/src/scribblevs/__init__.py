"""Scribble-supervised segmentation with regional pseudo labels and
dynamic competitive selection over a mean-teacher pair."""

from scribblevs.labels import IGNORE, FILE_IGNORE

__version__ = "0.1.0"

__all__ = ["IGNORE", "FILE_IGNORE", "__version__"]

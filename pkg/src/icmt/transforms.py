"""Pixel transforms for the same-caption baseline relation.

Magnitude ranges:

=========== ==================== =========
kind        magnitude            identity
=========== ==================== =========
blur        box kernel 3, 5, 7   (none)
brightness  additive [-64, 64]   0
contrast    factor [0.5, 1.5]    1.0
shear       factor [-0.2, 0.2]   0.0
=========== ==================== =========
"""
from __future__ import annotations

import numpy as np

from .exceptions import BadMagnitude

DEFAULT_MAGNITUDES = {"blur": 3, "brightness": 32, "contrast": 1.3, "shear": 0.1}
KINDS = tuple(DEFAULT_MAGNITUDES)


def _check(kind, magnitude):
    if kind == "blur":
        if magnitude not in (3, 5, 7):
            raise BadMagnitude(f"blur kernel must be 3, 5 or 7, got {magnitude}")
    elif kind == "brightness":
        if not -64 <= magnitude <= 64:
            raise BadMagnitude(f"brightness offset must lie in [-64, 64], got {magnitude}")
    elif kind == "contrast":
        if not 0.5 <= magnitude <= 1.5:
            raise BadMagnitude(f"contrast factor must lie in [0.5, 1.5], got {magnitude}")
    elif kind == "shear":
        if not -0.2 <= magnitude <= 0.2:
            raise BadMagnitude(f"shear factor must lie in [-0.2, 0.2], got {magnitude}")
    else:
        raise BadMagnitude(f"unknown transform kind {kind!r}")


def box_blur(img: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    padded = np.pad(img.astype(np.int64), ((r, r), (r, r), (0, 0)), mode="edge")
    # summed-area table, one extra zero row/column in front
    sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1, img.shape[2]), dtype=np.int64)
    sat[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = img.shape[:2]
    total = sat[k:k + h, k:k + w] - sat[:h, k:k + w] - sat[k:k + h, :w] + sat[:h, :w]
    return ((2 * total + k * k) // (2 * k * k)).astype(np.uint8)


def shear(img: np.ndarray, factor: float) -> np.ndarray:
    """Horizontal shear about the image's vertical centre, edge-replicated."""
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    src_x = np.rint(xs - factor * (ys - (h - 1) / 2.0)).astype(np.int64)
    src_x = np.clip(src_x, 0, w - 1)
    return img[ys, src_x]


def baseline_transform(img: np.ndarray, kind: str, magnitude) -> np.ndarray:
    """Apply one deterministic transform to an ``(h, w, 3)`` uint8 image."""
    _check(kind, magnitude)
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3:
        raise ValueError("expected an (h, w, c) uint8 image")
    if kind == "blur":
        return box_blur(img, int(magnitude))
    if kind == "brightness":
        return np.clip(img.astype(np.int16) + int(round(magnitude)), 0, 255).astype(np.uint8)
    if kind == "contrast":
        if magnitude == 1.0:
            return img.copy()
        return np.clip(np.rint(img.astype(np.float64) * magnitude), 0, 255).astype(np.uint8)
    if magnitude == 0:
        return img.copy()
    return shear(img, float(magnitude))

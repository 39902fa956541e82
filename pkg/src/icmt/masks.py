"""Rasterisation of COCO segmentations (polygons and RLE) to boolean masks."""
from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np

Segmentation = Union[list, dict]


def polygon_to_mask(polygons: Sequence[Sequence[float]], height: int, width: int) -> np.ndarray:
    """Rasterise COCO polygon rings with even-odd fill sampled at pixel centres.

    Each ring is filled independently and the rings are unioned, which is how
    COCO encodes multi-part objects.
    """
    mask = np.zeros((height, width), dtype=bool)
    for ring in polygons:
        if len(ring) < 6:
            continue
        pts = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
        mask |= _fill_ring(pts, height, width)
    return mask


def _fill_ring(pts: np.ndarray, height: int, width: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    row_lo = max(0, int(math.floor(pts[:, 1].min() - 0.5)))
    row_hi = min(height, int(math.ceil(pts[:, 1].max() + 0.5)))
    for row in range(row_lo, row_hi):
        yc = row + 0.5
        # half-open rule on y avoids double-counting shared vertices
        crosses = ((y0 <= yc) & (yc < y1)) | ((y1 <= yc) & (yc < y0))
        if not crosses.any():
            continue
        xa, ya, xb, yb = x0[crosses], y0[crosses], x1[crosses], y1[crosses]
        xs = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        for left, right in zip(xs[0::2], xs[1::2]):
            # pixel centres c with left <= c < right
            c0 = max(0, int(math.ceil(left - 0.5)))
            c1 = min(width, int(math.ceil(right - 0.5)))
            if c1 > c0:
                out[row, c0:c1] ^= True
    return out


def rle_counts_from_string(s: str) -> list[int]:
    """Decode COCO's compressed RLE string into run lengths."""
    counts: list[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def rle_counts_to_string(counts: Sequence[int]) -> str:
    """Encode run lengths as COCO's compressed RLE string."""
    chars = []
    for i, cnt in enumerate(counts):
        x = int(cnt)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            chars.append(chr(c + 48))
    return "".join(chars)


def rle_decode(rle: dict) -> np.ndarray:
    """Decode a COCO RLE dict (``counts`` list or string, ``size`` [h, w])."""
    height, width = (int(v) for v in rle["size"])
    counts = rle["counts"]
    if isinstance(counts, (bytes, bytearray)):
        counts = counts.decode("ascii")
    if isinstance(counts, str):
        counts = rle_counts_from_string(counts)
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != height * width:
        raise ValueError(f"RLE covers {pos} cells, expected {height * width}")
    # COCO stores masks column-major
    return flat.reshape((width, height)).T.copy()


def rle_encode(mask: np.ndarray, compress: bool = False) -> dict:
    """Encode a boolean mask as a COCO RLE dict."""
    flat = np.asarray(mask, dtype=bool).T.reshape(-1)
    changes = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    counts = rle_counts_to_string(runs) if compress else runs
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def segmentation_to_mask(segmentation: Segmentation, height: int, width: int) -> np.ndarray:
    """Mask for any COCO segmentation encoding at image size ``(height, width)``."""
    if isinstance(segmentation, dict):
        mask = rle_decode(segmentation)
        if mask.shape != (height, width):
            raise ValueError(f"RLE size {mask.shape} != image size {(height, width)}")
        return mask
    return polygon_to_mask(segmentation, height, width)


def mask_extent(mask: np.ndarray):
    """Tight ``(x, y, w, h)`` around the true cells, or ``None`` if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))

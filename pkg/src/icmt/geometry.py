"""Shared geometric and identity types.

Rectangles use integer pixel coordinates with ``(x, y)`` at the top-left
corner. Overlap ratios are computed exactly as rationals; the float helpers
only round at the very end.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

Number = Union[int, float, Fraction]


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise TypeError(f"Rect.{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"Rect needs positive extents, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def area(self) -> int:
        return self.w * self.h

    def intersection_area(self, other: "Rect") -> int:
        iw = min(self.x2, other.x2) - max(self.x, other.x)
        ih = min(self.y2, other.y2) - max(self.y, other.y)
        if iw <= 0 or ih <= 0:
            return 0
        return iw * ih

    def contains(self, other: "Rect") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x2 <= self.x2 and other.y2 <= self.y2)

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def to_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, xywh: Sequence[int]) -> "Rect":
        x, y, w, h = xywh
        return cls(int(x), int(y), int(w), int(h))


@dataclass(frozen=True)
class ObjectClass:
    name: str
    super_category: Optional[str] = None

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise ValueError(f"class name must be a single non-empty token: {self.name!r}")
        object.__setattr__(self, "name", self.name.lower())
        if self.super_category is not None:
            object.__setattr__(self, "super_category", self.super_category.lower())


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    """A segmented object crop.

    ``pixels`` is an ``(h, w, 4)`` uint8 RGBA raster and ``mask`` an
    ``(h, w)`` boolean raster of the same size.
    """

    id: str
    object_class: ObjectClass
    pixels: np.ndarray
    mask: np.ndarray
    bbox_in_source: Rect
    area: int = field(default=-1)

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 4:
            raise ValueError("pixels must be an (h, w, 4) RGBA array")
        if self.mask.shape != self.pixels.shape[:2]:
            raise ValueError(
                f"mask shape {self.mask.shape} does not match pixels {self.pixels.shape[:2]}")
        mask = self.mask.astype(bool, copy=False)
        object.__setattr__(self, "mask", mask)
        counted = int(mask.sum())
        if self.area not in (-1, counted):
            raise ValueError(f"area {self.area} disagrees with mask cell count {counted}")
        object.__setattr__(self, "area", counted)

    @property
    def h(self) -> int:
        return int(self.mask.shape[0])

    @property
    def w(self) -> int:
        return int(self.mask.shape[1])


@dataclass(frozen=True)
class BackgroundObject:
    object_class: ObjectClass
    bbox: Rect
    area: int


@dataclass(frozen=True, eq=False)
class BackgroundImage:
    """An image plus its annotated object set.

    ``pixels`` may be ``None`` for geometry-only work (placement search);
    compositing needs the ``(height, width, 3)`` uint8 raster.
    """

    id: str
    width: int
    height: int
    objects: tuple[BackgroundObject, ...]
    pixels: Optional[np.ndarray] = None
    path: Optional[str] = None
    provenance: str = "ground_truth"

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("background dimensions must be positive")
        if self.pixels is not None and self.pixels.shape[:2] != (self.height, self.width):
            raise ValueError(
                f"pixels shape {self.pixels.shape[:2]} != ({self.height}, {self.width})")
        frame = self.frame
        for obj in self.objects:
            if not frame.contains(obj.bbox):
                raise ValueError(f"object bbox {obj.bbox} lies outside the {self.width}x{self.height} image")

    @property
    def frame(self) -> Rect:
        return Rect(0, 0, self.width, self.height)

    @property
    def image_area(self) -> int:
        return self.width * self.height

    def largest_index(self) -> int:
        """Index of the largest object by area; ties go to the lowest index."""
        if not self.objects:
            raise ValueError("background has no objects")
        best = 0
        for i, obj in enumerate(self.objects):
            if obj.area > self.objects[best].area:
                best = i
        return best


@dataclass(frozen=True)
class RatioInterval:
    """Target band for the overlap ratio of the largest background object.

    The degenerate interval ``[0]`` admits only an exact zero; every other
    interval is open below and closed above.
    """

    index: int
    lower: Fraction
    upper: Fraction
    lower_open: bool = True
    degenerate_zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lower", Fraction(self.lower))
        object.__setattr__(self, "upper", Fraction(self.upper))
        if self.degenerate_zero:
            if self.lower != 0 or self.upper != 0:
                raise ValueError("degenerate interval must be [0]")
        elif not (0 <= self.lower < self.upper <= 1) or not self.lower_open:
            raise ValueError(f"invalid interval ({self.lower}, {self.upper}]")

    def __str__(self) -> str:
        if self.degenerate_zero:
            return "[0]"
        return f"({float(self.lower):g}, {float(self.upper):g}]"

    def to_dict(self) -> dict:
        return {"index": self.index, "lower": float(self.lower), "upper": float(self.upper),
                "lower_open": self.lower_open, "degenerate_zero": self.degenerate_zero}


def as_fraction(value: Number) -> Fraction:
    """Exact rational for ``value``; floats are read as their shortest decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (float, np.floating)):
        return Fraction(repr(float(value)))
    return Fraction(value)


def overlap_fraction(a_j: Rect, a_obj: Rect) -> Fraction:
    """Exact ``|a_j ∩ a_obj| / |a_j|``."""
    return Fraction(a_j.intersection_area(a_obj), a_j.area())


def rect_overlap_ratio(a_j: Rect, a_obj: Rect) -> float:
    """Share of ``a_j``'s area covered by ``a_obj``, in ``[0, 1]``.

    Normalised by ``a_j`` only, so the ratio is asymmetric unless both
    rectangles have the same area.
    """
    return a_j.intersection_area(a_obj) / a_j.area()


def ratio_in_interval(r: Number, iv: RatioInterval) -> bool:
    r = as_fraction(r)
    if iv.degenerate_zero:
        return r == 0
    return iv.lower < r <= iv.upper

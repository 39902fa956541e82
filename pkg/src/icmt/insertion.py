"""Object resizing, overlap-constrained location tuning and compositing.

The inserted object's size is drawn relative to a softmax-weighted average
of the background object areas. Its position is then tuned so that the
overlap ratio with the largest background object falls in each of ``n``
target intervals while no other object is covered more than the interval's
upper bound.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .exceptions import (IntervalUnsatisfiable, NoObjectsInBackground, ObjectLargerThanBackground,
                         OutOfBounds, Step1Exhausted)
from .geometry import (BackgroundImage, ObjectInstance, RatioInterval, Rect, as_fraction,
                       overlap_fraction, ratio_in_interval)


@dataclass(frozen=True)
class ResizeParams:
    """Area-range factors for the inserted object.

    ``(alpha, beta)`` applies when the largest background object covers less
    than ``largest_object_threshold`` of the image, ``(large_alpha,
    large_beta)`` otherwise.
    """

    alpha: float = 0.8
    beta: float = 1.3
    large_alpha: float = 0.1
    large_beta: float = 0.37
    largest_object_threshold: float = 0.40

    def __post_init__(self):
        if not 0 < self.alpha < self.beta:
            raise ValueError(f"need 0 < alpha < beta, got {self.alpha}, {self.beta}")
        if not 0 < self.large_alpha < self.large_beta:
            raise ValueError(f"need 0 < large_alpha < large_beta, got {self.large_alpha}, {self.large_beta}")
        if not 0 < self.largest_object_threshold <= 1:
            raise ValueError("largest_object_threshold must lie in (0, 1]")

    def select(self, b: BackgroundImage) -> tuple[float, float]:
        if not b.objects:
            raise NoObjectsInBackground(b.id)
        a_max = max(o.area for o in b.objects)
        if a_max / b.image_area < self.largest_object_threshold:
            return self.alpha, self.beta
        return self.large_alpha, self.large_beta


@dataclass(frozen=True)
class TuningParams:
    n: int = 4
    ratio_max: float = 0.45
    c1: int = 50
    c2: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not 0 < self.ratio_max <= 1:
            raise ValueError(f"ratio_max must lie in (0, 1], got {self.ratio_max}")
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("c1 and c2 must be >= 1")


@dataclass(frozen=True)
class RuleCheck:
    r1_ok: bool
    r2_ok: bool
    ratios: tuple[Fraction, ...]
    largest: int

    @property
    def ok(self) -> bool:
        return self.r1_ok and self.r2_ok


@dataclass(frozen=True)
class Placement:
    interval: RatioInterval
    coordinate: tuple[int, int]
    achieved_ratios: tuple[float, ...]

    def rect(self, size: tuple[int, int]) -> Rect:
        h, w = size
        return Rect(self.coordinate[0], self.coordinate[1], w, h)


@dataclass(frozen=True)
class PlacementPlan:
    object_new_size: tuple[int, int]
    placements: tuple[Placement, ...]
    target_area: float
    step1_attempts: int
    probes: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        idx = [p.interval.index for p in self.placements]
        return idx == list(range(len(idx))) and len(idx) > 0


@dataclass(frozen=True, eq=False)
class SynthesizedImage:
    background_id: str
    object_id: str
    interval_index: int
    pixels: np.ndarray
    insertion_rect: Rect

    @property
    def id(self) -> str:
        return f"{self.background_id}__{self.object_id}__r{self.interval_index}"


def background_size_score(b: BackgroundImage) -> float:
    """Softmax-weighted mean object area of ``b``.

    Weights are ``softmax(a_i / s_b)`` over the object areas ``a_i`` relative
    to the image area, so the result always lies between the smallest and
    the largest object area.
    """
    if not b.objects:
        raise NoObjectsInBackground(b.id)
    areas = np.array([o.area for o in b.objects], dtype=np.float64)
    x = areas / b.image_area
    e = np.exp(x - x.max())
    weights = e / math.fsum(e)
    return math.fsum(weights * areas)


def new_size(h: int, w: int, s: float) -> tuple[int, int]:
    """Scale ``(h, w)`` by ``sqrt(s / (h*w))``, rounding each side half-up."""
    k = math.sqrt(s / (h * w))
    return max(1, int(math.floor(h * k + 0.5))), max(1, int(math.floor(w * k + 0.5)))


def sample_target_area(b: BackgroundImage, params: ResizeParams, rng: np.random.Generator) -> float:
    alpha, beta = params.select(b)
    score = background_size_score(b)
    return float(rng.uniform(alpha * score, beta * score))


def resize_to(obj: ObjectInstance, size: tuple[int, int]) -> ObjectInstance:
    """Resample the crop to ``(h, w)``: nearest for the mask, bilinear for colour."""
    h, w = size
    if (h, w) == (obj.h, obj.w):
        return obj
    rgba = Image.fromarray(obj.pixels, mode="RGBA").resize((w, h), Image.Resampling.BILINEAR)
    mask_img = Image.fromarray(obj.mask.astype(np.uint8) * 255, mode="L")
    mask = np.asarray(mask_img.resize((w, h), Image.Resampling.NEAREST)) > 127
    pixels = np.asarray(rgba, dtype=np.uint8).copy()
    pixels[~mask, :3] = 0
    pixels[..., 3] = np.where(mask, 255, 0)
    return ObjectInstance(id=obj.id, object_class=obj.object_class, pixels=pixels, mask=mask,
                          bbox_in_source=obj.bbox_in_source)


def resize_object(obj: ObjectInstance, b: BackgroundImage, params: Optional[ResizeParams] = None,
                  rng_seed: int = 0):
    """Draw a target area and resize ``obj`` to it, preserving aspect ratio.

    Returns ``(h', w', resized)``.
    """
    params = params or ResizeParams()
    rng = np.random.default_rng(rng_seed)
    s = sample_target_area(b, params, rng)
    h2, w2 = new_size(obj.h, obj.w, s)
    if h2 > b.height or w2 > b.width:
        raise ObjectLargerThanBackground(
            f"resized object {w2}x{h2} does not fit background {b.width}x{b.height}")
    return h2, w2, resize_to(obj, (h2, w2))


def compute_intervals(params=None, *, n: Optional[int] = None, ratio_max=None) -> list[RatioInterval]:
    """The ``n`` overlap-ratio intervals ``[0], (0, m/(n-1)], ..., (m(n-2)/(n-1), m]``.

    Bounds are exact rationals; a float ``ratio_max`` is read as its decimal
    repr so that ``0.45`` means 9/20.
    """
    if params is not None:
        n, ratio_max = params.n, params.ratio_max
    if n is None or ratio_max is None:
        raise TypeError("compute_intervals needs TuningParams or n and ratio_max")
    if n < 2:
        raise ValueError("n must be >= 2")
    top = as_fraction(ratio_max)
    step = top / (n - 1)
    out = [RatioInterval(0, Fraction(0), Fraction(0), lower_open=False, degenerate_zero=True)]
    for i in range(1, n):
        out.append(RatioInterval(i, step * (i - 1), step * i))
    return out


def check_rules(b: BackgroundImage, placed: Rect, iv: RatioInterval) -> RuleCheck:
    """Evaluate the two placement rules for an inserted box ``placed``.

    R1: the largest object's overlap ratio lies in ``iv``. R2: every other
    object's ratio is at most ``iv.upper``; for ``[0]`` that means no overlap
    with any object at all.
    """
    ratios = tuple(overlap_fraction(o.bbox, placed) for o in b.objects)
    li = b.largest_index()
    r1 = ratio_in_interval(ratios[li], iv)
    r2 = all(r <= iv.upper for j, r in enumerate(ratios) if j != li)
    return RuleCheck(r1, r2, ratios, li)


def _random_coordinate(rng, b: BackgroundImage, h: int, w: int) -> tuple[int, int]:
    return int(rng.integers(0, b.width - w + 1)), int(rng.integers(0, b.height - h + 1))


def _t_range(origin, direction, lo_bounds, hi_bounds):
    """Parameter range of ``origin + t*direction`` inside an axis-aligned box."""
    t_min, t_max = -math.inf, math.inf
    for o, d, lo, hi in zip(origin, direction, lo_bounds, hi_bounds):
        if abs(d) < 1e-12:
            if not lo - 1e-9 <= o <= hi + 1e-9:
                return None
            continue
        a, c = (lo - o) / d, (hi - o) / d
        t_min = max(t_min, min(a, c))
        t_max = min(t_max, max(a, c))
    if t_min > t_max:
        return None
    return t_min, t_max


class _SearchLine:
    """Candidate top-left coordinates along the ray from the largest object's
    centre through the step-1 placement, extended to the image border."""

    def __init__(self, b: BackgroundImage, size: tuple[int, int], start: tuple[int, int]):
        h, w = size
        self.b, self.h, self.w = b, h, w
        ax, ay = b.objects[b.largest_index()].bbox.center()
        self.origin = (ax, ay)
        sx, sy = start[0] + w / 2.0, start[1] + h / 2.0
        lo = (w / 2.0, h / 2.0)
        hi = (b.width - w / 2.0, b.height - h / 2.0)
        d = (sx - ax, sy - ay)
        if math.hypot(*d) < 1e-9:
            # step-1 centre coincides with the centroid: head for the farthest feasible corner
            corners = [(cx, cy) for cx in (lo[0], hi[0]) for cy in (lo[1], hi[1])]
            far = max(corners, key=lambda c: (math.hypot(c[0] - ax, c[1] - ay), c))
            d = (far[0] - ax, far[1] - ay)
            if math.hypot(*d) < 1e-9:
                d = (1.0, 0.0)
        self.direction = d
        rng_t = _t_range(self.origin, d, lo, hi)
        if rng_t is None:
            rng_t = (1.0, 1.0)
        self.t_lo = max(0.0, rng_t[0])
        self.t_hi = max(self.t_lo, rng_t[1])

    def coordinate(self, t: float) -> tuple[int, int]:
        cx = self.origin[0] + t * self.direction[0]
        cy = self.origin[1] + t * self.direction[1]
        x = int(math.floor(cx - self.w / 2.0 + 0.5))
        y = int(math.floor(cy - self.h / 2.0 + 0.5))
        x = min(max(x, 0), self.b.width - self.w)
        y = min(max(y, 0), self.b.height - self.h)
        return x, y


def _bisect_interval(line: _SearchLine, iv: RatioInterval, lo: float, hi: float, c2: int):
    """Binary search along the line for a coordinate satisfying R1 and R2.

    Overlap with the largest object is assumed to shrink as ``t`` grows. Too
    much overlap moves the probe outward, too little moves it inward; an R2-only
    failure also moves inward, toward the largest object and away from the
    others. Every probe is validated, so non-monotone cases can only fail, not
    return a bad coordinate. Returns ``(coordinate, t, check, probes)``.
    """
    for probe in range(1, c2 + 1):
        t = (lo + hi) / 2.0
        coord = line.coordinate(t)
        chk = check_rules(line.b, Rect(coord[0], coord[1], line.w, line.h), iv)
        if chk.ok:
            return coord, t, chk, probe
        o = chk.ratios[chk.largest]
        if o > iv.upper:
            lo = t
        else:
            hi = t
    return None, None, None, c2


def tune_locations(b: BackgroundImage, obj: ObjectInstance, tp: Optional[TuningParams] = None,
                   rp: Optional[ResizeParams] = None) -> PlacementPlan:
    """Find one insertion coordinate per overlap interval.

    Step 1 draws a fresh size and a uniformly random in-bounds coordinate up
    to ``c1`` times until the highest interval's rules hold. Step 2 searches
    the remaining intervals in descending order by bisection along a single
    line, at most ``c2`` probes each.

    Raises:
        Step1Exhausted: no size/coordinate met the highest interval.
        IntervalUnsatisfiable: some lower interval had no valid probe; the
            partial plan is attached as ``exc.plan``.
    """
    tp = tp or TuningParams()
    rp = rp or ResizeParams()
    if not b.objects:
        raise NoObjectsInBackground(b.id)
    intervals = compute_intervals(tp)
    rng = np.random.default_rng(tp.rng_seed)
    top = intervals[-1]

    start = size = chk = None
    s = 0.0
    attempts = 0
    for attempts in range(1, tp.c1 + 1):
        s = sample_target_area(b, rp, rng)
        h2, w2 = new_size(obj.h, obj.w, s)
        if h2 > b.height or w2 > b.width:
            continue
        coord = _random_coordinate(rng, b, h2, w2)
        c = check_rules(b, Rect(coord[0], coord[1], w2, h2), top)
        if c.ok:
            start, size, chk = coord, (h2, w2), c
            break
    if start is None:
        raise Step1Exhausted(tp.c1)

    placements = {top.index: Placement(top, start, tuple(float(r) for r in chk.ratios))}
    probes = {top.index: attempts}
    line = _SearchLine(b, size, start)
    lo = min(max(1.0, line.t_lo), line.t_hi)
    failed = []
    for iv in reversed(intervals[:-1]):
        coord, t, c, used = _bisect_interval(line, iv, lo, line.t_hi, tp.c2)
        probes[iv.index] = used
        if coord is None:
            failed.append(iv.index)
            continue
        placements[iv.index] = Placement(iv, coord, tuple(float(r) for r in c.ratios))
        lo = t

    plan = PlacementPlan(object_new_size=size,
                         placements=tuple(placements[k] for k in sorted(placements)),
                         target_area=s, step1_attempts=attempts, probes=probes)
    if failed:
        raise IntervalUnsatisfiable(failed, plan)
    return plan


def composite(b: BackgroundImage, obj: ObjectInstance, coord: tuple[int, int],
              feather: bool = False, interval_index: int = -1) -> SynthesizedImage:
    """Paste ``obj`` (already resized) with its top-left corner at ``coord``.

    Hard paste replaces exactly the masked pixels. ``feather`` blends the
    outermost ring of mask cells at 50% instead; unmasked pixels are never
    touched either way.
    """
    if b.pixels is None:
        raise ValueError(f"background {b.id} has no pixel data")
    x, y = int(coord[0]), int(coord[1])
    rect = Rect(x, y, obj.w, obj.h)
    if not b.frame.contains(rect):
        raise OutOfBounds(f"insertion rect {rect} exceeds background {b.width}x{b.height}")
    out = b.pixels.copy()
    region = out[y:y + obj.h, x:x + obj.w]
    src = obj.pixels[..., :3]
    if not feather:
        region[obj.mask] = src[obj.mask]
    else:
        m = obj.mask
        padded = np.pad(m, 1, constant_values=False)
        interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]) & m
        edge = m & ~interior
        region[interior] = src[interior]
        blended = (region[edge].astype(np.uint16) + src[edge].astype(np.uint16) + 1) // 2
        region[edge] = blended.astype(np.uint8)
    return SynthesizedImage(background_id=b.id, object_id=obj.id, interval_index=interval_index,
                            pixels=out, insertion_rect=rect)


def synthesize(b: BackgroundImage, obj: ObjectInstance, tp: Optional[TuningParams] = None,
               rp: Optional[ResizeParams] = None, feather: bool = False):
    """Tune locations and composite one image per interval. Returns ``(plan, images)``."""
    plan = tune_locations(b, obj, tp, rp)
    resized = resize_to(obj, plan.object_new_size)
    images = [composite(b, resized, p.coordinate, feather=feather, interval_index=p.interval.index)
              for p in plan.placements]
    return plan, images


def write_synthesized(img: SynthesizedImage, plan: PlacementPlan, out_dir, seed: int,
                      object_class: Optional[str] = None) -> Path:
    """Write ``<bg>__<obj>__r<i>.png`` and its JSON sidecar; returns the PNG path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png = out_dir / f"{img.id}.png"
    Image.fromarray(img.pixels, mode="RGB").save(png, format="PNG")
    placement = next(p for p in plan.placements if p.interval.index == img.interval_index)
    sidecar = {
        "id": img.id,
        "background": img.background_id,
        "object": img.object_id,
        "object_class": object_class,
        "interval": placement.interval.to_dict(),
        "coordinate": list(placement.coordinate),
        "achieved_ratios": list(placement.achieved_ratios),
        "size": list(plan.object_new_size),
        "seed": seed,
    }
    png.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return png

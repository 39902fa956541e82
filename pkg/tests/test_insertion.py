import json
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _synth import random_background, random_object
from icmt.exceptions import (IntervalUnsatisfiable, NoObjectsInBackground, OutOfBounds, PlacementError,
                             Step1Exhausted)
from icmt.geometry import BackgroundImage, BackgroundObject, ObjectClass, Rect
from icmt.insertion import (ResizeParams, TuningParams, background_size_score, check_rules, composite,
                            compute_intervals, new_size, resize_object, resize_to, synthesize,
                            tune_locations, write_synthesized)


def _bg(areas, width=40, height=25, boxes=None):
    boxes = boxes or [Rect(0, 0, 10, 10)] * len(areas)
    objs = tuple(BackgroundObject(ObjectClass("dog"), r, a) for r, a in zip(boxes, areas))
    return BackgroundImage("b", width, height, objs)


def _mp_score(areas, image_area):
    mpmath.mp.dps = 50
    xs = [mpmath.mpf(a) / image_area for a in areas]
    den = mpmath.fsum(mpmath.exp(x) for x in xs)
    return mpmath.fsum(mpmath.exp(x) / den * a for x, a in zip(xs, areas))


def test_size_score_worked_example():
    # a = [100, 300], s_b = 1000
    s = background_size_score(_bg([100, 300]))
    assert s == pytest.approx(209.967, abs=1e-3)
    assert abs(s - float(_mp_score([100, 300], 1000))) <= 1e-9 * s


@settings(max_examples=200)
@given(st.lists(st.integers(1, 10**6), min_size=1, max_size=8))
def test_size_score_matches_reference(areas):
    b = _bg(areas, width=1000, height=1000)
    s = background_size_score(b)
    ref = float(_mp_score(areas, 10**6))
    assert abs(s - ref) <= 1e-9 * ref
    assert min(areas) * (1 - 1e-12) <= s <= max(areas) * (1 + 1e-12)


def test_size_score_needs_objects():
    with pytest.raises(NoObjectsInBackground):
        background_size_score(BackgroundImage("b", 10, 10, ()))


@pytest.mark.parametrize("a_max, expected", [(399, (0.8, 1.3)), (400, (0.1, 0.37)), (900, (0.1, 0.37))])
def test_resize_params_switch_at_threshold(a_max, expected):
    assert ResizeParams().select(_bg([a_max], width=50, height=20)) == expected


@pytest.mark.parametrize("h, w, s, expected", [
    (10, 20, 800, (20, 40)),
    (10, 10, 50, (7, 7)),       # 7.07 -> 7
    (3, 5, 1, (1, 1)),          # floor of 1
    (4, 9, 9, (2, 5)),          # 2.0, 4.5 -> half-up
])
def test_new_size(h, w, s, expected):
    assert new_size(h, w, s) == expected


@given(st.integers(1, 300), st.integers(1, 300), st.floats(1, 1e5))
def test_new_size_keeps_aspect(h, w, s):
    h2, w2 = new_size(h, w, s)
    k = math.sqrt(s / (h * w))
    assert abs(h2 - h * k) <= 0.5 + 1e-9 or h2 == 1
    assert abs(w2 - w * k) <= 0.5 + 1e-9 or w2 == 1


@pytest.mark.parametrize("n, m, bounds", [
    (4, 0.45, [(0, 0), (0, Fraction(3, 20)), (Fraction(3, 20), Fraction(3, 10)), (Fraction(3, 10), Fraction(9, 20))]),
    (3, 0.3, [(0, 0), (0, Fraction(3, 20)), (Fraction(3, 20), Fraction(3, 10))]),
    (2, 1, [(0, 0), (0, 1)]),
])
def test_compute_intervals(n, m, bounds):
    ivs = compute_intervals(n=n, ratio_max=m)
    assert [(iv.lower, iv.upper) for iv in ivs] == bounds
    assert ivs[0].degenerate_zero and not any(iv.degenerate_zero for iv in ivs[1:])
    assert [iv.index for iv in ivs] == list(range(n))


def test_compute_intervals_from_params():
    assert compute_intervals(TuningParams(n=3, ratio_max=0.3)) == compute_intervals(n=3, ratio_max=0.3)
    with pytest.raises(ValueError):
        compute_intervals(n=1, ratio_max=0.3)


def test_check_rules_r2_for_zero_interval():
    b = _bg([400, 100], width=60, height=60, boxes=[Rect(0, 0, 20, 20), Rect(40, 40, 10, 10)])
    iv0 = compute_intervals(n=4, ratio_max=0.45)[0]
    assert check_rules(b, Rect(25, 0, 10, 10), iv0).ok
    clash = check_rules(b, Rect(45, 45, 10, 10), iv0)
    assert clash.r1_ok and not clash.r2_ok


def test_resize_object_area_in_range():
    rng = np.random.default_rng(0)
    obj = random_object(rng, 20, 30)
    b = _bg([100], width=100, height=100)
    h2, w2, resized = resize_object(obj, b, rng_seed=3)
    assert resized.mask.shape == (h2, w2)
    s = background_size_score(b)
    assert 0.8 * s * 0.8 <= h2 * w2 <= 1.3 * s * 1.25


def test_resize_to_keeps_alpha_consistent():
    obj = random_object(np.random.default_rng(1), 15, 15)
    r = resize_to(obj, (31, 7))
    assert ((r.pixels[..., 3] == 255) == r.mask).all()
    assert (r.pixels[~r.mask] == 0).all()


def _placement_ok(b, rect, iv):
    # independent restatement of the two rules with plain integer arithmetic
    li = max(range(len(b.objects)), key=lambda j: (b.objects[j].area, -j))
    for j, o in enumerate(b.objects):
        ix = max(0, min(o.bbox.x2, rect.x2) - max(o.bbox.x, rect.x))
        iy = max(0, min(o.bbox.y2, rect.y2) - max(o.bbox.y, rect.y))
        r = Fraction(ix * iy, o.bbox.w * o.bbox.h)
        if j == li:
            ok = r == 0 if iv.degenerate_zero else iv.lower < r <= iv.upper
        else:
            ok = r <= iv.upper
        if not ok:
            return False
    return True


def test_tune_locations_sound_on_random_backgrounds():
    rng = np.random.default_rng(11)
    complete = 0
    for k in range(60):
        b = random_background(rng)
        obj = random_object(rng)
        try:
            plan = tune_locations(b, obj, TuningParams(rng_seed=k))
        except IntervalUnsatisfiable as exc:
            plan = exc.plan
        except Step1Exhausted:
            continue
        complete += plan.complete
        h, w = plan.object_new_size
        for p in plan.placements:
            assert _placement_ok(b, Rect(p.coordinate[0], p.coordinate[1], w, h), p.interval)
            assert b.frame.contains(Rect(p.coordinate[0], p.coordinate[1], w, h))
    assert complete > 0


def test_tune_locations_is_deterministic():
    rng = np.random.default_rng(5)
    b, obj = random_background(rng, n_objects=2, width=300, height=300), random_object(rng)
    run = []
    for _ in range(2):
        try:
            run.append(tune_locations(b, obj, TuningParams(rng_seed=9)))
        except PlacementError as exc:
            run.append(type(exc).__name__)
    assert run[0] == run[1]


def test_step1_exhausted_when_object_covers_everything():
    # a single object filling the frame can never reach ratio <= 0.45 with any large insert
    b = _bg([10000], width=100, height=100, boxes=[Rect(0, 0, 100, 100)])
    obj = random_object(np.random.default_rng(0), 50, 50)
    with pytest.raises(Step1Exhausted) as info:
        tune_locations(b, obj, TuningParams(c1=5), ResizeParams(large_alpha=0.9, large_beta=1.0))
    assert info.value.attempts == 5


def test_interval_unsatisfiable_carries_partial_plan():
    # the largest box fills the frame: the zero interval is geometrically impossible
    b = _bg([10000], width=100, height=100, boxes=[Rect(0, 0, 100, 100)])
    obj = random_object(np.random.default_rng(0), 40, 40)
    with pytest.raises(IntervalUnsatisfiable) as info:
        tune_locations(b, obj, TuningParams(c1=200))
    assert 0 in info.value.indices
    assert info.value.plan.placements and not info.value.plan.complete


def test_composite_hard_paste_touches_mask_only():
    rng = np.random.default_rng(2)
    b = random_background(rng, n_objects=1, width=60, height=50, pixels=True)
    obj = random_object(rng, 12, 9)
    img = composite(b, obj, (5, 7))
    diff = (img.pixels != b.pixels).any(axis=2)
    assert diff.sum() == obj.mask.sum()
    assert (diff[7:19, 5:14] == obj.mask).all()


def test_composite_feather_stays_inside_mask():
    rng = np.random.default_rng(3)
    b = random_background(rng, n_objects=1, width=40, height=40, pixels=True)
    obj = random_object(rng, 10, 10)
    img = composite(b, obj, (0, 0), feather=True)
    diff = (img.pixels != b.pixels).any(axis=2)
    assert not diff[~np.pad(obj.mask, ((0, 30), (0, 30)))].any()


def test_composite_out_of_bounds():
    rng = np.random.default_rng(4)
    b = random_background(rng, n_objects=1, width=20, height=20, pixels=True)
    with pytest.raises(OutOfBounds):
        composite(b, random_object(rng, 10, 10), (15, 0))


def test_synthesize_and_write(tmp_path):
    rng = np.random.default_rng(7)
    for seed in range(50):
        b = random_background(rng, n_objects=2, width=200, height=160, pixels=True)
        obj = random_object(rng)
        try:
            plan, images = synthesize(b, obj, TuningParams(rng_seed=seed))
        except PlacementError:
            continue
        break
    else:
        pytest.fail("no feasible pair in 50 draws")
    assert [i.interval_index for i in images] == [0, 1, 2, 3]
    path = write_synthesized(images[2], plan, tmp_path, seed=seed, object_class="dog")
    assert path.name == "bg__obj__r2.png"
    side = json.loads(path.with_suffix(".json").read_text())
    assert side["interval"]["upper"] == pytest.approx(0.30)
    assert side["size"] == list(plan.object_new_size)

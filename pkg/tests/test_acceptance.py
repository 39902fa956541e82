"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the status lines
are written with capture suspended so they also show without ``-s``.
"""
import contextlib
import itertools
import json
import re
import time
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np
import pytest

from _synth import random_background, random_object, run_cli, run_fixture_pipeline
from icmt.analysis import EXEMPT, PLURAL, SINGULAR, ClassLexicon, analyze, make_analysis
from icmt.audit import GroundTruthRecord, audit_dataset
from icmt.exceptions import IntervalUnsatisfiable, ObjectLargerThanBackground, Step1Exhausted
from icmt.geometry import BackgroundImage, BackgroundObject, ObjectClass, Rect
from icmt.insertion import (ResizeParams, TuningParams, background_size_score, composite, compute_intervals,
                            new_size, resize_to, sample_target_area, tune_locations)
from icmt.oracle import check_baseline, check_mr1, check_mr2, read_issues
from icmt.transforms import baseline_transform


@pytest.fixture
def criterion(capsys):
    """Context manager factory: ``with criterion(n, title) as note: ...``.

    ``note(text)`` appends a detail to the status line printed on exit.
    """
    @contextlib.contextmanager
    def run(number, title):
        details = []
        t0 = time.perf_counter()
        ok = False
        try:
            yield details.append
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            extra = "; ".join(details)
            with capsys.disabled():
                print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} "
                      f"({extra}{'; ' if extra else ''}{elapsed:.2f}s)")
    return run


# 1 -------------------------------------------------------------------------

def test_c1_interval_reproduction(criterion):
    with criterion(1, "interval reproduction") as note:
        ivs = compute_intervals(n=4, ratio_max=0.45)
        got = [(iv.lower, iv.upper, iv.degenerate_zero) for iv in ivs]
        assert got == [(Fraction(0), Fraction(0), True), (Fraction(0), Fraction(3, 20), False),
                       (Fraction(3, 20), Fraction(3, 10), False), (Fraction(3, 10), Fraction(9, 20), False)]
        assert all(type(iv.lower) is Fraction and type(iv.upper) is Fraction for iv in ivs)
        assert all(iv.lower_open for iv in ivs[1:])
        reps = 200
        t0 = time.perf_counter()
        for _ in range(reps):
            compute_intervals(n=4, ratio_max=0.45)
        per_call = (time.perf_counter() - t0) / reps
        note(f"{per_call * 1e6:.1f} us/call")
        assert per_call < 1e-3


# 2 -------------------------------------------------------------------------

def _oracle_ratio(obj_box: Rect, placed: Rect, width: int, height: int) -> Fraction:
    """Overlap share of ``obj_box`` by rasterising both boxes."""
    a = np.zeros((height, width), bool)
    c = np.zeros((height, width), bool)
    a[obj_box.y:obj_box.y + obj_box.h, obj_box.x:obj_box.x + obj_box.w] = True
    c[placed.y:placed.y + placed.h, placed.x:placed.x + placed.w] = True
    return Fraction(int((a & c).sum()), int(a.sum()))


def _oracle_ok(b: BackgroundImage, placed: Rect, lower: Fraction, upper: Fraction, zero: bool) -> bool:
    if placed.x < 0 or placed.y < 0 or placed.x + placed.w > b.width or placed.y + placed.h > b.height:
        return False
    areas = [o.area for o in b.objects]
    largest = areas.index(max(areas))
    ratios = [_oracle_ratio(o.bbox, placed, b.width, b.height) for o in b.objects]
    r1 = ratios[largest] == 0 if zero else lower < ratios[largest] <= upper
    r2 = all(r <= upper for j, r in enumerate(ratios) if j != largest)
    return r1 and r2


def test_c2_placement_soundness(criterion):
    with criterion(2, "placement soundness") as note:
        rng = np.random.default_rng(2024)
        bounds = {0: (Fraction(0), Fraction(0), True), 1: (Fraction(0), Fraction(3, 20), False),
                  2: (Fraction(3, 20), Fraction(3, 10), False), 3: (Fraction(3, 10), Fraction(9, 20), False)}
        checked = violations = complete = 0
        t0 = time.perf_counter()
        n_pairs = 500
        for k in range(n_pairs):
            b = random_background(rng)
            obj = random_object(rng)
            try:
                plan = tune_locations(b, obj, TuningParams(rng_seed=k))
            except IntervalUnsatisfiable as exc:
                plan = exc.plan
            except (Step1Exhausted, ObjectLargerThanBackground):
                continue
            complete += plan.complete and len(plan.placements) == 4
            h, w = plan.object_new_size
            for p in plan.placements:
                lower, upper, zero = bounds[p.interval.index]
                checked += 1
                if not _oracle_ok(b, Rect(p.coordinate[0], p.coordinate[1], w, h), lower, upper, zero):
                    violations += 1
        elapsed = time.perf_counter() - t0
        note(f"{n_pairs} pairs, {checked} placements, {complete} complete plans, {violations} violations")
        assert checked >= n_pairs
        assert violations == 0
        assert elapsed < 30


# 3 -------------------------------------------------------------------------

def _reference_score(areas, image_area):
    mpmath.mp.dps = 50
    x = [mpmath.mpf(a) / image_area for a in areas]
    e = [mpmath.e ** v for v in x]
    z = mpmath.fsum(e)
    return mpmath.fsum(ei / z * a for ei, a in zip(e, areas))


def test_c3_resizing_law(criterion):
    with criterion(3, "resizing law") as note:
        rng = np.random.default_rng(7)
        params = ResizeParams()
        worst_rel = worst_dev = 0.0
        regimes = {"small": 0, "large": 0}
        for _ in range(1000):
            width, height = int(rng.integers(40, 640)), int(rng.integers(40, 640))
            objs = []
            for _ in range(int(rng.integers(1, 6))):
                w, h = int(rng.integers(1, width + 1)), int(rng.integers(1, height + 1))
                objs.append(BackgroundObject(ObjectClass("dog", "animal"), Rect(0, 0, w, h),
                                             int(rng.integers(1, w * h + 1))))
            b = BackgroundImage("b", width, height, tuple(objs))
            areas = [o.area for o in objs]
            score = background_size_score(b)
            ref = _reference_score(areas, width * height)
            rel = float(abs((mpmath.mpf(score) - ref) / ref))
            worst_rel = max(worst_rel, rel)
            assert rel <= 1e-9
            # regime switch, restated from the raw areas
            large = Fraction(max(areas), width * height) >= Fraction(2, 5)
            alpha, beta = (0.1, 0.37) if large else (0.8, 1.3)
            regimes["large" if large else "small"] += 1
            assert params.select(b) == (alpha, beta)
            s = sample_target_area(b, params, rng)
            assert alpha * score <= s <= beta * score
            oh, ow = int(rng.integers(2, 300)), int(rng.integers(2, 300))
            h2, w2 = new_size(oh, ow, s)
            dev = min(abs(h2 - w2 * oh / ow), abs(w2 - h2 * ow / oh))
            worst_dev = max(worst_dev, dev)
            assert dev <= 1.0
        note(f"max rel err {worst_rel:.1e}, max aspect dev {worst_dev:.3f}px, regimes {regimes}")
        assert regimes["small"] > 0 and regimes["large"] > 0


def test_c3_threshold_boundary():
    obj = lambda a: BackgroundObject(ObjectClass("dog", "animal"), Rect(0, 0, 10, 10), a)
    below = BackgroundImage("b", 10, 10, (obj(39),))
    at = BackgroundImage("b", 10, 10, (obj(40),))
    assert ResizeParams().select(below) == (0.8, 1.3)
    assert ResizeParams().select(at) == (0.1, 0.37)


# 4 -------------------------------------------------------------------------

def test_c4_compositing_exactness(criterion):
    with criterion(4, "compositing exactness") as note:
        rng = np.random.default_rng(11)
        cases = 0
        while cases < 100:
            b = random_background(rng, pixels=True)
            obj = random_object(rng)
            size = (int(rng.integers(1, min(b.height, 80) + 1)), int(rng.integers(1, min(b.width, 80) + 1)))
            obj = resize_to(obj, size)
            if not obj.mask.any():
                continue
            x = int(rng.integers(0, b.width - obj.w + 1))
            y = int(rng.integers(0, b.height - obj.h + 1))
            img = composite(b, obj, (x, y))
            diff = int((img.pixels != b.pixels).any(axis=-1).sum())
            assert diff == int(obj.mask.sum())
            cases += 1
        note(f"{cases}/100 cases exact")


# 5 -------------------------------------------------------------------------

LEX6 = ["dog", "cat", "horse", "person", "sheep", "scissors"]


def _states(c):
    return (None, EXEMPT) if c == "scissors" else (None, SINGULAR, PLURAL)


def _brute(bm: dict, sm: dict, ins: str):
    """Relations restated directly on mention maps.

    Returns ``(mr1, mr2, missing_inserted, missing, extra, form_changed, wrong_inserted)``.
    """
    bset, sset = set(bm), set(sm)
    mr1 = sset != bset | {ins}
    missing_ins = ins not in sset
    missing = bset - sset - {ins}
    extra = sset - bset - {ins}
    changed = {c for c in (bset & sset) - {ins}
               if EXEMPT not in (bm[c], sm[c]) and bm[c] != sm[c]}
    wrong = False
    if ins in sset and EXEMPT not in (sm[ins], bm.get(ins)):
        wrong = sm[ins] != (PLURAL if ins in bset else SINGULAR)
    return mr1, bool(changed) or wrong, missing_ins, missing, extra, changed, wrong


def test_c5_mr_equivalence(criterion):
    with criterion(5, "MR oracle equivalence") as note:
        t0 = time.perf_counter()
        cases = disagreements = 0
        for universe in itertools.combinations(LEX6, 4):
            maps = []
            for combo in itertools.product(*[_states(c) for c in universe]):
                m = {c: f for c, f in zip(universe, combo) if f is not None}
                maps.append((m, make_analysis(m)))
            for (bm, ba), (sm, sa), ins in itertools.product(maps, maps, LEX6):
                cases += 1
                v1, v2 = check_mr1(ba, sa, ins), check_mr2(ba, sa, ins)
                exp = _brute(bm, sm, ins)
                got = (bool(v1), bool(v2),
                       any(v.kind == "missing_inserted" for v in v1),
                       {v.class_name for v in v1 if v.kind == "missing_class"},
                       {v.class_name for v in v1 if v.kind == "extra_class"},
                       {v.class_name for v in v2 if v.kind == "form_changed"},
                       any(v.kind == "inserted_wrong_form" for v in v2))
                disagreements += got != exp
        elapsed = time.perf_counter() - t0
        note(f"{cases} cases, {disagreements} disagreements")
        assert cases >= 10_000
        assert disagreements == 0
        assert elapsed < 10


# 6 -------------------------------------------------------------------------

def test_c6_end_to_end(criterion, tmp_path, capsys):
    with criterion(6, "end-to-end with mock provider") as note:
        pick = lambda ids: [ids[i] for i in np.random.default_rng(13).choice(len(ids), 13, replace=False)]
        run = run_fixture_pipeline(tmp_path, seed=3, pairs=20, violate=pick)
        assert len(run["ids"]) == 80
        issues = read_issues(run["issues"])
        assert sorted(i.synthesized_id for i in issues) == run["violate"]
        assert len(issues) == 13
        labels = tmp_path / "labels.jsonl"
        labels.write_text("".join(json.dumps({"id": i.id, "error": k < 12}) + "\n"
                                  for k, i in enumerate(sorted(issues, key=lambda i: i.id))))
        capsys.readouterr()
        code = run_cli("eval", "--issues", run["issues"], "--labels", labels, "--out", tmp_path / "merged.jsonl",
                       "--synth", tmp_path / "out")
        out = capsys.readouterr().out
        line = next(l for l in out.splitlines() if l.startswith("precision:"))
        note(f"{len(issues)} issues, {line}")
        assert code == 0
        assert line == "precision: 12/13 = 0.9231"


# 7 -------------------------------------------------------------------------

def _typo(word):
    return word[0] + word[2] + word[1] + word[3:] if len(word) > 3 else word + word[-1]


def test_c7_dataset_audit(criterion):
    with criterion(7, "dataset audit") as note:
        lex = ClassLexicon.load()
        pool = ["person", "dog", "horse", "car", "bus", "bicycle", "chair", "bench", "cow", "truck"]
        rng = np.random.default_rng(5)
        tuples, planted = [], set()
        kinds = ["typo", "misclassification", "omission", "typo", "omission"]
        plant_at = dict(zip(rng.choice(200, 5, replace=False).tolist(), kinds))
        templates = ["a {a} near a {b}", "there is a {a} and a {b} here", "a {b} beside a {a}",
                     "a photo of a {a} with a {b}", "the {a} stands next to the {b}"]
        for scene in range(40):
            while True:
                a, b, c = rng.choice(pool, 3, replace=False).tolist()
                if lex.super_category(a) != lex.super_category(b):
                    break
            bg = analyze(f"a {a} and a {b}", lex)
            syn = analyze(f"a {a} and a {b} and a {c}", lex)
            for k, tpl in enumerate(templates):
                idx = scene * 5 + k
                kind = plant_at.get(idx)
                bb = b
                if kind == "typo":
                    bb = _typo(b)
                    assert lex.canonical(bb) is None
                elif kind == "misclassification":
                    bb = next(o for o in pool if lex.super_category(o) not in
                              {lex.super_category(a), lex.super_category(b), lex.super_category(c)})
                text = tpl.format(a=a, b=bb)
                if kind == "omission":
                    text = f"a {a} on its own"
                rec = GroundTruthRecord(str(scene), text, caption_id=str(idx))
                tuples.append((bg, syn, rec))
                if kind:
                    planted.add(str(idx))
        assert len(tuples) == 200 and len(planted) == 5
        report = audit_dataset(tuples, lex)
        flagged = {f.caption_id for f in report.flags}
        note(f"{len(tuples)} tuples, {len(flagged)} flagged, {len(flagged & planted)}/5 planted found")
        assert flagged == planted


# 8 -------------------------------------------------------------------------

def _strip_ts(obj):
    if isinstance(obj, dict):
        return {k: _strip_ts(v) for k, v in obj.items() if k not in ("ts", "latency_ms")}
    if isinstance(obj, list):
        return [_strip_ts(v) for v in obj]
    return obj


def _snapshot(root: Path) -> dict:
    files = {}
    for p in sorted((root / "out").rglob("*")):
        if p.is_file():
            files[str(p.relative_to(root))] = p.read_bytes()
    for name in ("issues.jsonl", "report.md", "report.json"):
        files[name] = (root / name).read_bytes()
    cache = [_strip_ts(json.loads(l)) for f in sorted((root / "cache").rglob("*.jsonl"))
             for l in f.read_text().splitlines() if l.strip()]
    files["cache (ts excluded)"] = json.dumps(sorted(cache, key=json.dumps)).encode()
    return files


def test_c8_determinism(criterion, tmp_path):
    with criterion(8, "determinism") as note:
        snaps = []
        for name in ("a", "b"):
            root = tmp_path / name
            violate = lambda ids: ids[::7]
            run_fixture_pipeline(root, seed=42, pairs=8, violate=violate, baseline=True)
            for fmt, out in (("markdown", "report.md"), ("json", "report.json")):
                assert run_cli("report", "--issues", root / "issues.jsonl", "--synth", root / "out",
                               "--partial", "--format", fmt, "--out", root / out) == 0
            snaps.append(_snapshot(root))
        a, b = snaps
        differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
        n_png = sum(k.endswith(".png") for k in a)
        note(f"{len(a)} artifacts ({n_png} images), {len(differing)} differ")
        assert n_png > 0
        assert differing == []


# 9 -------------------------------------------------------------------------

def _reference_normalize(caption):
    return re.findall(r"[^\W_]+", caption.lower())


def _baseline_fixtures():
    base = ["A dog on a couch.", "Two cats sleeping on a bed", "a man riding a horse",
            "A red bus parked near the curb", "Several sheep grazing in a field"]
    same = [lambda s: s.upper(), lambda s: "  " + s.replace(" ", "   ") + " ", lambda s: s.rstrip(".") + "!",
            lambda s: s.replace(" ", " , ", 1), lambda s: s]
    changed = [lambda s: s + " at night", lambda s: s.replace("a", "the", 1) if " a " in f" {s} " else "the " + s,
               lambda s: " ".join(s.split()[1:]), lambda s: s + "s", lambda s: "a photo"]
    pairs = []
    for s in base:
        pairs += [(s, f(s), False) for f in same]
        pairs += [(s, f(s), True) for f in changed]
    return pairs


def test_c9_baseline_harness(criterion):
    with criterion(9, "baseline harness") as note:
        rng = np.random.default_rng(9)
        for _ in range(50):
            img = rng.integers(0, 256, (int(rng.integers(1, 64)), int(rng.integers(1, 64)), 3), dtype=np.uint8)
            for kind, mag in (("brightness", 0), ("contrast", 1.0)):
                out = baseline_transform(img, kind, mag)
                assert out.dtype == img.dtype and out.tobytes() == img.tobytes()
        pairs = _baseline_fixtures()
        assert len(pairs) == 50
        wrong = 0
        for orig, new, expected in pairs:
            assert (_reference_normalize(orig) != _reference_normalize(new)) is expected
            wrong += check_baseline(orig, new) is not expected
        note(f"identity transforms bit-identical on 50 images, {50 - wrong}/50 caption pairs correct")
        assert wrong == 0

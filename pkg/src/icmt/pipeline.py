"""End-to-end stages. Each stage reads and writes on-disk artifacts only.

Layout of a synthesis output directory::

    out/pairs.json                       pair manifest (seeds, ids, file names)
    out/backgrounds/<bg>.png             background copies that get captioned
    out/<bg>__<obj>__r<i>.png (+ .json)  synthesized images and sidecars
    out/baseline/<bg>__<kind>.png        same-caption baseline images
"""
from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .analysis import ClassLexicon, analyze
from .audit import AuditReport, audit_dataset, load_coco_captions
from .exceptions import InputError, ParseError, PlacementError, ProviderError
from .geometry import BackgroundImage
from .insertion import ResizeParams, TuningParams, synthesize, write_synthesized
from .oracle import (MRVerdict, SuspiciousIssue, Violation, make_issue, check_baseline,
                     write_issues)
from .pool import (background_from_record, build_pool, ingest_annotations, load_backgrounds,
                   load_manifest, sample_pair, write_backgrounds)
from .providers import (CaptionCache, CaptionFailure, CaptionRequest, ProviderConfig, caption_batch)
from .report import RunSummary, summarize
from .transforms import DEFAULT_MAGNITUDES, KINDS, baseline_transform

logger = logging.getLogger(__name__)

PAIRS_FILE = "pairs.json"


def _dump(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def derive_seed(seed: int, counter: int) -> int:
    """Independent 32-bit child seed for draw number ``counter``."""
    return int(np.random.SeedSequence([int(seed), int(counter)]).generate_state(1)[0])


@dataclass
class PipelineConfig:
    """Experiment knobs shared by the stages; loadable from JSON or TOML."""

    pool: str = "pool"
    backgrounds: Optional[str] = None
    out: str = "out"
    cache: str = "captions"
    lexicon: Optional[str] = None
    provider: Optional[str] = None
    seed: int = 0
    jobs: int = 4
    n: int = 4
    ratio_max: float = 0.45
    c1: int = 50
    c2: int = 8
    extra: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise InputError(f"config file not found: {path}") from exc
        try:
            if path.suffix.lower() == ".toml":
                try:
                    import tomllib
                except ModuleNotFoundError:  # Python < 3.11
                    import tomli as tomllib
                data = tomllib.loads(text)
            else:
                data = json.loads(text)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        names = {f.name for f in fields(cls)} - {"extra"}
        known = {k: v for k, v in data.items() if k in names}
        return cls(**known, extra={k: v for k, v in data.items() if k not in names})

    def as_defaults(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}
        d.update(self.extra)
        return d


# -- pool -------------------------------------------------------------------

def run_pool_build(annotations, images, out, classes=None, provenance="ground_truth") -> dict:
    records = ingest_annotations(annotations, images, class_filter=classes)
    manifest = build_pool(records, out)
    backgrounds = [background_from_record(r, load_pixels=False, provenance=provenance) for r in records]
    write_backgrounds(backgrounds, Path(out) / "backgrounds.json")
    return {"objects": len(manifest), "backgrounds": len(backgrounds),
            "classes": len(manifest.class_index)}


# -- synthesize ---------------------------------------------------------------

def run_synthesize(pool, out, pairs: int, seed: int = 0, backgrounds=None,
                   tuning: Optional[TuningParams] = None, resize: Optional[ResizeParams] = None,
                   feather: bool = False, baseline: bool = False, max_draws: int = 200) -> dict:
    """Sample ``pairs`` feasible background/object pairs and write all images.

    Infeasible draws (placement search failures) and repeats of an already
    used background/object combination are replaced by a fresh draw, up to
    ``max_draws`` per pair. Image ids are built from the two ids, so a repeat
    would overwrite earlier files.
    """
    tuning = tuning or TuningParams()
    resize = resize or ResizeParams()
    manifest = load_manifest(pool)
    bg_file = Path(backgrounds) if backgrounds else Path(pool) / "backgrounds.json"
    bgs = load_backgrounds(bg_file, load_pixels=False)
    loaded: dict[str, BackgroundImage] = {}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def with_pixels(bg: BackgroundImage) -> BackgroundImage:
        if bg.id not in loaded:
            with Image.open(bg.path) as im:
                px = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
            loaded[bg.id] = BackgroundImage(bg.id, bg.width, bg.height, bg.objects, px, bg.path,
                                            bg.provenance)
        return loaded[bg.id]

    rows = []
    resampled = 0
    draw = 0
    used: set = set()
    for index in range(pairs):
        for _ in range(max_draws):
            pair_seed = derive_seed(seed, draw)
            draw += 1
            bg, obj = sample_pair(manifest, bgs, pair_seed)
            if (bg.id, obj.id) in used:
                continue
            tp = TuningParams(tuning.n, tuning.ratio_max, tuning.c1, tuning.c2, pair_seed)
            try:
                plan, images = synthesize(with_pixels(bg), obj, tp, resize, feather=feather)
            except PlacementError as exc:
                resampled += 1
                logger.info("pair %d: %s/%s infeasible (%s); resampling", index, bg.id, obj.id, exc)
                continue
            break
        else:
            raise PlacementError(f"no feasible pair after {max_draws} draws for pair {index}")
        used.add((bg.id, obj.id))
        bg = with_pixels(bg)
        bg_png = out / "backgrounds" / f"{bg.id}.png"
        if not bg_png.exists():
            bg_png.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(bg.pixels, mode="RGB").save(bg_png, format="PNG")
        entries = []
        for img in images:
            path = write_synthesized(img, plan, out, pair_seed, object_class=obj.object_class.name)
            entries.append({"id": img.id, "interval": img.interval_index, "file": path.name})
        rows.append({"index": index, "background": bg.id,
                     "background_file": f"backgrounds/{bg.id}.png", "object": obj.id,
                     "object_class": obj.object_class.name, "seed": pair_seed,
                     "size": list(plan.object_new_size), "images": entries})

    baseline_rows = []
    if baseline:
        for bg_id in sorted({r["background"] for r in rows}):
            src = loaded[bg_id].pixels
            for kind in KINDS:
                mag = DEFAULT_MAGNITUDES[kind]
                name = f"{bg_id}__{kind}"
                dest = out / "baseline" / f"{name}.png"
                dest.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(baseline_transform(src, kind, mag), mode="RGB").save(dest, format="PNG")
                baseline_rows.append({"id": name, "background": bg_id, "kind": kind,
                                      "magnitude": mag, "file": f"baseline/{name}.png"})

    _dump(out / PAIRS_FILE, {
        "seed": seed,
        "params": {"n": tuning.n, "ratio_max": tuning.ratio_max, "c1": tuning.c1, "c2": tuning.c2},
        "pairs": rows, "baseline": baseline_rows,
    })
    return {"pairs": len(rows), "images": sum(len(r["images"]) for r in rows),
            "backgrounds": len({r["background"] for r in rows}), "resampled": resampled,
            "baseline": len(baseline_rows)}


def load_pairs(synth_dir) -> dict:
    path = Path(synth_dir) / PAIRS_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputError(f"{path} not found; run `synthesize` first") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _image_files(synth_dir, pairs: dict) -> list[tuple[str, Path]]:
    root = Path(synth_dir)
    seen = {}
    for row in pairs["pairs"]:
        seen.setdefault(row["background"], root / row["background_file"])
        for img in row["images"]:
            seen.setdefault(img["id"], root / img["file"])
    for row in pairs.get("baseline", []):
        seen.setdefault(row["id"], root / row["file"])
    return list(seen.items())


# -- caption ------------------------------------------------------------------

def run_caption(synth_dir, provider_config, cache_dir, jobs: int = 4, provider=None) -> dict:
    """Caption every background, synthesized and baseline image of a run."""
    if provider is None:
        provider = ProviderConfig.load(provider_config).build()
    cache = CaptionCache.for_provider(cache_dir, provider.id)
    pairs = load_pairs(synth_dir)
    reqs = []
    for image_id, path in _image_files(synth_dir, pairs):
        if not path.is_file():
            raise InputError(f"missing image {path}")
        reqs.append(CaptionRequest.from_path(path, image_id=image_id, provider_id=provider.id))
    before = getattr(provider, "n_requests", None)
    results = caption_batch(provider, reqs, max_in_flight=max(1, jobs), cache=cache)
    failures = [r for r in results if isinstance(r, CaptionFailure)]
    stats = {"images": len(reqs), "cached": sum(1 for r in results if getattr(r, "cached", False)),
             "failed": len(failures)}
    if before is not None:
        stats["requests"] = provider.n_requests - before
    if failures:
        first = failures[0].error
        logger.error("%d caption request(s) failed; first: %s", len(failures), first)
        raise first
    return stats


def _captions_for(synth_dir, pairs, cache: CaptionCache) -> dict[str, str]:
    out = {}
    missing = []
    for image_id, path in _image_files(synth_dir, pairs):
        req = CaptionRequest.from_path(path, image_id=image_id)
        row = cache.get(req.content_hash)
        if row is None:
            missing.append(image_id)
        else:
            out[image_id] = row["caption"]
    if missing:
        raise InputError(f"{len(missing)} image(s) have no cached caption (e.g. {missing[0]}); "
                         "run `caption` first")
    return out


# -- check ----------------------------------------------------------------------

def run_check(synth_dir, cache_dir, provider_id: str, out_file, lexicon=None,
              relaxed: bool = False, baseline: bool = False) -> dict:
    """Evaluate the relations on every caption pair and write issues JSONL."""
    pairs = load_pairs(synth_dir)
    cache = CaptionCache.for_provider(cache_dir, provider_id)
    captions = _captions_for(synth_dir, pairs, cache)
    lex = lexicon if isinstance(lexicon, ClassLexicon) else ClassLexicon.load(lexicon)
    issues: list[SuspiciousIssue] = []
    n_checked = 0
    if baseline:
        for row in pairs.get("baseline", []):
            n_checked += 1
            orig, new = captions[row["background"]], captions[row["id"]]
            if check_baseline(orig, new):
                verdict = MRVerdict((Violation("caption_changed", row["kind"], orig, new),))
                issues.append(SuspiciousIssue(
                    id=f"{provider_id}:{row['id']}", background_id=row["background"],
                    synthesized_id=row["id"], interval_index=KINDS.index(row["kind"]),
                    background_caption=orig, synthesized_caption=new, inserted_class="",
                    verdict=verdict, provider_id=provider_id))
    else:
        for row in pairs["pairs"]:
            bg_analysis = analyze(captions[row["background"]], lex)
            for img in row["images"]:
                n_checked += 1
                syn_analysis = analyze(captions[img["id"]], lex)
                inserted = lex.canonical(row["object_class"]) or row["object_class"]
                issue = make_issue(f"{provider_id}:{img['id']}", row["background"], img["id"],
                                   img["interval"], bg_analysis, syn_analysis, inserted,
                                   relaxed=relaxed, provider_id=provider_id)
                if issue is not None:
                    issues.append(issue)
    write_issues(issues, out_file)
    return {"checked": n_checked, "issues": len(issues)}


def pairs_per_interval(pairs: dict, baseline: bool = False) -> dict:
    if baseline:
        return dict(Counter(KINDS.index(r["kind"]) for r in pairs.get("baseline", [])))
    return dict(Counter(img["interval"] for r in pairs["pairs"] for img in r["images"]))


# -- audit -------------------------------------------------------------------------

def run_audit(gt_file, synth_dir, cache_dir, provider_id: str, out_file, lexicon=None,
              use_super_category: bool = True) -> AuditReport:
    pairs = load_pairs(synth_dir)
    cache = CaptionCache.for_provider(cache_dir, provider_id)
    captions = _captions_for(synth_dir, pairs, cache)
    lex = lexicon if isinstance(lexicon, ClassLexicon) else ClassLexicon.load(lexicon)
    try:
        gt = load_coco_captions(gt_file)
    except FileNotFoundError as exc:
        raise InputError(f"ground-truth captions not found: {gt_file}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{gt_file}: {exc!r}") from exc
    tuples = []
    for row in pairs["pairs"]:
        records = gt.get(row["background"], [])
        if not records:
            continue
        bg_analysis = analyze(captions[row["background"]], lex)
        for img in row["images"]:
            syn_analysis = analyze(captions[img["id"]], lex)
            tuples += [(bg_analysis, syn_analysis, rec) for rec in records]
    report = audit_dataset(tuples, lex, use_super_category=use_super_category)
    Path(out_file).parent.mkdir(parents=True, exist_ok=True)
    Path(out_file).write_text(report.to_jsonl(), encoding="utf-8")
    return report

"""Label-error detection for ground-truth caption datasets.

Classes that an IC system names in both the background caption and the
synthesized caption are taken as the image's important objects. A
ground-truth caption that omits any of them (compared at super-category
level) is flagged as a possible label error.
"""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .analysis import CaptionAnalysis, ClassLexicon, Tagger, analyze


@dataclass(frozen=True)
class GroundTruthRecord:
    image_id: str
    caption: str
    source: str = "coco"
    caption_id: Optional[str] = None

    def __post_init__(self):
        if not self.caption or not self.caption.strip():
            raise ValueError(f"empty ground-truth caption for image {self.image_id}")


@dataclass(frozen=True)
class LabelFlag:
    image_id: str
    caption: str
    caption_id: Optional[str]
    missing: frozenset
    invariant: frozenset
    ground_truth: frozenset

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "caption_id": self.caption_id, "caption": self.caption,
                "missing": sorted(self.missing), "invariant": sorted(self.invariant),
                "ground_truth": sorted(self.ground_truth)}


def _lift(classes: Iterable[str], lexicon: Optional[ClassLexicon]) -> frozenset:
    if lexicon is None:
        return frozenset(classes)
    return frozenset(lexicon.super_category(c) for c in classes)


def invariant_set(bg: CaptionAnalysis, syn: CaptionAnalysis,
                  lexicon: Optional[ClassLexicon] = None) -> frozenset:
    """Classes named in both captions, lifted to super-categories when a lexicon is given."""
    return _lift(bg.classes & syn.classes, lexicon)


def audit_label(bg: CaptionAnalysis, syn: CaptionAnalysis, gt: GroundTruthRecord,
                lexicon: ClassLexicon, use_super_category: bool = True,
                tagger: Optional[Tagger] = None) -> Optional[LabelFlag]:
    """Flag ``gt`` when the invariant set is not a subset of its own class set.

    The subset test is non-strict, so a caption naming exactly the invariant
    classes passes; an empty invariant set never flags.
    """
    mapper = lexicon if use_super_category else None
    invar = invariant_set(bg, syn, mapper)
    if not invar:
        return None
    gt_set = _lift(analyze(gt.caption, lexicon, tagger).classes, mapper)
    missing = invar - gt_set
    if not missing:
        return None
    return LabelFlag(gt.image_id, gt.caption, gt.caption_id, missing, invar, gt_set)


@dataclass
class AuditReport:
    flags: list[LabelFlag] = field(default_factory=list)
    n_tuples: int = 0
    captions_per_image: dict = field(default_factory=dict)

    @property
    def per_class(self) -> dict:
        counts = Counter(c for f in self.flags for c in f.missing)
        return dict(sorted(counts.items()))

    @property
    def flagged_images(self) -> dict:
        per_image = defaultdict(set)
        for f in self.flags:
            per_image[f.image_id].add(f.caption_id if f.caption_id is not None else f.caption)
        return per_image

    def severity(self, image_id: str) -> str:
        """``all`` when every ground-truth caption of the image was flagged."""
        flagged = len(self.flagged_images.get(image_id, ()))
        if not flagged:
            return "none"
        total = self.captions_per_image.get(image_id, flagged)
        return "all" if flagged >= total else "some"

    def to_jsonl(self) -> str:
        lines = []
        for f in self.flags:
            row = f.to_dict()
            row["severity"] = self.severity(f.image_id)
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def summary_table(self) -> str:
        rows = [f"tuples audited: {self.n_tuples}", f"captions flagged: {len(self.flags)}",
                f"images flagged: {len(self.flagged_images)}"]
        sev = Counter(self.severity(i) for i in self.flagged_images)
        rows.append(f"images with all captions flagged: {sev.get('all', 0)}")
        rows.append("")
        rows.append(f"{'missing category':<20} {'flags':>6}")
        for name, n in self.per_class.items():
            rows.append(f"{name:<20} {n:>6}")
        return "\n".join(rows) + "\n"


def audit_dataset(tuples: Sequence[tuple[CaptionAnalysis, CaptionAnalysis, GroundTruthRecord]],
                  lexicon: ClassLexicon, use_super_category: bool = True,
                  tagger: Optional[Tagger] = None) -> AuditReport:
    """Audit every tuple; a caption seen in several tuples yields one merged flag."""
    report = AuditReport(n_tuples=len(tuples))
    seen = defaultdict(set)
    merged: dict = {}
    for bg, syn, gt in tuples:
        key = (gt.image_id, gt.caption_id if gt.caption_id is not None else gt.caption)
        seen[gt.image_id].add(key[1])
        flag = audit_label(bg, syn, gt, lexicon, use_super_category, tagger)
        if flag is None:
            continue
        prev = merged.get(key)
        if prev is not None:
            flag = LabelFlag(flag.image_id, flag.caption, flag.caption_id, prev.missing | flag.missing,
                             prev.invariant | flag.invariant, flag.ground_truth)
        merged[key] = flag
    report.flags = list(merged.values())
    report.captions_per_image = {k: len(v) for k, v in seen.items()}
    return report


def load_coco_captions(path) -> dict[str, list[GroundTruthRecord]]:
    """``image id -> ground-truth records`` from a COCO captions JSON file."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    out: dict[str, list[GroundTruthRecord]] = defaultdict(list)
    for ann in data.get("annotations", []):
        if not str(ann.get("caption", "")).strip():
            continue
        out[str(ann["image_id"])].append(GroundTruthRecord(
            image_id=str(ann["image_id"]), caption=ann["caption"],
            caption_id=str(ann["id"]) if "id" in ann else None))
    return dict(out)

"""Metamorphic relations over caption pairs and suspicious-issue records.

MR1 (class set): the synthesized caption must mention exactly the
background caption's classes plus the inserted one.

MR2 (number): classes shared by both captions keep their singular/plural
form; the inserted class must appear singular if it was new, plural if
the background already had it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .analysis import EXEMPT, PLURAL, SINGULAR, CaptionAnalysis
from .exceptions import InputError, ParseError

EXTRA_CLASS = "extra_class"
MISSING_CLASS = "missing_class"
MISSING_INSERTED = "missing_inserted"
FORM_CHANGED = "form_changed"
INSERTED_WRONG_FORM = "inserted_wrong_form"

MR1_KINDS = frozenset({EXTRA_CLASS, MISSING_CLASS, MISSING_INSERTED})
MR2_KINDS = frozenset({FORM_CHANGED, INSERTED_WRONG_FORM})

CLASSIFICATION = "classification"
RECOGNITION = "recognition"
SINGULAR_PLURAL = "singular_plural"

ISSUE_SCHEMA = "issue/1"


@dataclass(frozen=True)
class Violation:
    kind: str
    class_name: str
    expected: Optional[str] = None
    observed: Optional[str] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "class": self.class_name,
                "expected": self.expected, "observed": self.observed}


@dataclass(frozen=True)
class MRVerdict:
    details: tuple[Violation, ...] = ()

    @property
    def mr1_violated(self) -> bool:
        return any(v.kind in MR1_KINDS for v in self.details)

    @property
    def mr2_violated(self) -> bool:
        return any(v.kind in MR2_KINDS for v in self.details)

    @property
    def violated(self) -> bool:
        return bool(self.details)

    def kinds(self) -> set:
        return {v.kind for v in self.details}

    def to_dict(self) -> dict:
        return {"mr1_violated": self.mr1_violated, "mr2_violated": self.mr2_violated,
                "details": [v.to_dict() for v in self.details]}


def check_mr1(bg: CaptionAnalysis, syn: CaptionAnalysis, inserted: str,
              relaxed: bool = False) -> list[Violation]:
    """Differences between ``Set(syn)`` and ``Set(bg) | {inserted}``.

    ``relaxed`` ignores classes that appear only in the synthesized caption.
    """
    bg_set, syn_set = bg.classes, syn.classes
    out = []
    if inserted not in syn_set:
        out.append(Violation(MISSING_INSERTED, inserted, "present", "absent"))
    for c in sorted(bg_set - syn_set - {inserted}):
        out.append(Violation(MISSING_CLASS, c, "present", "absent"))
    if not relaxed:
        for c in sorted(syn_set - bg_set - {inserted}):
            out.append(Violation(EXTRA_CLASS, c, "absent", "present"))
    return out


def check_mr2(bg: CaptionAnalysis, syn: CaptionAnalysis, inserted: str) -> list[Violation]:
    """Singular/plural consistency between the two captions.

    Exempt (pluralia tantum) forms never violate. The inserted class is only
    checked when the synthesized caption mentions it; its absence is MR1's
    business.
    """
    out = []
    common = (bg.classes & syn.classes) - {inserted}
    for c in sorted(common):
        fb, fs = bg.mentions[c], syn.mentions[c]
        if EXEMPT in (fb, fs):
            continue
        if fb != fs:
            out.append(Violation(FORM_CHANGED, c, fb, fs))
    if inserted in syn.classes:
        expected = PLURAL if inserted in bg.classes else SINGULAR
        observed = syn.mentions[inserted]
        if observed != EXEMPT and bg.mentions.get(inserted) != EXEMPT and observed != expected:
            out.append(Violation(INSERTED_WRONG_FORM, inserted, expected, observed))
    return out


def evaluate(bg: CaptionAnalysis, syn: CaptionAnalysis, inserted: str, relaxed: bool = False,
             use_mr2: bool = True) -> MRVerdict:
    details = check_mr1(bg, syn, inserted, relaxed=relaxed)
    if use_mr2:
        details += check_mr2(bg, syn, inserted)
    return MRVerdict(tuple(details))


def normalize_for_baseline(caption: str) -> str:
    return " ".join("".join(ch if ch.isalnum() else " " for ch in caption.lower()).split())


def check_baseline(orig_caption: str, transformed_caption: str) -> bool:
    """Same-caption relation: suspicious iff the normalised captions differ."""
    return normalize_for_baseline(orig_caption) != normalize_for_baseline(transformed_caption)


def categorize(verdict: MRVerdict) -> frozenset:
    """Heuristic error-category hints for a violated verdict.

    A wrong class in place of an expected one suggests a classification
    error, an omission a recognition error, and form-only violations a
    singular/plural error. These are hints for triage, not ground truth.
    """
    kinds = verdict.kinds()
    hints = set()
    missing = bool(kinds & {MISSING_CLASS, MISSING_INSERTED})
    if EXTRA_CLASS in kinds:
        hints.add(CLASSIFICATION)
    elif missing:
        hints.add(RECOGNITION)
    if kinds & MR2_KINDS:
        hints.add(SINGULAR_PLURAL)
    return frozenset(hints)


@dataclass
class SuspiciousIssue:
    id: str
    background_id: str
    synthesized_id: str
    interval_index: int
    background_caption: str
    synthesized_caption: str
    inserted_class: str
    verdict: MRVerdict
    category_hints: frozenset = frozenset()
    conflicts: tuple = ()
    human_label: Optional[dict] = None
    provider_id: str = ""

    def to_dict(self) -> dict:
        return {
            "schema": ISSUE_SCHEMA,
            "id": self.id,
            "provider": self.provider_id,
            "background": self.background_id,
            "synthesized": self.synthesized_id,
            "interval": self.interval_index,
            "captions": {"background": self.background_caption,
                         "synthesized": self.synthesized_caption},
            "inserted_class": self.inserted_class,
            "verdict": self.verdict.to_dict(),
            "category_hints": sorted(self.category_hints),
            "conflicts": list(self.conflicts),
            "human_label": self.human_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuspiciousIssue":
        verdict = MRVerdict(tuple(Violation(v["kind"], v["class"], v.get("expected"), v.get("observed"))
                                  for v in d["verdict"]["details"]))
        return cls(id=d["id"], background_id=d["background"], synthesized_id=d["synthesized"],
                   interval_index=int(d["interval"]),
                   background_caption=d["captions"]["background"],
                   synthesized_caption=d["captions"]["synthesized"],
                   inserted_class=d["inserted_class"], verdict=verdict,
                   category_hints=frozenset(d.get("category_hints", ())),
                   conflicts=tuple(d.get("conflicts", ())), human_label=d.get("human_label"),
                   provider_id=d.get("provider", ""))


def make_issue(issue_id: str, background_id: str, synthesized_id: str, interval_index: int,
               bg: CaptionAnalysis, syn: CaptionAnalysis, inserted: str, relaxed: bool = False,
               provider_id: str = "") -> Optional[SuspiciousIssue]:
    """Evaluate both relations and return an issue, or ``None`` if none is violated."""
    verdict = evaluate(bg, syn, inserted, relaxed=relaxed)
    if not verdict.violated:
        return None
    return SuspiciousIssue(
        id=issue_id, background_id=background_id, synthesized_id=synthesized_id,
        interval_index=interval_index, background_caption=bg.caption,
        synthesized_caption=syn.caption, inserted_class=inserted, verdict=verdict,
        category_hints=categorize(verdict),
        conflicts=tuple(sorted(bg.conflicts | syn.conflicts)), provider_id=provider_id)


def write_issues(issues: Iterable[SuspiciousIssue], path) -> int:
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for issue in issues:
            fh.write(json.dumps(issue.to_dict(), sort_keys=True) + "\n")
            n += 1
    return n


def read_issues(path) -> list[SuspiciousIssue]:
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError as exc:
        raise InputError(f"issues file not found: {path}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(SuspiciousIssue.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc!r}") from exc
    return out

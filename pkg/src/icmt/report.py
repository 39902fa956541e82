"""Precision against human labels, per-interval run summaries and rendering."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .exceptions import ParseError, UnknownIssueId, UnlabeledIssues
from .oracle import SuspiciousIssue, read_issues, write_issues

logger = logging.getLogger(__name__)


def _is_error(issue: SuspiciousIssue) -> Optional[bool]:
    if issue.human_label is None or "error" not in issue.human_label:
        return None
    return bool(issue.human_label["error"])


def precision_fraction(issues: Sequence[SuspiciousIssue], partial: bool = False) -> Fraction:
    """Exact share of issues confirmed erroneous.

    Raises :class:`UnlabeledIssues` if any issue lacks a label, unless
    ``partial`` restricts the computation to the labelled subset.
    """
    labels = [(i.id, _is_error(i)) for i in issues]
    missing = [iid for iid, lab in labels if lab is None]
    if missing and not partial:
        raise UnlabeledIssues(missing)
    labeled = [lab for _, lab in labels if lab is not None]
    if not labeled:
        return Fraction(0)
    return Fraction(sum(labeled), len(labeled))


def precision(issues: Sequence[SuspiciousIssue], partial: bool = False) -> float:
    return float(precision_fraction(issues, partial))


@dataclass
class IntervalCounts:
    pairs: int = 0
    suspicious: int = 0
    labeled: int = 0
    erroneous: int = 0

    @property
    def precision(self) -> Optional[float]:
        return self.erroneous / self.labeled if self.labeled else None


@dataclass
class RunSummary:
    provider_id: str
    intervals: dict = field(default_factory=dict)  # index -> IntervalCounts
    categories: dict = field(default_factory=dict)
    partial: bool = False

    def __post_init__(self):
        for c in self.intervals.values():
            if not (c.erroneous <= c.labeled <= c.suspicious <= c.pairs):
                raise ValueError(f"inconsistent counts {c}")

    @property
    def totals(self) -> IntervalCounts:
        t = IntervalCounts()
        for c in self.intervals.values():
            t.pairs += c.pairs
            t.suspicious += c.suspicious
            t.labeled += c.labeled
            t.erroneous += c.erroneous
        return t

    @property
    def overall_precision(self) -> Optional[float]:
        return self.totals.precision

    def to_dict(self) -> dict:
        return {
            "provider": self.provider_id,
            "partial": self.partial,
            "intervals": {str(k): asdict(v) for k, v in sorted(self.intervals.items())},
            "categories": dict(sorted(self.categories.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        return cls(provider_id=d["provider"],
                   intervals={int(k): IntervalCounts(**v) for k, v in d["intervals"].items()},
                   categories=dict(d.get("categories", {})), partial=bool(d.get("partial", False)))


def summarize(issues: Iterable[SuspiciousIssue], pairs_per_interval: dict, provider_id: str = "",
              partial: bool = False) -> RunSummary:
    """Aggregate issues per interval; with ``partial`` unlabeled issues are tolerated."""
    issues = list(issues)
    if not partial:
        unlabeled = [i.id for i in issues if _is_error(i) is None]
        if unlabeled and any(i.human_label is not None for i in issues):
            raise UnlabeledIssues(unlabeled)
    intervals = {int(k): IntervalCounts(pairs=int(v)) for k, v in pairs_per_interval.items()}
    cats = Counter()
    for issue in issues:
        c = intervals.setdefault(issue.interval_index, IntervalCounts())
        c.suspicious += 1
        label = _is_error(issue)
        if label is not None:
            c.labeled += 1
            c.erroneous += int(label)
        for hint in issue.category_hints:
            cats[hint] += 1
    for c in intervals.values():
        c.pairs = max(c.pairs, c.suspicious)
    return RunSummary(provider_id, intervals, dict(cats), partial)


def _fmt(p: Optional[float]) -> str:
    return "-" if p is None else f"{p:.3f}"


def render_report(summary: RunSummary, fmt: str = "text") -> str:
    """Deterministic rendering with one row per interval (``ratio_<i>``)."""
    if fmt == "json":
        return json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n"
    header = ["interval", "pairs", "suspicious", "labeled", "erroneous", "precision"]
    rows = []
    for idx, c in sorted(summary.intervals.items()):
        rows.append([f"ratio_{idx}", str(c.pairs), str(c.suspicious), str(c.labeled),
                     str(c.erroneous), _fmt(c.precision)])
    if rows:
        t = summary.totals
        rows.append(["overall", str(t.pairs), str(t.suspicious), str(t.labeled), str(t.erroneous),
                     _fmt(t.precision)])
    lines = []
    if fmt == "markdown":
        lines.append(f"# Run summary: {summary.provider_id}")
        lines.append("")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join(["---"] * len(header)) + "|")
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        if summary.categories:
            lines += ["", "| category | issues |", "|---|---|"]
            lines += [f"| {k} | {v} |" for k, v in sorted(summary.categories.items())]
    elif fmt == "text":
        lines.append(f"provider: {summary.provider_id}")
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
        if summary.categories:
            lines.append("")
            lines += [f"{k}: {v}" for k, v in sorted(summary.categories.items())]
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if summary.partial:
        lines.append("")
        lines.append("note: precision computed over the labeled subset only (--partial)")
    return "\n".join(lines) + "\n"


def read_labels(path) -> dict:
    """``issue id -> {error, notes}`` from a JSONL labels file; later lines win."""
    labels: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                iid, err = str(row["id"]), bool(row["error"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc!r}") from exc
            if iid in labels:
                logger.warning("duplicate label for issue %s (line %d); keeping the later one", iid, lineno)
            labels[iid] = {"error": err, "notes": row.get("notes", "")}
    return labels


def merge_labels(issues: Sequence[SuspiciousIssue], labels: dict, strict: bool = True):
    """Attach labels to issues. Returns ``(issues, unmatched_label_ids)``."""
    known = {i.id for i in issues}
    unmatched = sorted(k for k in labels if k not in known)
    if unmatched and strict:
        raise UnknownIssueId(unmatched)
    for issue in issues:
        if issue.id in labels:
            issue.human_label = dict(labels[issue.id])
    return list(issues), unmatched


def label_issues(issue_file, labels_file, out_file=None, strict: bool = True):
    """Merge a labels file into an issues file (in place unless ``out_file``)."""
    issues = read_issues(issue_file)
    merged, unmatched = merge_labels(issues, read_labels(labels_file), strict=strict)
    if unmatched:
        logger.warning("%d label(s) match no issue: %s", len(unmatched), ", ".join(unmatched[:10]))
    write_issues(merged, out_file or issue_file)
    return merged, unmatched

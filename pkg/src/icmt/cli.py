"""Command-line driver.

Exit codes: 0 success, 1 relation violations found (``check``), 2 input
error, 3 provider or authentication error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import AuthError, ICMTError, InputError, PlacementError, ProviderError, UnlabeledIssues
from .insertion import ResizeParams, TuningParams

EXIT_OK, EXIT_VIOLATIONS, EXIT_INPUT, EXIT_PROVIDER = 0, 1, 2, 3

logger = logging.getLogger("icmt")


def _cmd_pool_build(args) -> int:
    from .pipeline import run_pool_build
    classes = [c.strip() for c in args.classes.split(",")] if args.classes else None
    stats = run_pool_build(args.annotations, args.images, args.out, classes=classes,
                           provenance=args.provenance)
    print(f"pool: {stats['objects']} objects in {stats['classes']} classes, "
          f"{stats['backgrounds']} backgrounds -> {args.out}")
    return EXIT_OK


def _cmd_synthesize(args) -> int:
    from .pipeline import run_synthesize
    tuning = TuningParams(n=args.n, ratio_max=args.ratio_max, c1=args.c1, c2=args.c2)
    stats = run_synthesize(args.pool, args.out, pairs=args.pairs, seed=args.seed,
                           backgrounds=args.backgrounds, tuning=tuning, resize=ResizeParams(),
                           feather=args.feather, baseline=args.baseline)
    print(f"synthesized {stats['images']} images from {stats['pairs']} pairs "
          f"({stats['backgrounds']} backgrounds, {stats['resampled']} draws resampled)")
    if args.baseline:
        print(f"baseline images: {stats['baseline']}")
    return EXIT_OK


def _cmd_caption(args) -> int:
    from .pipeline import run_caption
    if not args.provider:
        raise InputError("--provider is required")
    stats = run_caption(args.synth, args.provider, args.cache, jobs=args.jobs)
    extra = f", {stats['requests']} requests" if "requests" in stats else ""
    print(f"captioned {stats['images']} images ({stats['cached']} from cache{extra})")
    return EXIT_OK


def _provider_id(args) -> str:
    if args.provider_id:
        return args.provider_id
    if args.provider:
        from .providers import ProviderConfig
        return ProviderConfig.load(args.provider).id
    raise InputError("--provider or --provider-id is required")


def _cmd_check(args) -> int:
    from .pipeline import run_check
    stats = run_check(args.synth, args.cache, _provider_id(args), args.issues, lexicon=args.lexicon,
                      relaxed=args.relaxed, baseline=args.baseline)
    print(f"checked {stats['checked']} pairs, {stats['issues']} suspicious issue(s) -> {args.issues}")
    return EXIT_VIOLATIONS if stats["issues"] else EXIT_OK


def _cmd_audit(args) -> int:
    from .pipeline import run_audit
    report = run_audit(args.gt, args.synth, args.cache, _provider_id(args), args.out,
                       lexicon=args.lexicon, use_super_category=not args.no_super_category)
    sys.stdout.write(report.summary_table())
    return EXIT_OK


def _report_provider(args, issues) -> str:
    if args.provider_id:
        return args.provider_id
    return issues[0].provider_id if issues else ""


def _cmd_eval(args) -> int:
    from .oracle import read_issues
    from .report import label_issues, precision_fraction, render_report, summarize
    from .pipeline import load_pairs, pairs_per_interval
    if args.labels:
        issues, unmatched = label_issues(args.issues, args.labels, out_file=args.out,
                                         strict=not args.allow_unknown)
    else:
        issues = read_issues(args.issues)
    p = precision_fraction(issues, partial=args.partial)
    counts = {}
    if args.synth:
        counts = pairs_per_interval(load_pairs(args.synth), baseline=args.baseline)
    summary = summarize(issues, counts, provider_id=_report_provider(args, issues), partial=args.partial)
    text = render_report(summary, args.format)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"precision: {p.numerator}/{p.denominator} = {float(p):.4f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .oracle import read_issues
    from .pipeline import load_pairs, pairs_per_interval
    from .report import render_report, summarize
    issues = read_issues(args.issues)
    counts = pairs_per_interval(load_pairs(args.synth), baseline=args.baseline) if args.synth else {}
    summary = summarize(issues, counts, provider_id=_report_provider(args, issues), partial=True)
    summary.partial = args.partial
    text = render_report(summary, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icmt", description="Metamorphic testing for image captioning.")
    parser.add_argument("--config", help="JSON or TOML file with option defaults")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=4, help="max concurrent provider requests")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    pool = sub.add_parser("pool", help="object pool management")
    pool_sub = pool.add_subparsers(dest="pool_command", required=True)
    pb = pool_sub.add_parser("build", help="build the object pool and background index")
    pb.add_argument("--annotations", required=True, help="COCO instances JSON")
    pb.add_argument("--images", required=True, help="directory with the annotated images")
    pb.add_argument("--out", default="pool")
    pb.add_argument("--classes", help="comma-separated class names to keep")
    pb.add_argument("--provenance", default="ground_truth", choices=["ground_truth", "detector"])
    pb.set_defaults(func=_cmd_pool_build)

    sy = sub.add_parser("synthesize", help="insert pool objects into backgrounds")
    sy.add_argument("--pool", default="pool")
    sy.add_argument("--backgrounds", help="backgrounds index (default: <pool>/backgrounds.json)")
    sy.add_argument("--out", default="out")
    sy.add_argument("--pairs", type=int, default=10)
    sy.add_argument("--n", type=int, default=4, help="number of overlap intervals")
    sy.add_argument("--ratio-max", dest="ratio_max", type=float, default=0.45)
    sy.add_argument("--c1", type=int, default=50)
    sy.add_argument("--c2", type=int, default=8)
    sy.add_argument("--feather", action="store_true", help="1-px alpha feather instead of hard paste")
    sy.add_argument("--baseline", action="store_true", help="also write blur/brightness/contrast/shear images")
    sy.set_defaults(func=_cmd_synthesize)

    ca = sub.add_parser("caption", help="collect captions for a synthesis run")
    ca.add_argument("--synth", default="out")
    ca.add_argument("--provider", help="provider config (JSON or TOML)")
    ca.add_argument("--cache", default="captions")
    ca.set_defaults(func=_cmd_caption)

    ch = sub.add_parser("check", help="evaluate the metamorphic relations")
    ch.add_argument("--synth", default="out")
    ch.add_argument("--cache", default="captions")
    ch.add_argument("--provider")
    ch.add_argument("--provider-id", dest="provider_id")
    ch.add_argument("--lexicon")
    ch.add_argument("--issues", default="issues.jsonl")
    ch.add_argument("--relaxed", action="store_true", help="ignore extra classes in MR1")
    ch.add_argument("--baseline", action="store_true", help="same-caption relation on baseline images")
    ch.set_defaults(func=_cmd_check)

    au = sub.add_parser("audit", help="flag suspicious ground-truth captions")
    au.add_argument("--gt", required=True, help="COCO captions JSON")
    au.add_argument("--synth", default="out")
    au.add_argument("--cache", default="captions")
    au.add_argument("--provider")
    au.add_argument("--provider-id", dest="provider_id")
    au.add_argument("--lexicon")
    au.add_argument("--out", default="audit_report.jsonl")
    au.add_argument("--no-super-category", dest="no_super_category", action="store_true")
    au.set_defaults(func=_cmd_audit)

    ev = sub.add_parser("eval", help="merge human labels and compute precision")
    ev.add_argument("--issues", required=True)
    ev.add_argument("--labels")
    ev.add_argument("--out", help="merged issues file (default: update --issues in place)")
    ev.add_argument("--synth", help="synthesis dir, for per-interval pair counts")
    ev.add_argument("--provider-id", dest="provider_id")
    ev.add_argument("--partial", action="store_true", help="allow unlabeled issues")
    ev.add_argument("--allow-unknown", dest="allow_unknown", action="store_true")
    ev.add_argument("--baseline", action="store_true")
    ev.add_argument("--format", choices=["text", "json", "markdown"], default="text")
    ev.add_argument("--report", help="write the report here instead of stdout")
    ev.set_defaults(func=_cmd_eval)

    rp = sub.add_parser("report", help="render a run summary")
    rp.add_argument("--issues", required=True)
    rp.add_argument("--synth")
    rp.add_argument("--provider-id", dest="provider_id")
    rp.add_argument("--partial", action="store_true")
    rp.add_argument("--baseline", action="store_true")
    rp.add_argument("--format", choices=["text", "json", "markdown"], default="text")
    rp.add_argument("--out")
    rp.set_defaults(func=_cmd_report)
    return parser


# Subcommand-specific meaning of the shared config keys.
_CONFIG_ROUTES = {
    "build": {"pool": "out"},
    "synthesize": {"pool": "pool", "backgrounds": "backgrounds", "out": "out", "n": "n",
                   "ratio_max": "ratio_max", "c1": "c1", "c2": "c2"},
    "caption": {"out": "synth", "cache": "cache", "provider": "provider"},
    "check": {"out": "synth", "cache": "cache", "provider": "provider", "lexicon": "lexicon"},
    "audit": {"out": "synth", "cache": "cache", "provider": "provider", "lexicon": "lexicon"},
    "eval": {"out": "synth"},
    "report": {"out": "synth"},
}


def _apply_config(parser: argparse.ArgumentParser, cfg: dict) -> None:
    parser.set_defaults(**{k: cfg[k] for k in ("seed", "jobs") if cfg.get(k) is not None})
    stack = [parser]
    while stack:
        p = stack.pop()
        for a in p._actions:
            if not isinstance(a, argparse._SubParsersAction):
                continue
            for name, child in a.choices.items():
                routes = _CONFIG_ROUTES.get(name, {})
                child.set_defaults(**{dest: cfg[key] for key, dest in routes.items()
                                      if cfg.get(key) is not None})
                stack.append(child)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    try:
        cfg_path = pre.parse_known_args(argv)[0].config
        if cfg_path:
            from .pipeline import PipelineConfig
            _apply_config(parser, PipelineConfig.load(cfg_path).as_defaults())
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except AuthError as exc:
        print(f"error: authentication failed: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except ProviderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (InputError, UnlabeledIssues, PlacementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ICMTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Metamorphic testing of image-captioning systems by object insertion."""
from .analysis import CaptionAnalysis, ClassLexicon, analyze
from .audit import AuditReport, GroundTruthRecord, audit_dataset, audit_label
from .exceptions import ICMTError, InputError, PlacementError, ProviderError
from .geometry import BackgroundImage, BackgroundObject, ObjectClass, ObjectInstance, RatioInterval, Rect
from .insertion import (ResizeParams, TuningParams, background_size_score, check_rules, composite,
                        compute_intervals, new_size, resize_object, synthesize, tune_locations)
from .oracle import MRVerdict, SuspiciousIssue, check_baseline, check_mr1, check_mr2, evaluate
from .providers import CaptionCache, CaptionRequest, MockProvider, caption, caption_batch
from .report import precision, render_report, summarize

__version__ = "0.1.0"

"""Estimator-style wrappers over the functional core.

Only the stateless parts of the pipeline fit this shape: the estimators
hold hyper-parameters, ``fit`` validates them (and, for the analyzer,
loads the lexicon), and ``transform``/``predict`` delegate to the plain
functions.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import CaptionAnalysis, ClassLexicon, analyze
from .audit import GroundTruthRecord, audit_label
from .geometry import BackgroundImage, ObjectInstance
from .insertion import ResizeParams, TuningParams, synthesize
from .oracle import MRVerdict, evaluate


def check_image(img, channels: int = 3, name: str = "image") -> np.ndarray:
    """Return ``img`` as an ``(h, w, channels)`` uint8 array or raise ``ValueError``."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise ValueError(f"{name} must be uint8, got {arr.dtype}")
    if arr.ndim != 3 or arr.shape[2] != channels:
        raise ValueError(f"{name} must have shape (h, w, {channels}), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} is empty")
    return arr


def check_captions(X, name: str = "X") -> list[str]:
    """Validate a 1-d sequence of non-empty caption strings."""
    if isinstance(X, str):
        raise ValueError(f"{name} must be a sequence of captions, not a single string")
    out = list(X)
    for i, c in enumerate(out):
        if not isinstance(c, str):
            raise ValueError(f"{name}[{i}] is {type(c).__name__}, expected str")
    return out


def check_pairs(X, name: str = "X") -> list[tuple]:
    """Validate a sequence of equal-length tuples."""
    out = [tuple(row) for row in X]
    if out and len({len(r) for r in out}) != 1:
        raise ValueError(f"{name} rows have inconsistent lengths")
    return out


class CaptionAnalyzer(BaseEstimator, TransformerMixin):
    """Map captions to :class:`CaptionAnalysis` objects.

    Args:
        lexicon_path: Lexicon JSON file; the bundled COCO lexicon when None.
        tagger: Optional external tagger with a ``tag(caption)`` method.
    """

    def __init__(self, lexicon_path: Optional[str] = None, tagger=None):
        self.lexicon_path = lexicon_path
        self.tagger = tagger

    def fit(self, X=None, y=None):
        self.lexicon_ = ClassLexicon.load(self.lexicon_path)
        return self

    def transform(self, X) -> list[CaptionAnalysis]:
        check_is_fitted(self, "lexicon_")
        return [analyze(c, self.lexicon_, self.tagger) for c in check_captions(X)]


class ObjectInserter(BaseEstimator):
    """Synthesize one image per overlap interval for ``(background, object)`` pairs."""

    def __init__(self, n: int = 4, ratio_max: float = 0.45, c1: int = 50, c2: int = 8,
                 feather: bool = False, random_state: int = 0):
        self.n = n
        self.ratio_max = ratio_max
        self.c1 = c1
        self.c2 = c2
        self.feather = feather
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.tuning_ = TuningParams(self.n, self.ratio_max, self.c1, self.c2, int(self.random_state))
        self.resize_ = ResizeParams()
        return self

    def transform(self, X):
        """Return ``[(plan, images), ...]``; placement failures propagate."""
        check_is_fitted(self, "tuning_")
        out = []
        for b, obj in check_pairs(X):
            if not isinstance(b, BackgroundImage) or not isinstance(obj, ObjectInstance):
                raise ValueError("expected (BackgroundImage, ObjectInstance) pairs")
            check_image(b.pixels, 3, name=f"background {b.id}")
            out.append(synthesize(b, obj, self.tuning_, self.resize_, feather=self.feather))
        return out


class MRDetector(BaseEstimator):
    """Predict whether ``(bg_analysis, syn_analysis, inserted_class)`` violates a relation."""

    def __init__(self, relaxed: bool = False):
        self.relaxed = relaxed

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def verdicts(self, X) -> list[MRVerdict]:
        check_is_fitted(self, "fitted_")
        return [evaluate(bg, syn, ins, relaxed=self.relaxed) for bg, syn, ins in check_pairs(X)]

    def predict(self, X) -> np.ndarray:
        return np.array([v.violated for v in self.verdicts(X)], dtype=bool)


class LabelAuditor(BaseEstimator):
    """Predict whether a ground-truth caption omits an invariant class."""

    def __init__(self, lexicon_path: Optional[str] = None, use_super_category: bool = True):
        self.lexicon_path = lexicon_path
        self.use_super_category = use_super_category

    def fit(self, X=None, y=None):
        self.lexicon_ = ClassLexicon.load(self.lexicon_path)
        return self

    def predict(self, X: Sequence[tuple[CaptionAnalysis, CaptionAnalysis, GroundTruthRecord]]) -> np.ndarray:
        check_is_fitted(self, "lexicon_")
        return np.array([audit_label(bg, syn, gt, self.lexicon_, self.use_super_category) is not None
                         for bg, syn, gt in check_pairs(X)], dtype=bool)

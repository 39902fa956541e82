import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from _synth import random_background, random_object
from icmt.audit import GroundTruthRecord
from icmt.estimators import (CaptionAnalyzer, LabelAuditor, MRDetector, ObjectInserter, check_captions,
                             check_image)
from icmt.exceptions import PlacementError


def test_get_params_and_clone():
    est = ObjectInserter(n=3, ratio_max=0.3, random_state=4)
    assert est.get_params()["n"] == 3
    assert clone(est).get_params() == est.get_params()
    assert est.set_params(c2=12).c2 == 12


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CaptionAnalyzer().transform(["a dog"])


def test_analyzer_then_detector():
    an = CaptionAnalyzer().fit()
    bg, syn = an.transform(["a man and a horse", "a man and a horse and a cow"])
    bad = an.transform(["a man and two horses"])[0]
    det = MRDetector().fit()
    assert det.predict([(bg, syn, "cow"), (bg, bad, "cow")]).tolist() == [False, True]


def test_analyzer_in_pipeline():
    pipe = make_pipeline(CaptionAnalyzer())
    out = pipe.fit_transform(["two dogs"])
    assert out[0].mentions == {"dog": "plural"}


def test_auditor():
    an = CaptionAnalyzer().fit()
    bg, syn = an.transform(["a man riding a horse", "a man riding a horse near a dog"])
    X = [(bg, syn, GroundTruthRecord("1", "a horse in a field")),
         (bg, syn, GroundTruthRecord("1", "a person on a horse"))]
    assert LabelAuditor().fit().predict(X).tolist() == [True, False]


def test_inserter_transform():
    rng = np.random.default_rng(3)
    est = ObjectInserter(random_state=0).fit()
    for _ in range(40):
        b = random_background(rng, n_objects=2, width=200, height=200, pixels=True)
        try:
            (plan, images), = est.transform([(b, random_object(rng))])
        except PlacementError:
            continue
        assert len(images) == 4
        return
    pytest.fail("no feasible pair")


@pytest.mark.parametrize("bad", [np.zeros((4, 4), np.uint8), np.zeros((4, 4, 3), np.float32),
                                 np.zeros((0, 4, 3), np.uint8)])
def test_check_image_rejects(bad):
    with pytest.raises(ValueError):
        check_image(bad)


def test_check_captions():
    with pytest.raises(ValueError):
        check_captions("a dog")
    with pytest.raises(ValueError):
        check_captions(["a dog", 3])

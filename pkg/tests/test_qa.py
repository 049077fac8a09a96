from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepqa.errors import CoverageError, InvalidArgument, ParseError
from sweepqa.perturb import apply_plan, flip_horizontal, reverse, truncate_resample
from sweepqa.qa import (
    DetectorParams,
    DetectorReport,
    covered_span,
    detect_corpus,
    detect_flip,
    detect_incomplete,
    detect_reversal,
    load_external_detections,
    logistic,
    never_detections,
    perfect_detections,
    run_detectors,
    write_detections,
)
from sweepqa.sweep import PerturbationPlan, Sweep, SweepTag

from conftest import random_sweep, small_sweep

P64 = DetectorParams(marker_size=8)


@given(st.floats(-800, 800, allow_nan=False))
def test_logistic_symmetry(z):
    assert logistic(z) + logistic(-z) == 1.0
    assert 0.0 <= logistic(z) <= 1.0


def test_logistic_values():
    assert logistic(0.0) == 0.5
    assert math.isclose(logistic(2.0), 1 / (1 + math.exp(-2)))


def test_params_validation():
    with pytest.raises(InvalidArgument):
        DetectorParams(thresholds=(0.5, 0.5))
    with pytest.raises(InvalidArgument):
        DetectorParams(span_softness=0)


@st.composite
def any_sweep(draw):
    return random_sweep(np.random.default_rng(draw(st.integers(0, 2**32))), t=draw(st.integers(2, 12)))


@given(any_sweep())
@settings(max_examples=150, deadline=None)
def test_equivariance_on_arbitrary_sweeps(s):
    assert detect_reversal(reverse(s)).score + detect_reversal(s).score == 1.0
    assert detect_flip(flip_horizontal(s)).score + detect_flip(s).score == 1.0
    base = detect_incomplete(s).score
    assert detect_incomplete(reverse(s)).score == base
    assert detect_incomplete(flip_horizontal(s)).score == base


@pytest.mark.parametrize("sigma", [0.0, 4.0])
def test_equivariance_on_synthetic_sweeps(sigma):
    for tag in SweepTag:
        s = small_sweep(tag, seed=int(tag), sigma=sigma)
        assert detect_reversal(reverse(s), P64).score + detect_reversal(s, P64).score == 1.0
        assert detect_flip(flip_horizontal(s), P64).score + detect_flip(s, P64).score == 1.0
        assert detect_incomplete(reverse(s), P64).score == detect_incomplete(s, P64).score


@pytest.mark.parametrize("sigma", [0.0, 4.0])
def test_reference_examples(sigma):
    s = small_sweep(SweepTag.C3, sigma=sigma)
    clean = run_detectors(s, P64)
    assert clean.scores[0] < 0.5 and clean.scores[1] < 0.5 and clean.scores[2] < 0.5
    assert not clean.any_flag and not clean.reacquire
    assert detect_reversal(reverse(s), P64).score > 0.5
    assert detect_flip(flip_horizontal(s), P64).score > 0.5
    trunc = truncate_resample(s, 8, 16)
    assert detect_incomplete(trunc, P64).score > 0.5
    assert abs(covered_span(trunc)[0] - 15 / 31) < 0.03
    assert detect_incomplete(reverse(trunc), P64).score > 0.5
    triple = apply_plan(s, PerturbationPlan(True, True, True, 0, 8))
    assert run_detectors(triple, P64).flags == (True, True, True)


def test_clean_span_is_near_full():
    span, ok = covered_span(small_sweep(sigma=0.0, size=224))
    assert ok and span > 0.9


def test_degenerate_inputs():
    flat = Sweep(np.full((4, 6, 6), 9, np.uint8), SweepTag.C1, "x")
    for det in (detect_reversal, detect_incomplete):
        d = det(flat)
        assert d.score == 0.5 and d.indeterminate
    dark = Sweep(np.zeros((4, 20, 20), np.uint8), SweepTag.C1, "x")
    assert detect_flip(dark).indeterminate and detect_flip(dark).score == 0.5
    rep = run_detectors(flat)
    assert rep.indeterminate and rep.reacquire
    with pytest.raises(InvalidArgument):
        detect_reversal(Sweep(np.zeros((1, 3, 3), np.uint8), SweepTag.C1, "x"))


def test_symmetric_frames_flip_score_half():
    f = np.tile(np.array([9, 1, 5, 1, 9], np.uint8), (3, 5, 1))
    d = detect_flip(Sweep(f, SweepTag.C1, "x"), DetectorParams(marker_size=2))
    assert d.score == 0.5 and not d.indeterminate


def test_thresholds_and_flags():
    r = DetectorReport(0.5, 0.49, 1.0)
    assert r.flags == (True, False, True)
    assert r.with_thresholds((1.1, 1.1, 1.1)).flags == (False, False, False)
    s = small_sweep(sigma=4.0)
    triple = apply_plan(s, PerturbationPlan(True, True, True, 0, 8))
    never = run_detectors(triple, DetectorParams(thresholds=(1.1, 1.1, 1.1), marker_size=8))
    assert not never.any_flag


def test_corpus_sources(small_corpus, tmp_path):
    _, pert = small_corpus
    keys = pert.keys("test")
    ref = detect_corpus(pert, P64)
    assert list(ref) == keys
    assert detect_corpus(pert, P64, workers=2) == ref
    perfect = perfect_detections(pert)
    for e, r in pert.refs("test"):
        plan = r.perturbation
        assert perfect[(e.patient_id, r.tag)].flags == (plan.reversed, plan.flipped, plan.incomplete)
        assert ref[(e.patient_id, r.tag)].flags == (plan.reversed, plan.flipped, plan.incomplete)
    assert not any(r.any_flag for r in never_detections(pert).values())

    path = tmp_path / "d.jsonl"
    write_detections(ref, path)
    back = load_external_detections(path, keys)
    assert back == ref
    write_detections(back, tmp_path / "d2.jsonl")
    assert path.read_bytes() == (tmp_path / "d2.jsonl").read_bytes()


def _rec(pid="P1", tag="C1", **scores):
    r = {"patient_id": pid, "tag": tag, "reversal": 0.1, "flip": 0.2, "incomplete": 0.3}
    r.update(scores)
    return json.dumps(r)


def test_external_detection_errors(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(_rec() + "\n" + _rec(tag="C2", flip=1.5) + "\n")
    with pytest.raises(ParseError) as e:
        load_external_detections(p)
    assert e.value.line == 2 and "flip" in str(e.value)
    p.write_text(_rec() + "\n" + _rec() + "\n")
    with pytest.raises(ParseError, match="duplicate"):
        load_external_detections(p)
    p.write_text(_rec(tag="Q") + "\n")
    with pytest.raises(ParseError, match="unknown tag"):
        load_external_detections(p)
    p.write_text(_rec() + "\n")
    with pytest.raises(CoverageError) as e:
        load_external_detections(p, [("P1", SweepTag.C1), ("P1", SweepTag.M)])
    assert e.value.missing == [("P1", "M")]
    assert "P1/M" in str(e.value)
    p.write_text('{"patient_id": "P1", "tag": "C1", "reversal": 0.1, "flip": 0.2}\n')
    with pytest.raises(ParseError, match="incomplete"):
        load_external_detections(p)

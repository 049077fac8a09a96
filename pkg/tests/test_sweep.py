from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepqa.errors import InvalidArgument
from sweepqa.sweep import (
    PerturbationPlan,
    PlacentaLabel,
    PresentationLabel,
    Study,
    Sweep,
    SweepTag,
    normalize_resolution,
    resize_spatial,
    subsample_temporal,
)

from conftest import small_sweep


def sweep_of(frames, mm=0.75):
    return Sweep(np.asarray(frames, dtype=np.uint8), SweepTag.C1, "p", mm)


def indexed(t, h=2, w=2):
    """Frame k is filled with the value k, so frame identity survives any selection."""
    return sweep_of(np.arange(t, dtype=np.uint8)[:, None, None] * np.ones((1, h, w), np.uint8))


def test_tag_order_and_mirror():
    assert [t.name for t in SweepTag] == ["C1", "C2", "C3", "L1", "M", "R1"]
    assert [t.mirror().name for t in SweepTag] == ["R1", "M", "L1", "C3", "C2", "C1"]


def test_labels():
    assert [p.value for p in PresentationLabel] == ["Cephalic", "NonCephalic"]
    assert [p.value for p in PlacentaLabel] == ["Anterior", "Posterior"]


def test_sweep_validation():
    with pytest.raises(InvalidArgument):
        sweep_of(np.zeros((0, 2, 2)))
    with pytest.raises(InvalidArgument):
        sweep_of(np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        Sweep(np.zeros((1, 2, 2), np.float32), SweepTag.C1, "p")
    with pytest.raises(InvalidArgument):
        sweep_of(np.zeros((1, 2, 2)), mm=0.0)
    with pytest.raises(InvalidArgument):
        sweep_of(np.zeros((1, 2, 2)), mm=-1.0)


def test_sweep_frames_are_read_only_copies():
    src = np.zeros((1, 2, 2), np.uint8)
    s = sweep_of(src)
    src[0, 0, 0] = 9
    assert s.frames[0, 0, 0] == 0
    with pytest.raises(ValueError):
        s.frames[0, 0, 0] = 1


def test_sweep_equality():
    a = indexed(3)
    assert a == indexed(3)
    assert a != indexed(4)
    assert a != a.with_frames(a.frames, mm_per_pixel=1.0)


@pytest.mark.parametrize(
    "t, target, want",
    [
        (64, 32, list(range(0, 64, 2))),
        (32, 32, list(range(32))),
        (3, 6, [0, 0, 1, 1, 2, 2]),
    ],
)
def test_subsample_examples(t, target, want):
    out = subsample_temporal(indexed(t), target)
    assert out.frames[:, 0, 0].tolist() == want


def test_subsample_identity_is_same_sweep():
    s = indexed(32)
    assert subsample_temporal(s, 32) == s


def test_subsample_rejects_bad_target():
    with pytest.raises(InvalidArgument):
        subsample_temporal(indexed(4), 0)


@given(st.integers(1, 200), st.integers(1, 200))
def test_subsample_index_map(t, target):
    out = subsample_temporal(indexed(t, 1, 1), target) if t <= 255 else None
    if out is None:
        return
    idx = out.frames[:, 0, 0].astype(int)
    assert len(idx) == target
    assert all(idx[i] == (i * t) // target for i in range(target))
    assert np.all(np.diff(idx) >= 0)


def test_resize_constant_frame():
    s = sweep_of(np.full((1, 100, 100), 37))
    out = resize_spatial(s, 224, 224)
    assert out.frames.shape == (1, 224, 224)
    assert np.all(out.frames == 37)


def test_resize_corner_alignment():
    s = sweep_of([[[0, 255], [0, 255]]])
    out = resize_spatial(s, 224, 224).frames[0]
    assert np.all(out[:, 0] == 0)
    assert np.all(out[:, -1] == 255)


def test_resize_rejects_zero():
    with pytest.raises(InvalidArgument):
        resize_spatial(indexed(1), 0, 4)


@given(st.integers(0, 255), st.integers(1, 40), st.integers(1, 40), st.integers(1, 40), st.integers(1, 40))
@settings(max_examples=50, deadline=None)
def test_resize_constant_property(v, h, w, oh, ow):
    out = resize_spatial(sweep_of(np.full((1, h, w), v)), oh, ow)
    assert np.all(out.frames == v)


def smooth_frame(rng, n):
    # a random plane plus a low-frequency ripple, kept inside [0, 255]
    y, x = np.mgrid[0:n, 0:n] / (n - 1)
    a, b, c = rng.uniform(-60, 60, 3)
    f = 128 + a * x + b * y + c * np.sin(np.pi * x) * np.cos(np.pi * y)
    return np.clip(np.floor(f + 0.5), 0, 255).astype(np.uint8)


def test_resize_round_trip_within_one_level():
    rng = np.random.default_rng(7)
    for _ in range(10):
        s = sweep_of(smooth_frame(rng, 448)[None])
        down = resize_spatial(s, 224, 224)
        again = resize_spatial(resize_spatial(down, 448, 448), 224, 224)
        assert np.abs(again.frames.astype(int) - down.frames.astype(int)).max() <= 1


def test_normalize_examples():
    same = sweep_of(np.full((2, 10, 10), 5), mm=0.75)
    assert normalize_resolution(same, 0.75) == same
    coarse = sweep_of(np.zeros((1, 112, 112)), mm=1.5)
    out = normalize_resolution(coarse, 0.75)
    assert out.frames.shape[1:] == (224, 224) and out.mm_per_pixel == 0.75
    fine = sweep_of(np.zeros((1, 448, 448)), mm=0.375)
    assert normalize_resolution(fine, 0.75).frames.shape[1:] == (224, 224)
    with pytest.raises(InvalidArgument):
        normalize_resolution(same, 0.0)


def test_normalize_idempotent():
    rng = np.random.default_rng(1)
    s = sweep_of(smooth_frame(rng, 150)[None], mm=1.1)
    once = normalize_resolution(s, 0.75)
    twice = normalize_resolution(once, 0.75)
    assert twice.frames.shape == once.frames.shape
    assert np.abs(twice.frames.astype(int) - once.frames.astype(int)).max() <= 1


def test_plan_invariants_and_dict():
    with pytest.raises(InvalidArgument):
        PerturbationPlan(incomplete=True, m=1)
    with pytest.raises(InvalidArgument):
        PerturbationPlan(reversed=True, m=1, n=8)
    p = PerturbationPlan(True, False, True, 3, 12)
    assert p.count == 2 and not p.is_empty
    assert PerturbationPlan.from_dict(p.to_dict()) == p
    with pytest.raises(InvalidArgument):
        PerturbationPlan.from_dict({"reversed": 1, "flipped": False, "incomplete": False, "m": None, "n": None})


def test_study_requires_all_tags():
    sweeps = {t: small_sweep(t, size=32) for t in SweepTag}
    st_ = Study("p", sweeps, PresentationLabel.CEPHALIC, PlacentaLabel.ANTERIOR, "test")
    assert set(st_.sweeps) == set(SweepTag)
    del sweeps[SweepTag.M]
    with pytest.raises(InvalidArgument):
        Study("p", sweeps, PresentationLabel.CEPHALIC, PlacentaLabel.ANTERIOR)
    with pytest.raises(InvalidArgument):
        Study("p", {t: small_sweep(t, size=32) for t in SweepTag}, PresentationLabel.CEPHALIC, PlacentaLabel.ANTERIOR, "dev")

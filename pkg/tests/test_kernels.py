from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sweepqa import _kernels_py, kernels

try:
    from sweepqa import _kernels as _compiled
except ImportError:  # pragma: no cover - extension not built
    _compiled = None

needs_ext = pytest.mark.skipif(_compiled is None, reason="compiled extension not built")

stacks = arrays(
    np.uint8,
    st.tuples(st.integers(1, 4), st.integers(1, 24), st.integers(1, 24)),
)


def brute_resize(frame: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w = frame.shape
    out = np.empty((oh, ow), dtype=np.uint8)
    for i in range(oh):
        y = 0.0 if oh == 1 or h == 1 else i * (h - 1) / (oh - 1)
        y0 = min(int(np.floor(y)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(ow):
            x = 0.0 if ow == 1 or w == 1 else j * (w - 1) / (ow - 1)
            x0 = min(int(np.floor(x)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            top = (1 - fx) * float(frame[y0, x0]) + fx * float(frame[y0, x1])
            bot = (1 - fx) * float(frame[y1, x0]) + fx * float(frame[y1, x1])
            v = (1 - fy) * top + fy * bot
            out[i, j] = min(255, max(0, int(np.floor(v + 0.5))))
    return out


def brute_centroids(frames: np.ndarray):
    cents, valid = [], []
    for f in frames.astype(np.int64):
        levels = [2 * float(np.median(row)) for row in f]
        med = 2 * float(np.median(levels))
        w = [max(2 * lv - med, 0.0) for lv in levels]
        tot = sum(w)
        if tot == 0:
            cents.append((f.shape[0] - 1) / 2)
            valid.append(False)
        else:
            cents.append(sum(r * wr for r, wr in enumerate(w)) / tot)
            valid.append(True)
    return np.array(cents), np.array(valid)


def test_backend_is_reported():
    assert kernels.BACKEND in ("compiled", "python")


@given(stacks, st.integers(1, 30), st.integers(1, 30))
@settings(max_examples=60, deadline=None)
def test_python_resize_matches_brute_force(frames, oh, ow):
    got = _kernels_py.resize_bilinear(frames, oh, ow)
    want = np.stack([brute_resize(f, oh, ow) for f in frames])
    # float association differs from the scalar oracle; allow one level
    assert np.abs(got.astype(int) - want.astype(int)).max() <= 1


@given(stacks)
@settings(max_examples=80, deadline=None)
def test_python_centroids_match_brute_force(frames):
    cent, valid = _kernels_py.row_centroids(frames)
    bc, bv = brute_centroids(frames)
    assert np.array_equal(valid, bv)
    np.testing.assert_allclose(cent, bc, rtol=0, atol=1e-9)


@needs_ext
@given(stacks, st.integers(1, 30), st.integers(1, 30))
@settings(max_examples=100, deadline=None)
def test_compiled_resize_bit_identical(frames, oh, ow):
    assert np.array_equal(_compiled.resize_bilinear(frames, oh, ow), _kernels_py.resize_bilinear(frames, oh, ow))


@needs_ext
@given(stacks)
@settings(max_examples=100, deadline=None)
def test_compiled_centroids_bit_identical(frames):
    a = _compiled.row_centroids(frames)
    b = _kernels_py.row_centroids(frames)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@needs_ext
def test_compiled_parity_on_full_size_frames():
    rng = np.random.default_rng(3)
    f = rng.integers(0, 256, size=(3, 224, 224), dtype=np.uint8)
    assert np.array_equal(_compiled.resize_bilinear(f, 448, 448), _kernels_py.resize_bilinear(f, 448, 448))
    assert np.array_equal(_compiled.row_centroids(f)[0], _kernels_py.row_centroids(f)[0])


def test_pure_python_switch(monkeypatch):
    import importlib

    monkeypatch.setenv("SWEEPQA_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.row_centroids is _kernels_py.row_centroids
    finally:
        monkeypatch.delenv("SWEEPQA_PURE_PYTHON")
        importlib.reload(kernels)

"""Reference quality-assessment detectors and the external-detections adapter.

Each detector maps a sweep to a score in [0, 1] where values above 0.5 mean
the deviation is likely present. The statistics are arranged so that the
symmetry identities hold bit-exactly:

* ``detect_reversal(reverse(s)) + detect_reversal(s) == 1``
* ``detect_flip(flip_horizontal(s)) + detect_flip(s) == 1``
* ``detect_incomplete`` is unchanged by either operator.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CoverageError, InvalidArgument, ParseError
from .fileio import Manifest, iter_jsonl, write_jsonl
from .sweep import PerturbationPlan, Sweep, SweepTag

DETECTORS = ("reversal", "flip", "incomplete")


def logistic(z: float) -> float:
    """Logistic with ``logistic(z) + logistic(-z) == 1.0`` exactly."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    return 1.0 - 1.0 / (1.0 + math.exp(z))


@dataclass(frozen=True)
class DetectorParams:
    thresholds: tuple[float, float, float] = (0.5, 0.5, 0.5)
    marker_size: int = 16
    span_threshold: float = 0.80
    span_softness: float = 0.05
    slope_softness: float = 0.05
    flip_softness: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if len(self.thresholds) != 3 or any(not math.isfinite(t) for t in self.thresholds):
            raise InvalidArgument(f"need three finite thresholds, got {self.thresholds}")
        if self.marker_size < 1:
            raise InvalidArgument("marker_size must be positive")
        for name in ("span_softness", "slope_softness", "flip_softness"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")


@dataclass(frozen=True)
class DetectorReport:
    reversal_score: float
    flip_score: float
    incomplete_score: float
    thresholds: tuple[float, float, float] = (0.5, 0.5, 0.5)
    indeterminate: bool = False

    @property
    def scores(self) -> tuple[float, float, float]:
        return (self.reversal_score, self.flip_score, self.incomplete_score)

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return tuple(s >= t for s, t in zip(self.scores, self.thresholds))

    @property
    def reversal_flag(self) -> bool:
        return self.flags[0]

    @property
    def flip_flag(self) -> bool:
        return self.flags[1]

    @property
    def incomplete_flag(self) -> bool:
        return self.flags[2]

    @property
    def any_flag(self) -> bool:
        return any(self.flags)

    @property
    def reacquire(self) -> bool:
        """QA gate decision: any flag, or an input the detectors could not read."""
        return self.any_flag or self.indeterminate

    def with_thresholds(self, thresholds) -> "DetectorReport":
        return DetectorReport(*self.scores, tuple(thresholds), self.indeterminate)


@dataclass(frozen=True)
class Detection:
    """A single detector outcome."""

    score: float
    indeterminate: bool = False
    stats: dict = field(default_factory=dict, compare=False)


def _centroids(sweep: Sweep) -> tuple[np.ndarray, np.ndarray]:
    return kernels.row_centroids(sweep.frames)


def _slope(y: np.ndarray) -> float:
    """Least-squares slope of ``y`` against frame index.

    Written as a sum over mirrored pairs so that reversing ``y`` negates
    every term, and hence the result, exactly.
    """
    t = y.shape[0]
    half = t // 2
    x = np.arange(half, dtype=np.float64) - (t - 1) / 2.0
    num = float(np.sum(x * (y[:half] - y[::-1][:half])))
    xs = np.arange(t, dtype=np.float64) - (t - 1) / 2.0
    return num / float(np.sum(xs * xs))


def detect_reversal(sweep: Sweep, params: DetectorParams = DetectorParams()) -> Detection:
    if sweep.n_frames < 2:
        raise InvalidArgument("reversal detection needs at least 2 frames")
    cent, valid = _centroids(sweep)
    if not valid.any():
        return Detection(0.5, True)
    # rows per frame, scaled so a full top-to-bottom sweep has slope 1
    slope = _slope(cent) * (sweep.n_frames - 1) / (sweep.height - 1 if sweep.height > 1 else 1)
    return Detection(logistic(-slope / params.slope_softness), False, {"slope": slope})


def detect_flip(sweep: Sweep, params: DetectorParams = DetectorParams()) -> Detection:
    ms = min(params.marker_size, sweep.height, sweep.width)
    f = sweep.frames
    left = int(f[:, :ms, :ms].sum(dtype=np.int64))
    right = int(f[:, :ms, sweep.width - ms :].sum(dtype=np.int64))
    if left + right == 0:
        return Detection(0.5, True)
    contrast = (right - left) / (right + left)
    return Detection(logistic(contrast / params.flip_softness), False, {"contrast": contrast})


def covered_span(sweep: Sweep) -> tuple[float, bool]:
    cent, valid = _centroids(sweep)
    if not valid.any():
        return 0.0, False
    return abs(cent[-1] - cent[0]) / max(sweep.height - 1, 1), True


def detect_incomplete(sweep: Sweep, params: DetectorParams = DetectorParams()) -> Detection:
    if sweep.n_frames < 2:
        raise InvalidArgument("incompleteness detection needs at least 2 frames")
    span, ok = covered_span(sweep)
    if not ok:
        return Detection(0.5, True)
    z = (params.span_threshold - span) / params.span_softness
    return Detection(logistic(z), False, {"span": span})


def run_detectors(sweep: Sweep, params: DetectorParams = DetectorParams()) -> DetectorReport:
    rev = detect_reversal(sweep, params)
    flp = detect_flip(sweep, params)
    inc = detect_incomplete(sweep, params)
    return DetectorReport(
        rev.score,
        flp.score,
        inc.score,
        params.thresholds,
        rev.indeterminate or flp.indeterminate or inc.indeterminate,
    )


# ---------------------------------------------------------------------------
# Corpus-level sources

Key = tuple[str, SweepTag]


def _detect_one(job):
    path, params = job
    from .fileio import read_sweep

    return run_detectors(read_sweep(path), params)


def detect_corpus(
    manifest: Manifest, params: DetectorParams = DetectorParams(), workers: int = 1
) -> dict[Key, DetectorReport]:
    """Run the reference detectors over every test sweep, in manifest order."""
    keys, jobs = [], []
    for e, ref in manifest.refs("test"):
        keys.append((e.patient_id, ref.tag))
        jobs.append((manifest.resolve(ref), params))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_detect_one, jobs, chunksize=8))
    else:
        reports = [_detect_one(j) for j in jobs]
    return dict(zip(keys, reports))


def _plan_report(plan: PerturbationPlan | None, thresholds) -> DetectorReport:
    plan = plan or PerturbationPlan()
    return DetectorReport(
        float(plan.reversed), float(plan.flipped), float(plan.incomplete), tuple(thresholds)
    )


def perfect_detections(manifest: Manifest, thresholds=(0.5, 0.5, 0.5)) -> dict[Key, DetectorReport]:
    """Detections that reproduce the recorded ground-truth plans."""
    return {
        (e.patient_id, ref.tag): _plan_report(ref.perturbation, thresholds)
        for e, ref in manifest.refs("test")
    }


def never_detections(manifest: Manifest, thresholds=(0.5, 0.5, 0.5)) -> dict[Key, DetectorReport]:
    return {k: _plan_report(None, thresholds) for k in manifest.keys("test")}


def detections_to_records(reports: dict[Key, DetectorReport]) -> list[dict]:
    return [
        {
            "patient_id": pid,
            "tag": SweepTag(tag).name,
            "reversal": r.reversal_score,
            "flip": r.flip_score,
            "incomplete": r.incomplete_score,
            "indeterminate": r.indeterminate,
        }
        for (pid, tag), r in reports.items()
    ]


def write_detections(reports: dict[Key, DetectorReport], path) -> None:
    write_jsonl(detections_to_records(reports), path)


def _score(rec: dict, key: str, path, lineno: int) -> float:
    if key not in rec:
        raise ParseError(f"missing field {key!r}", path, lineno)
    v = rec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(f"{key} must be a number, got {v!r}", path, lineno)
    if not 0.0 <= v <= 1.0:
        raise ParseError(f"{key} score {v} outside [0, 1]", path, lineno)
    return float(v)


def parse_key(rec: dict, path, lineno: int) -> Key:
    pid = rec.get("patient_id")
    if not isinstance(pid, str) or not pid:
        raise ParseError("patient_id must be a non-empty string", path, lineno)
    tag = rec.get("tag")
    if tag not in SweepTag.__members__:
        raise ParseError(f"unknown tag {tag!r}", path, lineno)
    return pid, SweepTag[tag]


def load_external_detections(
    path,
    expected: list[Key] | None = None,
    thresholds=(0.5, 0.5, 0.5),
) -> dict[Key, DetectorReport]:
    """Parse a detections JSONL file; with ``expected`` also check coverage."""
    path = Path(path)
    out: dict[Key, DetectorReport] = {}
    for lineno, rec in iter_jsonl(path):
        key = parse_key(rec, path, lineno)
        if key in out:
            raise ParseError(f"duplicate record for {key[0]}/{key[1].name}", path, lineno)
        scores = [_score(rec, k, path, lineno) for k in DETECTORS]
        indeterminate = rec.get("indeterminate", False)
        if not isinstance(indeterminate, bool):
            raise ParseError("indeterminate must be a boolean", path, lineno)
        out[key] = DetectorReport(*scores, tuple(float(t) for t in thresholds), indeterminate)
    if expected is not None:
        missing = set(expected) - set(out)
        if missing:
            raise CoverageError({(p, t.name) for p, t in missing}, "detections")
        out = {k: out[k] for k in expected}
    return out

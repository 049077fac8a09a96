"""Downstream-task classifiers: closed-form decoders of the phantom overlays.

The decoders read pixels in frame coordinates and only from mid-sweep frames,
so the perturbations hurt them in explicit ways: a horizontal flip moves the
tag stripe to the mirror column (wrong tag), and truncation can remove the
mid-sweep frames where the label disks are drawn (fallback to the prior).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CoverageError, ParseError
from .fileio import Manifest, iter_jsonl, read_sweep, write_jsonl
from .qa import Key, parse_key
from .sweep import PlacentaLabel, PresentationLabel, Sweep, SweepTag
from .synthgen import BLOB_AMPLITUDE, Layout

# disks fainter than this (after averaging the decode window) count as absent
EVIDENCE_FLOOR = 0.25 * BLOB_AMPLITUDE


class Task(str, enum.Enum):
    SWEEP_TAGS = "SweepTags"
    PRESENTATION = "Presentation"
    PLACENTA = "Placenta"

    @property
    def labels(self) -> tuple:
        return {
            Task.SWEEP_TAGS: tuple(SweepTag),
            Task.PRESENTATION: tuple(PresentationLabel),
            Task.PLACENTA: tuple(PlacentaLabel),
        }[self]

    @property
    def patient_level(self) -> bool:
        return self is not Task.SWEEP_TAGS

    def label_name(self, label) -> str:
        return label.name if self is Task.SWEEP_TAGS else label.value

    def parse_label(self, text: str):
        for lab in self.labels:
            if self.label_name(lab) == text:
                return lab
        raise ValueError(f"unknown {self.value} label {text!r}")


TASKS = tuple(Task)


@dataclass(frozen=True)
class TaskPrediction:
    task: Task
    label: object
    confidence: float = 1.0

    def __post_init__(self):
        if self.label not in self.task.labels:
            raise ValueError(f"{self.label!r} is not a {self.task.value} label")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def _layout(sweep: Sweep, layout: Layout | None) -> Layout:
    return layout if layout is not None else Layout.for_sweep(sweep)


def oracle_sweep_tag(sweep: Sweep, layout: Layout | None = None) -> TaskPrediction:
    """Find the tag stripe's column in the time-averaged stripe-band profile."""
    lay = _layout(sweep, layout)
    r0, r1 = lay.stripe_rows
    profile = sweep.frames[:, r0:r1, :].mean(axis=(0, 1), dtype=np.float64)
    if profile.max() == profile.min():
        return TaskPrediction(Task.SWEEP_TAGS, SweepTag.C1, 0.0)
    cols = np.array(lay.tag_columns)
    peak = int(np.argmax(profile))
    best = int(np.argmin(np.abs(cols - peak)))
    base = float(np.median(profile))
    hw = lay.stripe_half
    resp = np.array([profile[max(c - hw, 0) : c + hw + 1].mean() - base for c in cols])
    others = np.delete(resp, best)
    top = resp[best]
    conf = 0.0 if top <= 0 else float(np.clip((top - others.max()) / top, 0.0, 1.0))
    return TaskPrediction(Task.SWEEP_TAGS, SweepTag(best), conf)


def _blob_responses(sweep: Sweep, lay: Layout, center) -> tuple[float, float]:
    """Matched-filter responses ``(small, large)`` for the disk at ``center``."""
    frames = sweep.frames[lay.decode_frames(sweep.n_frames)]
    mean = frames.mean(axis=0, dtype=np.float64)
    # the band and the background are constant along each row
    mean -= np.median(mean, axis=1, keepdims=True)
    small, large = lay.blob_radii
    rr, cc = np.ogrid[0 : lay.height, 0 : lay.width]
    dist = np.sqrt((rr - center[0]) ** 2 + (cc - center[1]) ** 2)
    inner = mean[dist <= small - 1.5].mean()
    ring = mean[(dist >= small + 1.5) & (dist <= large - 1.5)].mean()
    outer_mask = (dist >= large + 2) & (dist <= large + 6)
    outer = mean[outer_mask].mean() if outer_mask.any() else 0.0
    return float(inner - ring), float(ring - outer)


def _decode_disk(sweep: Sweep, lay: Layout, center, large_label, small_label, task: Task) -> TaskPrediction:
    r_small, r_large = _blob_responses(sweep, lay, center)
    if max(r_small, r_large) < EVIDENCE_FLOOR:
        return TaskPrediction(task, task.labels[0], 0.0)
    denom = abs(r_small) + abs(r_large)
    conf = min(1.0, abs(r_large - r_small) / denom) if denom > 0 else 0.0
    return TaskPrediction(task, large_label if r_large > r_small else small_label, conf)


def oracle_presentation(sweep: Sweep, layout: Layout | None = None) -> TaskPrediction:
    """Upper disk: large radius is Cephalic. Falls back to Cephalic (the majority prior)."""
    lay = _layout(sweep, layout)
    return _decode_disk(
        sweep,
        lay,
        lay.blob_centers[0],
        PresentationLabel.CEPHALIC,
        PresentationLabel.NON_CEPHALIC,
        Task.PRESENTATION,
    )


def oracle_placenta(sweep: Sweep, layout: Layout | None = None) -> TaskPrediction:
    """Lower disk: large radius is Anterior. Falls back to Anterior."""
    lay = _layout(sweep, layout)
    return _decode_disk(
        sweep,
        lay,
        lay.blob_centers[1],
        PlacentaLabel.ANTERIOR,
        PlacentaLabel.POSTERIOR,
        Task.PLACENTA,
    )


ORACLES = {
    Task.SWEEP_TAGS: oracle_sweep_tag,
    Task.PRESENTATION: oracle_presentation,
    Task.PLACENTA: oracle_placenta,
}

Predictions = dict[Task, dict[Key, TaskPrediction]]


def predict_sweep(sweep: Sweep, tasks=TASKS, layout: Layout | None = None) -> dict[Task, TaskPrediction]:
    lay = _layout(sweep, layout)
    return {t: ORACLES[t](sweep, lay) for t in tasks}


def _predict_one(job):
    path, tasks, marker_size = job
    sweep = read_sweep(path)
    return predict_sweep(sweep, tasks, Layout.for_sweep(sweep, marker_size))


def predict_corpus(
    manifest: Manifest,
    tasks=TASKS,
    keys: list[Key] | None = None,
    workers: int = 1,
    marker_size: int = 16,
) -> Predictions:
    """Run the oracles over the test sweeps (or only ``keys``), in manifest order."""
    wanted = None if keys is None else set(keys)
    ks, jobs = [], []
    for e, ref in manifest.refs("test"):
        k = (e.patient_id, ref.tag)
        if wanted is None or k in wanted:
            ks.append(k)
            jobs.append((manifest.resolve(ref), tuple(tasks), marker_size))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_sweep = list(pool.map(_predict_one, jobs, chunksize=8))
    else:
        per_sweep = [_predict_one(j) for j in jobs]
    return {t: {k: p[t] for k, p in zip(ks, per_sweep)} for t in tasks}


def predictions_to_records(preds: Predictions) -> list[dict]:
    out = []
    for task, by_key in preds.items():
        for (pid, tag), p in by_key.items():
            out.append(
                {
                    "patient_id": pid,
                    "tag": SweepTag(tag).name,
                    "task": task.value,
                    "label": task.label_name(p.label),
                    "confidence": p.confidence,
                }
            )
    return out


def write_predictions(preds: Predictions, path) -> None:
    write_jsonl(predictions_to_records(preds), path)


def load_external_predictions(
    path, task: Task | str, expected: list[Key] | None = None
) -> dict[Key, TaskPrediction]:
    """Read the records of one task from a predictions JSONL file."""
    task = Task(task)
    path = Path(path)
    out: dict[Key, TaskPrediction] = {}
    for lineno, rec in iter_jsonl(path):
        try:
            rec_task = Task(rec.get("task"))
        except ValueError:
            raise ParseError(f"unknown task {rec.get('task')!r}", path, lineno) from None
        if rec_task is not task:
            continue
        key = parse_key(rec, path, lineno)
        if key in out:
            raise ParseError(
                f"duplicate {task.value} prediction for {key[0]}/{key[1].name}", path, lineno
            )
        label = rec.get("label")
        try:
            label = task.parse_label(label)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        conf = rec.get("confidence", 1.0)
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not (
            math.isfinite(conf) and 0.0 <= conf <= 1.0
        ):
            raise ParseError(f"confidence must be a number in [0, 1], got {conf!r}", path, lineno)
        out[key] = TaskPrediction(task, label, float(conf))
    if expected is not None:
        missing = set(expected) - set(out)
        if missing:
            raise CoverageError({(p, t.name) for p, t in missing}, f"{task.value} predictions")
        out = {k: out[k] for k in expected}
    return out


def load_prediction_file(path, tasks=TASKS, expected: list[Key] | None = None) -> Predictions:
    return {Task(t): load_external_predictions(path, t, expected) for t in tasks}

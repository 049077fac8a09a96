"""Metrics, patient-level aggregation, corpus evaluation and the reacquisition loop."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .downstream import TASKS, Predictions, Task, TaskPrediction
from .errors import CoverageError, EmptyMatrix, ManifestMismatch, ParseError, UnsupportedFormat
from .fileio import Manifest, ManifestEntry, SweepRef, _atomic_write
from .qa import DETECTORS, DetectorReport, Key
from .sweep import PerturbationPlan, SweepTag


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i][j]`` = samples with true label ``labels[i]`` predicted as ``labels[j]``."""

    labels: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_pairs(cls, labels: Sequence, truth: Sequence, pred: Sequence) -> "ConfusionMatrix":
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(truth, pred, strict=True):
            counts[index[t], index[p]] += 1
        return cls(tuple(labels), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise EmptyMatrix("accuracy of an empty confusion matrix")
    return int(np.trace(cm.counts)) / total


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1; a class with P + R = 0 scores 0 and still counts."""
    if cm.total == 0:
        raise EmptyMatrix("macro-F1 of an empty confusion matrix")
    c = cm.counts
    scores = []
    for i in range(len(cm.labels)):
        tp = int(c[i, i])
        n_pred = int(c[:, i].sum())
        n_true = int(c[i, :].sum())
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true if n_true else 0.0
        scores.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return sum(scores) / len(scores)


def aggregate_patient(predictions: Sequence[TaskPrediction]) -> TaskPrediction:
    """Majority vote; ties go to the higher mean confidence, then the lower label ordinal."""
    if not predictions:
        raise ValueError("cannot aggregate an empty prediction list")
    task = predictions[0].task
    if any(p.task is not task for p in predictions):
        raise ValueError("all predictions must belong to the same task")
    votes: dict = defaultdict(list)
    for p in predictions:
        votes[p.label].append(p.confidence)
    order = {lab: i for i, lab in enumerate(task.labels)}

    def rank(label):
        confs = votes[label]
        return (-len(confs), -math.fsum(confs) / len(confs), order[label])

    winner = min(votes, key=rank)
    confs = votes[winner]
    return TaskPrediction(task, winner, math.fsum(confs) / len(confs))


# ---------------------------------------------------------------------------
# Reports

TASK_TITLES = {
    Task.SWEEP_TAGS: "Sweep tags",
    Task.PRESENTATION: "Fetal presentation",
    Task.PLACENTA: "Placenta location",
}
DETECTOR_TITLES = {
    "reversal": "Sequence reversal",
    "flip": "Probe flipping",
    "incomplete": "Incomplete sweep",
}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float

    @classmethod
    def of(cls, cm: ConfusionMatrix) -> "Metrics":
        return cls(accuracy(cm), macro_f1(cm))


@dataclass(frozen=True)
class ReportRow:
    """One task or detector at one level. ``pre`` is None where a level does not apply."""

    name: str
    level: str
    pre: Metrics | None
    post: Metrics | None = None

    @property
    def delta(self) -> Metrics | None:
        if self.pre is None or self.post is None:
            return None
        return Metrics(
            self.post.accuracy - self.pre.accuracy, self.post.macro_f1 - self.pre.macro_f1
        )

    @property
    def is_detector(self) -> bool:
        return self.name in DETECTORS


@dataclass
class EvalReport:
    rows: list[ReportRow]
    meta: dict = field(default_factory=dict)
    loop: bool = False

    def row(self, name: str, level: str = "sweep") -> ReportRow:
        for r in self.rows:
            if r.name == name and r.level == level:
                return r
        raise KeyError((name, level))

    def task_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if not r.is_detector]

    def detector_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.is_detector]

    def to_dict(self) -> dict:
        def m(x):
            return None if x is None else {"accuracy": x.accuracy, "macro_f1": x.macro_f1}

        return {
            "loop": self.loop,
            "meta": self.meta,
            "rows": [
                {"name": r.name, "level": r.level, "pre": m(r.pre), "post": m(r.post)}
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        def m(x):
            return None if x is None else Metrics(float(x["accuracy"]), float(x["macro_f1"]))

        rows = [ReportRow(r["name"], r["level"], m(r["pre"]), m(r.get("post"))) for r in data["rows"]]
        return cls(rows, dict(data.get("meta", {})), bool(data.get("loop", False)))


def write_report_json(report: EvalReport, path) -> None:
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    _atomic_write(Path(path), text.encode("utf-8"))


def read_report_json(path) -> EvalReport:
    path = Path(path)
    try:
        return EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"not a report: {exc}", path) from None


# ---------------------------------------------------------------------------
# Corpus evaluation


def _require(preds: dict, keys: list[Key], what: str) -> None:
    missing = [k for k in keys if k not in preds]
    if missing:
        raise CoverageError({(p, SweepTag(t).name) for p, t in missing}, what)


def _task_truth(task: Task, entry: ManifestEntry, tag: SweepTag):
    if task is Task.SWEEP_TAGS:
        return tag
    if task is Task.PRESENTATION:
        return entry.presentation
    return entry.placenta


def task_metrics(
    manifest: Manifest, preds: dict[Key, TaskPrediction], task: Task
) -> tuple[Metrics, Metrics | None]:
    """Sweep-level metrics and, for patient-level tasks, metrics after aggregation."""
    entries = manifest.split("test")
    keys = manifest.keys("test")
    _require(preds, keys, f"{task.value} predictions")
    truth, pred = [], []
    p_truth, p_pred = [], []
    for e in entries:
        sweep_preds = []
        for ref in e.sweeps:
            p = preds[(e.patient_id, ref.tag)]
            truth.append(_task_truth(task, e, ref.tag))
            pred.append(p.label)
            sweep_preds.append(p)
        if task.patient_level:
            p_truth.append(_task_truth(task, e, SweepTag.C1))
            p_pred.append(aggregate_patient(sweep_preds).label)
    sweep = Metrics.of(ConfusionMatrix.from_pairs(task.labels, truth, pred))
    patient = (
        Metrics.of(ConfusionMatrix.from_pairs(task.labels, p_truth, p_pred))
        if task.patient_level
        else None
    )
    return sweep, patient


def corpus_meta(manifest: Manifest) -> dict:
    test = manifest.split("test")
    return {
        "seed": manifest.seed,
        "mixture": None if manifest.mixture is None else list(manifest.mixture),
        "test_patients": len(test),
        "test_sweeps": sum(len(e.sweeps) for e in test),
    }


def evaluate_corpus(manifest: Manifest, predictions: Predictions, tasks=TASKS) -> EvalReport:
    """Downstream report: sweep- and patient-level accuracy / macro-F1 per task on the test split."""
    rows = []
    for task in tasks:
        task = Task(task)
        sweep, patient = task_metrics(manifest, predictions[task], task)
        rows.append(ReportRow(task.value, "sweep", sweep))
        rows.append(ReportRow(task.value, "patient", patient))
    return EvalReport(rows, corpus_meta(manifest))


def evaluate_detectors(manifest: Manifest, reports: dict[Key, DetectorReport]) -> EvalReport:
    """Detector report: binary flag-vs-ground-truth metrics for each detector."""
    keys = manifest.keys("test")
    _require(reports, keys, "detections")
    truth = {d: [] for d in DETECTORS}
    flags = {d: [] for d in DETECTORS}
    for e, ref in manifest.refs("test"):
        plan = ref.perturbation or PerturbationPlan()
        rep = reports[(e.patient_id, ref.tag)]
        for d, actual, flag in zip(DETECTORS, (plan.reversed, plan.flipped, plan.incomplete), rep.flags):
            truth[d].append(bool(actual))
            flags[d].append(bool(flag))
    rows = [
        ReportRow(d, "sweep", Metrics.of(ConfusionMatrix.from_pairs((False, True), truth[d], flags[d])))
        for d in DETECTORS
    ]
    return EvalReport(rows, corpus_meta(manifest))


def combine(*reports: EvalReport) -> EvalReport:
    rows, meta = [], {}
    for r in reports:
        rows.extend(r.rows)
        meta.update(r.meta)
    return EvalReport(rows, meta, any(r.loop for r in reports))


# ---------------------------------------------------------------------------
# Feedback loop


def check_paired(clean: Manifest, perturbed: Manifest) -> None:
    """Both manifests must describe the same test patients, labels and tags."""

    def sig(m: Manifest):
        return [
            (e.patient_id, e.presentation, e.placenta, tuple(sorted(r.tag for r in e.sweeps)))
            for e in m.split("test")
        ]

    a, b = sig(clean), sig(perturbed)
    if a != b:
        diff = next((x, y) for x, y in zip(a + [None], b + [None]) if x != y)
        raise ManifestMismatch(f"clean and perturbed test splits differ: {diff[0]} vs {diff[1]}")


def reacquired_manifest(
    clean: Manifest, perturbed: Manifest, detections: dict[Key, DetectorReport], root=None
) -> Manifest:
    """The test corpus after the QA gate: flagged sweeps replaced by their clean originals."""
    check_paired(clean, perturbed)
    _require(detections, perturbed.keys("test"), "detections")
    root = Path(root) if root is not None else perturbed.root

    def rel(path: Path) -> str:
        if root is None:
            return Path(path).as_posix()
        return Path(os.path.relpath(Path(path).resolve(), Path(root).resolve())).as_posix()

    entries = []
    for e in perturbed.split("test"):
        c_entry = clean.entry(e.patient_id)
        refs = []
        for ref in e.sweeps:
            if detections[(e.patient_id, ref.tag)].reacquire:
                refs.append(SweepRef(ref.tag, rel(clean.resolve(c_entry.sweep(ref.tag))), None))
            else:
                refs.append(SweepRef(ref.tag, rel(perturbed.resolve(ref)), ref.perturbation))
        entries.append(ManifestEntry(e.patient_id, e.split, e.presentation, e.placenta, tuple(refs)))
    return Manifest(perturbed.seed, tuple(entries), perturbed.mixture, root)


Reacquirer = Callable[[Manifest, list[Key]], Predictions]


def feedback_loop(
    clean: Manifest,
    perturbed: Manifest,
    detections: dict[Key, DetectorReport],
    pre_predictions: Predictions,
    predict_reacquired: Reacquirer,
    tasks=TASKS,
) -> EvalReport:
    """Feedback-loop report: metrics before and after reacquiring every sweep the QA gate rejects.

    ``predict_reacquired(manifest, keys)`` must return predictions for ``keys``
    on the post-gate corpus ``manifest`` (where those keys point at clean sweeps).
    """
    tasks = [Task(t) for t in tasks]
    post_manifest = reacquired_manifest(clean, perturbed, detections)
    flagged = [k for k in perturbed.keys("test") if detections[k].reacquire]
    fresh = predict_reacquired(post_manifest, flagged) if flagged else {t: {} for t in tasks}
    rows = []
    for task in tasks:
        pre = pre_predictions[task]
        post = dict(pre)
        _require(fresh[task], flagged, f"reacquired {task.value} predictions")
        for k in flagged:
            post[k] = fresh[task][k]
        pre_s, pre_p = task_metrics(perturbed, pre, task)
        post_s, post_p = task_metrics(post_manifest, post, task)
        rows.append(ReportRow(task.value, "sweep", pre_s, post_s))
        rows.append(ReportRow(task.value, "patient", pre_p, post_p))
    meta = corpus_meta(perturbed)
    meta["reacquired_sweeps"] = len(flagged)
    return EvalReport(rows, meta, loop=True)


# ---------------------------------------------------------------------------
# Rendering

CSV_BASE = ["name", "level", "accuracy", "macro_f1"]
CSV_LOOP = ["post_accuracy", "post_macro_f1", "delta_accuracy", "delta_macro_f1"]
ABSENT = "--"


def _pct(m: Metrics | None, sep: str = " / ") -> str:
    if m is None:
        return ABSENT
    return f"{100 * m.accuracy:.2f}{sep}{100 * m.macro_f1:.2f}"


def _table(header: list[str], body: list[list[str]], title: str) -> str:
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    line = "  ".join("-" * w for w in widths)
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    return "\n".join([title, line, fmt(header), line, *map(fmt, body), line])


def render_text(report: EvalReport) -> str:
    parts = []
    task_names = [t.value for t in TASKS if any(r.name == t.value for r in report.task_rows())]
    if task_names:
        body = []
        for name in task_names:
            s = report.row(name, "sweep")
            try:
                p = report.row(name, "patient")
            except KeyError:
                p = ReportRow(name, "patient", None)
            title = TASK_TITLES[Task(name)]
            if report.loop:
                body.append(
                    [title, _pct(s.post), _pct(s.delta, "/"), _pct(p.post), _pct(p.delta, "/")]
                )
            else:
                body.append([title, _pct(s.pre), _pct(p.pre)])
        if report.loop:
            header = ["Task", "Acc/F1 sweep (%)", "Delta (%)", "Acc/F1 patient (%)", "Delta (%)"]
            title = "Downstream tasks after simulated reacquisition of flagged sweeps"
            pre_body = [[TASK_TITLES[Task(n)], _pct(report.row(n).pre), _pct(_patient(report, n).pre)] for n in task_names]
            parts.append(
                _table(["Task", "Acc/F1 sweep (%)", "Acc/F1 patient (%)"], pre_body, "Before reacquisition")
            )
        else:
            header = ["Task", "Acc/F1 sweep (%)", "Acc/F1 patient (%)"]
            title = "Downstream tasks"
        parts.append(_table(header, body, title))
    det = report.detector_rows()
    if det:
        body = [[DETECTOR_TITLES[r.name], _pct(r.pre, "/")] for r in det]
        parts.append(_table(["Task", "Accuracy/F1_macro (%)"], body, "QA detectors"))
    if report.meta:
        meta = json.dumps(report.meta, sort_keys=True)
        parts.append(f"meta: {meta}")
    return "\n\n".join(parts) + "\n"


def _patient(report: EvalReport, name: str) -> ReportRow:
    try:
        return report.row(name, "patient")
    except KeyError:
        return ReportRow(name, "patient", None)


def _num(x: float | None) -> str:
    return ABSENT if x is None else repr(float(x))


def render_csv(report: EvalReport) -> str:
    cols = CSV_BASE + (CSV_LOOP if report.loop else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in report.rows:
        row = [r.name, r.level, _num(r.pre and r.pre.accuracy), _num(r.pre and r.pre.macro_f1)]
        if report.loop:
            d = r.delta
            row += [
                _num(r.post and r.post.accuracy),
                _num(r.post and r.post.macro_f1),
                _num(d and d.accuracy),
                _num(d and d.macro_f1),
            ]
        w.writerow(row)
    return buf.getvalue()


def parse_csv(text: str) -> EvalReport:
    """Inverse of :func:`render_csv` (metadata is not carried by the CSV)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV report", line=1) from None
    if header not in (CSV_BASE, CSV_BASE + CSV_LOOP):
        raise ParseError(f"unexpected CSV header {header}", line=1)
    loop = len(header) > len(CSV_BASE)

    def num(s: str, lineno: int) -> float | None:
        if s == ABSENT:
            return None
        try:
            return float(s)
        except ValueError:
            raise ParseError(f"not a number: {s!r}", line=lineno) from None

    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(rec)}", line=lineno)
        vals = [num(s, lineno) for s in rec[2:]]
        pre = None if vals[0] is None else Metrics(vals[0], vals[1])
        post = None
        if loop and vals[2] is not None:
            post = Metrics(vals[2], vals[3])
        rows.append(ReportRow(rec[0], rec[1], pre, post))
    return EvalReport(rows, {}, loop)


def report_render(report: EvalReport, fmt: str = "text") -> str:
    if fmt == "text":
        return render_text(report)
    if fmt == "csv":
        return render_csv(report)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    raise UnsupportedFormat(f"unsupported report format {fmt!r} (use text, csv or json)")

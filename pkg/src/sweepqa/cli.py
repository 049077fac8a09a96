"""Command-line entry point: ``sweepqa {synth,perturb,qa,eval,loop,report}``.

Layout under ``--out``::

    corpus/            clean sweeps + manifest.json
    perturbed/         perturbed test sweeps + manifest.json
    qa/                detections.jsonl
    reacquired/        manifest of the post-QA-gate test corpus
    reports/           eval/loop reports (json, txt, csv)

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import kernels
from .downstream import TASKS, load_prediction_file, predict_corpus, write_predictions
from .errors import (
    FormatError,
    InvalidArgument,
    ParseError,
    SweepQAError,
    UnsupportedFormat,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    combine,
    evaluate_corpus,
    evaluate_detectors,
    feedback_loop,
    read_report_json,
    reacquired_manifest,
    report_render,
    write_report_json,
)
from .fileio import _atomic_write, read_manifest, validate_manifest, write_manifest
from .perturb import MixtureSpec, TruncationRange, perturb_corpus
from .qa import (
    DetectorParams,
    detect_corpus,
    load_external_detections,
    never_detections,
    perfect_detections,
    write_detections,
)
from .synthgen import GenParams, generate_corpus

FORMATS = ("text", "csv", "json")
DETECTOR_SOURCES = ("reference", "perfect", "never")
_EXT = {"text": "txt", "csv": "csv", "json": "json"}


class UsageError(SweepQAError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    n_patients: int = 1250
    split: tuple[int, int, int] = (850, 200, 200)
    noise_sigma: float = 4.0
    frame_h: int = 224
    frame_w: int = 224
    canonical_len: int = 32
    marker_size: int = 16
    mixture: tuple[float, float, float, float] = (0.50, 0.30, 0.15, 0.05)
    thresholds: tuple[float, float, float] = (0.5, 0.5, 0.5)
    span_threshold: float = 0.80
    m_min: int = 0
    m_max: int = 8
    n_min: int = 8
    n_max: int = 24
    # sources: "reference" or a file path
    detectors: str = "reference"
    detections: str | None = None
    predictions: str | None = None
    clean_predictions: str | None = None
    eval_corpus: str = "perturbed"
    format: str = "text"
    # paths (relative ones are taken relative to ``out``)
    out: str = "."
    corpus_dir: str = "corpus"
    perturbed_dir: str = "perturbed"
    qa_dir: str = "qa"
    reacquired_dir: str = "reacquired"
    reports_dir: str = "reports"
    input: str | None = None
    workers: int = 1
    quiet: bool = False

    # keys left out of the echo in reports: they do not change any result
    _NOT_ECHOED = (
        "out", "corpus_dir", "perturbed_dir", "qa_dir", "reacquired_dir", "reports_dir",
        "input", "workers", "quiet", "format",
    )

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.out) / p

    def gen_params(self) -> GenParams:
        return GenParams(
            master_seed=self.seed,
            n_patients=self.n_patients,
            split_sizes=tuple(self.split),
            frame_h=self.frame_h,
            frame_w=self.frame_w,
            canonical_len=self.canonical_len,
            noise_sigma=self.noise_sigma,
            marker_size=self.marker_size,
        )

    def mixture_spec(self) -> MixtureSpec:
        return MixtureSpec(*self.mixture)

    def truncation(self) -> TruncationRange:
        return TruncationRange(self.m_min, self.m_max, self.n_min, self.n_max, self.canonical_len)

    def detector_params(self) -> DetectorParams:
        return DetectorParams(
            thresholds=tuple(self.thresholds),
            marker_size=self.marker_size,
            span_threshold=self.span_threshold,
        )

    def validate(self) -> None:
        self.gen_params()
        self.mixture_spec()
        self.truncation()
        self.detector_params()
        if self.workers < 1:
            raise InvalidArgument("workers must be >= 1")
        if self.format not in FORMATS:
            raise UnsupportedFormat(f"unsupported report format {self.format!r} (use {', '.join(FORMATS)})")
        if self.eval_corpus not in ("clean", "perturbed"):
            raise InvalidArgument("eval_corpus must be 'clean' or 'perturbed'")

    def echo(self) -> dict:
        d = asdict(self)
        for k in self._NOT_ECHOED:
            d.pop(k, None)
        for k in ("detections", "predictions", "clean_predictions"):
            d[k] = "external" if d[k] is not None else None
        for k in ("split", "mixture", "thresholds"):
            d[k] = list(d[k])
        return d


_TUPLE_LEN = {"split": (3, int), "mixture": (4, float), "thresholds": (3, float)}


def _coerce(name: str, value):
    """Convert a config or flag value to the field's type."""
    if name in _TUPLE_LEN:
        n, typ = _TUPLE_LEN[name]
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)) or len(value) != n:
            raise InvalidArgument(f"{name} needs {n} comma-separated values, got {value!r}")
        try:
            out = [typ(v) for v in value]
        except (TypeError, ValueError):
            raise InvalidArgument(f"{name} values must be numeric, got {value!r}") from None
        if typ is int and any(isinstance(v, float) and not v.is_integer() for v in value):
            raise InvalidArgument(f"{name} values must be integers, got {value!r}")
        return tuple(out)
    default = RunConfig.__dataclass_fields__[name].default
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidArgument(f"{name} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, str) and value.lstrip("-").isdigit())):
            raise InvalidArgument(f"{name} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise InvalidArgument(f"{name} must be a number, got {value!r}") from None
    if not isinstance(value, str):
        raise InvalidArgument(f"{name} must be a string, got {value!r}")
    return value


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from None
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object", path, 1, 1)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ParseError(f"unknown config keys: {', '.join(unknown)}", path)
    return data


# flag dest -> config field
_FLAG_FIELDS = {
    "seed": "seed",
    "out": "out",
    "quiet": "quiet",
    "workers": "workers",
    "patients": "n_patients",
    "split": "split",
    "noise": "noise_sigma",
    "frame_size": None,
    "canonical_len": "canonical_len",
    "mixture": "mixture",
    "thresholds": "thresholds",
    "span_threshold": "span_threshold",
    "detectors": "detectors",
    "detections": "detections",
    "predictions": "predictions",
    "clean_predictions": "clean_predictions",
    "corpus": "eval_corpus",
    "format": "format",
    "input": "input",
}


def _default_split(n: int) -> tuple[int, int, int]:
    """Scale the default 850/200/200 partition to ``n`` patients."""
    held = round(n * 200 / 1250)
    return (n - 2 * held, held, held)


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    flags = {}
    for dest, name in _FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is None or v is False:
            continue
        if dest == "frame_size":
            flags["frame_h"] = flags["frame_w"] = v
            continue
        flags[name] = v
    values.update(flags)
    if "n_patients" in values and "split" not in values:
        values["split"] = _default_split(_coerce("n_patients", values["n_patients"]))
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Subcommands


class _Log:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str) -> None:
        if not self.quiet:
            print(msg)


def _manifest(cfg: RunConfig, which: str):
    path = cfg.path(which) / "manifest.json"
    if not path.is_file():
        stage = {"corpus_dir": "synth", "perturbed_dir": "perturb"}[which]
        raise UsageError(f"no manifest at {path}; run `sweepqa {stage}` first")
    m = read_manifest(path)
    validate_manifest(m)
    return m


def cmd_synth(cfg: RunConfig, log: _Log) -> int:
    params = cfg.gen_params()
    out = cfg.path("corpus_dir")
    m = generate_corpus(params, out, workers=cfg.workers)
    counts = m.split_counts()
    n_files = sum(len(e.sweeps) for e in m.entries)
    log(f"wrote {out / 'manifest.json'}")
    log(
        f"{len(m.entries)} patients ({counts.get('train', 0)} train / {counts.get('val', 0)} val / "
        f"{counts.get('test', 0)} test), {n_files} sweep files"
    )
    return 0


def cmd_perturb(cfg: RunConfig, log: _Log) -> int:
    mixture, limits = cfg.mixture_spec(), cfg.truncation()
    clean = _manifest(cfg, "corpus_dir")
    out = cfg.path("perturbed_dir")
    m = perturb_corpus(clean, mixture, cfg.seed, out, limits, workers=cfg.workers)
    plans = [ref.perturbation for _, ref in m.refs("test")]
    by_k = [sum(1 for p in plans if p.count == k) for k in range(4)]
    log(f"wrote {out / 'manifest.json'}")
    log(f"{len(plans)} test sweeps; plans with 0/1/2/3 perturbations: {'/'.join(map(str, by_k))}")
    return 0


def _detections(cfg: RunConfig, manifest, log: _Log, prefer_saved: bool):
    keys = manifest.keys("test")
    thresholds = tuple(cfg.thresholds)
    if cfg.detections is not None:
        log(f"detections: {cfg.detections}")
        return load_external_detections(cfg.detections, keys, thresholds)
    src = cfg.detectors
    if src == "perfect":
        return perfect_detections(manifest, thresholds)
    if src == "never":
        return never_detections(manifest, thresholds)
    if src != "reference":
        # anything else names an external file
        log(f"detections: {src}")
        return load_external_detections(src, keys, thresholds)
    saved = cfg.path("qa_dir") / "detections.jsonl"
    if prefer_saved and saved.is_file():
        log(f"detections: {saved}")
        return load_external_detections(saved, keys, thresholds)
    return detect_corpus(manifest, cfg.detector_params(), workers=cfg.workers)


def cmd_qa(cfg: RunConfig, log: _Log) -> int:
    perturbed = _manifest(cfg, "perturbed_dir")
    reports = _detections(cfg, perturbed, log, prefer_saved=False)
    out = cfg.path("qa_dir") / "detections.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_detections(reports, out)
    flagged = sum(r.reacquire for r in reports.values())
    log(f"wrote {out}")
    log(f"{len(reports)} test sweeps, {flagged} flagged for reacquisition")
    return 0


def _predictions(cfg: RunConfig, manifest, path: str | None):
    keys = manifest.keys("test")
    if path is not None:
        return load_prediction_file(path, TASKS, keys)
    return predict_corpus(manifest, TASKS, workers=cfg.workers, marker_size=cfg.marker_size)


def _emit(cfg: RunConfig, report: EvalReport, stem: str, log: _Log) -> None:
    report.meta["config"] = cfg.echo()
    out = cfg.path("reports_dir")
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out / f"{stem}.json")
    for fmt in ("text", "csv"):
        _atomic_write(out / f"{stem}.{_EXT[fmt]}", report_render(report, fmt).encode("utf-8"))
    log(report_render(report, cfg.format).rstrip("\n"))


def cmd_eval(cfg: RunConfig, log: _Log) -> int:
    perturbed = _manifest(cfg, "perturbed_dir")
    target = _manifest(cfg, "corpus_dir") if cfg.eval_corpus == "clean" else perturbed
    preds = _predictions(cfg, target, cfg.predictions)
    detections = _detections(cfg, perturbed, log, prefer_saved=True)
    report = combine(evaluate_corpus(target, preds), evaluate_detectors(perturbed, detections))
    report.meta["eval_corpus"] = cfg.eval_corpus
    out = cfg.path("reports_dir")
    out.mkdir(parents=True, exist_ok=True)
    if cfg.predictions is None:
        write_predictions(preds, out / f"predictions_{cfg.eval_corpus}.jsonl")
    _emit(cfg, report, "eval", log)
    return 0


def cmd_loop(cfg: RunConfig, log: _Log) -> int:
    clean = _manifest(cfg, "corpus_dir")
    perturbed = _manifest(cfg, "perturbed_dir")
    detections = _detections(cfg, perturbed, log, prefer_saved=True)
    if cfg.predictions is not None:
        if cfg.clean_predictions is None:
            raise UsageError("--predictions in the loop also needs --clean-predictions")
        pre = load_prediction_file(cfg.predictions, TASKS, perturbed.keys("test"))
        fresh = load_prediction_file(cfg.clean_predictions, TASKS, clean.keys("test"))

        def reacquire(_manifest, keys):
            return {t: {k: fresh[t][k] for k in keys} for t in TASKS}
    else:
        pre = predict_corpus(perturbed, TASKS, workers=cfg.workers, marker_size=cfg.marker_size)

        def reacquire(manifest, keys):
            return predict_corpus(manifest, TASKS, keys, cfg.workers, cfg.marker_size)

    report = feedback_loop(clean, perturbed, detections, pre, reacquire, TASKS)
    post_dir = cfg.path("reacquired_dir")
    post_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(reacquired_manifest(clean, perturbed, detections, post_dir), post_dir / "manifest.json")
    _emit(cfg, report, "loop", log)
    return 0


def cmd_report(cfg: RunConfig, log: _Log) -> int:
    if cfg.input is not None:
        src = Path(cfg.input)
    else:
        reports = cfg.path("reports_dir")
        src = next((reports / f"{s}.json" for s in ("loop", "eval") if (reports / f"{s}.json").is_file()), None)
        if src is None:
            raise UsageError(f"no report in {reports}; run `sweepqa eval` or `sweepqa loop` first")
    if not src.is_file():
        raise UsageError(f"report not found: {src}")
    report = read_report_json(src)
    text = report_render(report, cfg.format)
    dest = src.with_suffix("." + _EXT[cfg.format])
    if dest != src:
        _atomic_write(dest, text.encode("utf-8"))
    # the rendered report is the command's output, not progress chatter
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "perturb": cmd_perturb,
    "qa": cmd_qa,
    "eval": cmd_eval,
    "loop": cmd_loop,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# Argument parsing


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=d, help="JSON config file")
    parser.add_argument("--seed", type=int, default=d, help="master seed")
    parser.add_argument("--out", metavar="DIR", default=d, help="output root (default: .)")
    parser.add_argument("--workers", type=int, default=d, help="worker processes")
    parser.add_argument("--quiet", action="store_true", default=d, help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sweepqa", description="Blind-sweep QA pipeline on synthetic corpora.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def cmd(name, help):
        sp = sub.add_parser(name, help=help)
        _global_flags(sp, suppress=True)
        return sp

    s = cmd("synth", "generate a clean phantom corpus")
    s.add_argument("--patients", type=int)
    s.add_argument("--split", metavar="TRAIN,VAL,TEST")
    s.add_argument("--noise", type=float, help="noise sigma in grey levels")
    s.add_argument("--frame-size", type=int)
    s.add_argument("--canonical-len", type=int)

    s = cmd("perturb", "apply protocol deviations to the test split")
    s.add_argument("--mixture", metavar="P0,P1,P2,P3")

    def det_flags(sp):
        sp.add_argument("--detectors", metavar="SOURCE", help="reference | perfect | never | PATH")
        sp.add_argument("--detections", metavar="PATH", help="external detections JSONL")
        sp.add_argument("--thresholds", metavar="R,F,I")
        sp.add_argument("--span-threshold", type=float)

    s = cmd("qa", "run the QA detectors on the perturbed test split")
    det_flags(s)

    fmt = dict(choices=FORMATS)
    s = cmd("eval", "downstream and detector metrics")
    det_flags(s)
    s.add_argument("--predictions", metavar="PATH")
    s.add_argument("--corpus", choices=("clean", "perturbed"), help="corpus for the downstream table")
    s.add_argument("--format", **fmt)

    s = cmd("loop", "simulate reacquisition of flagged sweeps")
    det_flags(s)
    s.add_argument("--predictions", metavar="PATH", help="predictions on the perturbed corpus")
    s.add_argument("--clean-predictions", metavar="PATH", help="predictions on the clean corpus")
    s.add_argument("--format", **fmt)

    s = cmd("report", "render a saved report")
    s.add_argument("--input", metavar="PATH", help="report JSON (default: reports/loop.json or eval.json)")
    s.add_argument("--format", **fmt)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
    except (SweepQAError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"sweepqa: error: {exc}", file=sys.stderr)
        return 2
    log = _Log(cfg.quiet)
    try:
        if not cfg.quiet and args.command in ("qa", "eval", "loop"):
            print(f"kernels: {kernels.BACKEND}", file=sys.stderr)
        return COMMANDS[args.command](cfg, log)
    except FormatError as exc:
        print(f"sweepqa: error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, InvalidArgument, ParseError, ValidationError, UnsupportedFormat) as exc:
        print(f"sweepqa: error: {exc}", file=sys.stderr)
        return 2
    except (SweepQAError, OSError) as exc:
        print(f"sweepqa: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

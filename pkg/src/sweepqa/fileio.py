"""On-disk formats: BSWP sweep files, the JSON corpus manifest, JSONL records.

BSWP v1 layout (all little-endian)::

    magic "BSWP" | u16 version | u16 T | u16 H | u16 W | u8 dtype | f32 mm/px
    | u8 tag | u16 id_len | id (UTF-8) | T*H*W payload bytes, frame-major
"""

from __future__ import annotations

import json
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    MalformedHeader,
    ParseError,
    SweepQAError,
    TruncatedPayload,
    ValidationError,
)
from .sweep import SPLITS, PerturbationPlan, PlacentaLabel, PresentationLabel, Sweep, SweepTag

MAGIC = b"BSWP"
VERSION = 1
DTYPE_U8 = 0
_HEADER = struct.Struct("<4sHHHHBfBH")


def encode_sweep(sweep: Sweep) -> bytes:
    pid = sweep.patient_id.encode("utf-8")
    t, h, w = sweep.frames.shape
    header = _HEADER.pack(
        MAGIC, VERSION, t, h, w, DTYPE_U8, sweep.mm_per_pixel, int(sweep.sweep_tag), len(pid)
    )
    return header + pid + sweep.frames.tobytes(order="C")


def decode_sweep(data: bytes) -> Sweep:
    if len(data) < _HEADER.size:
        raise MalformedHeader(
            f"file too short for header: {len(data)} < {_HEADER.size} bytes", offset=len(data)
        )
    magic, version, t, h, w, dtype, mm, tag, id_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise MalformedHeader(f"unsupported version {version}", offset=4)
    for off, name, v in ((6, "frame count", t), (8, "height", h), (10, "width", w)):
        if v == 0:
            raise MalformedHeader(f"{name} is zero", offset=off)
    if dtype != DTYPE_U8:
        raise MalformedHeader(f"unknown dtype code {dtype}", offset=12)
    if not (mm > 0 and np.isfinite(mm)):
        raise MalformedHeader(f"invalid mm_per_pixel {mm}", offset=13)
    if tag >= len(SweepTag):
        raise MalformedHeader(f"unknown tag code {tag}", offset=17)
    pid_start = _HEADER.size
    pid_end = pid_start + id_len
    if len(data) < pid_end:
        raise MalformedHeader(
            f"patient id needs {id_len} bytes, {len(data) - pid_start} available", offset=len(data)
        )
    try:
        pid = data[pid_start:pid_end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"patient id is not UTF-8: {exc.reason}", offset=pid_start + exc.start)
    expected = t * h * w
    actual = len(data) - pid_end
    if actual < expected:
        raise TruncatedPayload(expected, actual, offset=len(data))
    if actual > expected:
        raise MalformedHeader(
            f"{actual - expected} trailing bytes after payload", offset=pid_end + expected
        )
    frames = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pid_end).reshape(t, h, w)
    return Sweep(frames, SweepTag(tag), pid, mm)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_sweep(sweep: Sweep, path) -> None:
    _atomic_write(Path(path), encode_sweep(sweep))


def read_sweep(path) -> Sweep:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_sweep(data)
    except SweepQAError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class SweepRef:
    tag: SweepTag
    path: str
    perturbation: PerturbationPlan | None = None


@dataclass(frozen=True)
class ManifestEntry:
    patient_id: str
    split: str
    presentation: PresentationLabel
    placenta: PlacentaLabel
    sweeps: tuple[SweepRef, ...]

    def sweep(self, tag: SweepTag) -> SweepRef:
        for ref in self.sweeps:
            if ref.tag == tag:
                return ref
        raise KeyError(f"{self.patient_id} has no {SweepTag(tag).name} sweep")


@dataclass(frozen=True)
class Manifest:
    """Corpus index. Sweep paths are relative to ``root`` (the manifest's directory)."""

    seed: int
    entries: tuple[ManifestEntry, ...]
    mixture: tuple[float, float, float, float] | None = None
    root: Path | None = field(default=None, compare=False)

    def resolve(self, ref: SweepRef) -> Path:
        p = Path(ref.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def load(self, ref: SweepRef) -> Sweep:
        return read_sweep(self.resolve(ref))

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def split_counts(self) -> dict[str, int]:
        c = Counter(e.split for e in self.entries)
        return {s: c.get(s, 0) for s in SPLITS}

    def keys(self, split: str | None = "test") -> list[tuple[str, SweepTag]]:
        return [
            (e.patient_id, ref.tag)
            for e in self.entries
            if split is None or e.split == split
            for ref in e.sweeps
        ]

    def refs(self, split: str | None = "test") -> Iterator[tuple[ManifestEntry, SweepRef]]:
        for e in self.entries:
            if split is None or e.split == split:
                for ref in e.sweeps:
                    yield e, ref

    def entry(self, patient_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.patient_id == patient_id:
                return e
        raise KeyError(patient_id)


def manifest_to_dict(manifest: Manifest) -> dict:
    return {
        "seed": manifest.seed,
        "mixture": None if manifest.mixture is None else list(manifest.mixture),
        "entries": [
            {
                "patient_id": e.patient_id,
                "split": e.split,
                "presentation": e.presentation.value,
                "placenta": e.placenta.value,
                "sweeps": [
                    {
                        "tag": ref.tag.name,
                        "path": ref.path,
                        "perturbation": None
                        if ref.perturbation is None
                        else ref.perturbation.to_dict(),
                    }
                    for ref in e.sweeps
                ],
            }
            for e in manifest.entries
        ],
    }


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise ValueError(f"{where} must be an object")
    if key not in obj:
        raise ValueError(f"{where} is missing {key!r}")
    return obj[key]


def manifest_from_dict(data: dict, root: Path | None = None) -> Manifest:
    seed = _field(data, "seed", "manifest")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValueError("seed must be a non-negative integer")
    mixture = _field(data, "mixture", "manifest")
    if mixture is not None:
        if not (isinstance(mixture, list) and len(mixture) == 4):
            raise ValueError("mixture must be null or a list of 4 probabilities")
        mixture = tuple(float(p) for p in mixture)
    raw_entries = _field(data, "entries", "manifest")
    if not isinstance(raw_entries, list):
        raise ValueError("entries must be a list")
    entries = []
    for i, raw in enumerate(raw_entries):
        where = f"entries[{i}]"
        sweeps = _field(raw, "sweeps", where)
        if not isinstance(sweeps, list):
            raise ValueError(f"{where}.sweeps must be a list")
        refs = []
        for j, s in enumerate(sweeps):
            w = f"{where}.sweeps[{j}]"
            tag = _field(s, "tag", w)
            if tag not in SweepTag.__members__:
                raise ValueError(f"{w}.tag: unknown tag {tag!r}")
            pert = _field(s, "perturbation", w)
            try:
                plan = None if pert is None else PerturbationPlan.from_dict(pert)
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{w}.perturbation: {exc}") from None
            path = _field(s, "path", w)
            if not isinstance(path, str):
                raise ValueError(f"{w}.path must be a string")
            refs.append(SweepRef(SweepTag[tag], path, plan))
        try:
            entries.append(
                ManifestEntry(
                    patient_id=str(_field(raw, "patient_id", where)),
                    split=str(_field(raw, "split", where)),
                    presentation=PresentationLabel(_field(raw, "presentation", where)),
                    placenta=PlacentaLabel(_field(raw, "placenta", where)),
                    sweeps=tuple(refs),
                )
            )
        except ValueError as exc:
            raise ValueError(f"{where}: {exc}") from None
    return Manifest(int(seed), tuple(entries), mixture, root)


def dumps_manifest(manifest: Manifest) -> str:
    return json.dumps(manifest_to_dict(manifest), indent=2) + "\n"


def write_manifest(manifest: Manifest, path) -> None:
    _atomic_write(Path(path), dumps_manifest(manifest).encode("utf-8"))


def read_manifest(path) -> Manifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from None
    try:
        return manifest_from_dict(data, root=path.parent)
    except (ValueError, TypeError) as exc:
        raise ParseError(str(exc), path) from None


def validate_manifest(
    manifest: Manifest,
    split_sizes: dict[str, int] | tuple[int, int, int] | None = None,
    check_files: bool = True,
) -> None:
    """Raise ``ValidationError`` describing the first structural problem found."""
    seen = set()
    for e in manifest.entries:
        if e.patient_id in seen:
            raise ValidationError(f"duplicate patient_id {e.patient_id!r}")
        seen.add(e.patient_id)
        if e.split not in SPLITS:
            raise ValidationError(f"{e.patient_id}: unknown split {e.split!r}")
        tags = sorted(ref.tag for ref in e.sweeps)
        if tags != list(SweepTag):
            raise ValidationError(
                f"{e.patient_id}: needs exactly one sweep per tag, got {[t.name for t in tags]}"
            )
    if split_sizes is not None:
        if not isinstance(split_sizes, dict):
            split_sizes = dict(zip(SPLITS, split_sizes))
        counts = manifest.split_counts()
        for s, want in split_sizes.items():
            if counts.get(s, 0) != want:
                raise ValidationError(f"split {s!r} has {counts.get(s, 0)} patients, expected {want}")
    if check_files:
        for e, ref in manifest.refs(split=None):
            p = manifest.resolve(ref)
            if not p.is_file():
                raise ValidationError(f"{e.patient_id}/{ref.tag.name}: missing sweep file {p}")


# ---------------------------------------------------------------------------
# JSON lines


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)``; blank lines are skipped."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, path, lineno, exc.colno) from None
            if not isinstance(rec, dict):
                raise ParseError("record must be a JSON object", path, lineno, 1)
            yield lineno, rec


def write_jsonl(records, path) -> None:
    body = "".join(json.dumps(r, separators=(", ", ": ")) + "\n" for r in records)
    _atomic_write(Path(path), body.encode("utf-8"))

"""Core value types and the preprocessing geometry applied to every sweep.

A sweep is held as a read-only ``(T, H, W)`` uint8 array; a single frame is
one ``(H, W)`` slice of it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument

SPLITS = ("train", "val", "test")

DEFAULT_CANONICAL_LEN = 32
DEFAULT_FRAME_SIZE = 224
DEFAULT_MM_PER_PIXEL = 0.75


class SweepTag(enum.IntEnum):
    """The six protocol sweeps, in their fixed ordinal order."""

    C1 = 0
    C2 = 1
    C3 = 2
    L1 = 3
    M = 4
    R1 = 5

    def mirror(self) -> "SweepTag":
        return SweepTag(len(SweepTag) - 1 - int(self))


class PresentationLabel(str, enum.Enum):
    CEPHALIC = "Cephalic"
    NON_CEPHALIC = "NonCephalic"


class PlacentaLabel(str, enum.Enum):
    ANTERIOR = "Anterior"
    POSTERIOR = "Posterior"


def _check_u16(name: str, value: int) -> None:
    if not 1 <= value <= 0xFFFF:
        raise InvalidArgument(f"{name} must be in [1, 65535], got {value}")


@dataclass(frozen=True, eq=False)
class Sweep:
    """An ordered stack of 8-bit grayscale frames plus acquisition metadata.

    ``mm_per_pixel`` is stored at float32 precision so that a sweep survives a
    round trip through the binary format unchanged.
    """

    frames: np.ndarray
    sweep_tag: SweepTag
    patient_id: str
    mm_per_pixel: float = DEFAULT_MM_PER_PIXEL

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.dtype != np.uint8:
            raise InvalidArgument(f"frames must be uint8, got {frames.dtype}")
        if frames.ndim != 3:
            raise InvalidArgument(f"frames must be (T, H, W), got shape {frames.shape}")
        for name, n in zip(("frame count", "height", "width"), frames.shape):
            _check_u16(name, n)
        if not frames.flags.c_contiguous or frames.flags.writeable:
            frames = np.ascontiguousarray(frames).copy()
            frames.flags.writeable = False
        mm = float(np.float32(self.mm_per_pixel))
        if not (math.isfinite(mm) and mm > 0):
            raise InvalidArgument(f"mm_per_pixel must be positive, got {self.mm_per_pixel}")
        if len(self.patient_id.encode("utf-8")) > 0xFFFF:
            raise InvalidArgument("patient_id longer than 65535 UTF-8 bytes")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "sweep_tag", SweepTag(self.sweep_tag))
        object.__setattr__(self, "mm_per_pixel", mm)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def with_frames(self, frames: np.ndarray, mm_per_pixel: float | None = None) -> "Sweep":
        return Sweep(
            frames,
            self.sweep_tag,
            self.patient_id,
            self.mm_per_pixel if mm_per_pixel is None else mm_per_pixel,
        )

    def __eq__(self, other):
        if not isinstance(other, Sweep):
            return NotImplemented
        return (
            self.sweep_tag == other.sweep_tag
            and self.patient_id == other.patient_id
            and self.mm_per_pixel == other.mm_per_pixel
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self):
        t, h, w = self.frames.shape
        return (
            f"Sweep({self.patient_id!r}, {self.sweep_tag.name}, T={t}, {h}x{w}, "
            f"{self.mm_per_pixel:g} mm/px)"
        )


@dataclass(frozen=True)
class PerturbationPlan:
    """Ground-truth record of the deviations applied to one sweep."""

    reversed: bool = False
    flipped: bool = False
    incomplete: bool = False
    m: int | None = None
    n: int | None = None

    def __post_init__(self):
        if self.incomplete:
            if self.m is None or self.n is None:
                raise InvalidArgument("incomplete plan needs both m and n")
        elif self.m is not None or self.n is not None:
            raise InvalidArgument("m and n are only allowed on incomplete plans")

    @property
    def count(self) -> int:
        return int(self.reversed) + int(self.flipped) + int(self.incomplete)

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    def to_dict(self) -> dict:
        return {
            "reversed": self.reversed,
            "flipped": self.flipped,
            "incomplete": self.incomplete,
            "m": self.m,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PerturbationPlan":
        keys = {"reversed", "flipped", "incomplete", "m", "n"}
        if set(data) != keys:
            raise InvalidArgument(f"perturbation must have exactly the keys {sorted(keys)}")
        for k in ("reversed", "flipped", "incomplete"):
            if not isinstance(data[k], bool):
                raise InvalidArgument(f"perturbation.{k} must be a boolean")
        for k in ("m", "n"):
            v = data[k]
            if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
                raise InvalidArgument(f"perturbation.{k} must be an integer or null")
        return cls(**data)


@dataclass(frozen=True)
class Study:
    """One patient: six tagged sweeps plus patient-level labels."""

    patient_id: str
    sweeps: dict[SweepTag, Sweep] = field(repr=False)
    presentation: PresentationLabel
    placenta: PlacentaLabel
    split: str = "test"

    def __post_init__(self):
        if sorted(self.sweeps) != list(SweepTag):
            raise InvalidArgument(
                f"study {self.patient_id} must hold one sweep per tag, got {sorted(self.sweeps)}"
            )
        for tag, sw in self.sweeps.items():
            if sw.sweep_tag != tag:
                raise InvalidArgument(f"sweep filed under {tag.name} carries tag {sw.sweep_tag.name}")
        if self.split not in SPLITS:
            raise InvalidArgument(f"unknown split {self.split!r}")


def subsample_temporal(sweep: Sweep, target_len: int) -> Sweep:
    """Select ``target_len`` equally spaced frames: output i = input floor(i*T/target)."""
    if target_len < 1:
        raise InvalidArgument(f"target_len must be >= 1, got {target_len}")
    t = sweep.n_frames
    if t == target_len:
        return sweep
    idx = (np.arange(target_len, dtype=np.int64) * t) // target_len
    return sweep.with_frames(sweep.frames[idx])


def resize_spatial(sweep: Sweep, target_h: int, target_w: int) -> Sweep:
    """Bilinear (corner-aligned) resize of every frame, rounded and clamped to uint8."""
    if target_h < 1 or target_w < 1:
        raise InvalidArgument(f"resize targets must be >= 1, got {target_h}x{target_w}")
    if (target_h, target_w) == (sweep.height, sweep.width):
        return sweep
    return sweep.with_frames(kernels.resize_bilinear(sweep.frames, target_h, target_w))


def normalize_resolution(sweep: Sweep, target_mm_per_px: float = DEFAULT_MM_PER_PIXEL) -> Sweep:
    """Rescale frames so one pixel spans ``target_mm_per_px`` millimetres."""
    if not (math.isfinite(target_mm_per_px) and target_mm_per_px > 0):
        raise InvalidArgument(f"target resolution must be positive, got {target_mm_per_px}")
    scale = sweep.mm_per_pixel / target_mm_per_px
    h = max(1, int(math.floor(sweep.height * scale + 0.5)))
    w = max(1, int(math.floor(sweep.width * scale + 0.5)))
    resized = resize_spatial(sweep, h, w)
    return resized.with_frames(resized.frames, mm_per_pixel=target_mm_per_px)


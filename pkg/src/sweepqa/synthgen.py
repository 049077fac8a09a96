"""Procedural phantom sweeps whose ground truth is drawn into the pixels.

Every sweep carries four overlays on a flat background:

* a full-width Gaussian band whose row moves from the top (first frame) to
  the bottom (last frame), encoding scan direction and coverage;
* a bright square in the top-left corner, encoding probe orientation;
* a short vertical stripe at one of six mirror-symmetric columns, one per
  sweep tag;
* two disks on the vertical centre line, visible only mid-sweep, whose radius
  (small/large) encodes presentation (upper disk) and placenta (lower disk).

:class:`Layout` holds the geometry so decoders can read it back.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .fileio import Manifest, ManifestEntry, SweepRef, write_manifest, write_sweep
from .sweep import (
    DEFAULT_CANONICAL_LEN,
    DEFAULT_FRAME_SIZE,
    DEFAULT_MM_PER_PIXEL,
    SPLITS,
    PlacentaLabel,
    PresentationLabel,
    Study,
    Sweep,
    SweepTag,
)

BACKGROUND = 24.0
BAND_AMPLITUDE = 200.0
MARKER_AMPLITUDE = 120.0
STRIPE_AMPLITUDE = 100.0
BLOB_AMPLITUDE = 90.0

# fractions of the sweep (first frame 0, last frame 1)
BLOB_VISIBLE = (0.4, 0.6)
DECODE_WINDOW = (0.4, 0.6)

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int | str) -> int:
    """Stable 64-bit seed from a sequence of ints and strings."""
    h = 0x5EED5EED5EED5EED
    for part in parts:
        if isinstance(part, str):
            part = int.from_bytes(hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest(), "little")
        h = splitmix64(h ^ (int(part) & _MASK64))
    return h


def patient_seed(master_seed: int, index: int) -> int:
    return derive_seed(master_seed, index)


@dataclass(frozen=True)
class GenParams:
    master_seed: int = 0
    n_patients: int = 1250
    split_sizes: tuple[int, int, int] = (850, 200, 200)
    frame_h: int = DEFAULT_FRAME_SIZE
    frame_w: int = DEFAULT_FRAME_SIZE
    canonical_len: int = DEFAULT_CANONICAL_LEN
    noise_sigma: float = 4.0
    marker_size: int = 16
    p_cephalic: float = 0.7
    p_anterior: float = 0.5
    mm_per_pixel: float = DEFAULT_MM_PER_PIXEL

    def __post_init__(self):
        object.__setattr__(self, "split_sizes", tuple(int(s) for s in self.split_sizes))
        self.validate()

    def validate(self) -> None:
        if self.master_seed < 0:
            raise InvalidArgument("master_seed must be non-negative")
        if self.n_patients < 1:
            raise InvalidArgument("n_patients must be positive")
        if len(self.split_sizes) != 3 or min(self.split_sizes) < 0:
            raise InvalidArgument(f"split sizes must be three non-negative counts, got {self.split_sizes}")
        if sum(self.split_sizes) != self.n_patients:
            raise InvalidArgument(
                f"split sizes {self.split_sizes} sum to {sum(self.split_sizes)}, not {self.n_patients}"
            )
        if self.canonical_len < 2:
            raise InvalidArgument("canonical_len must be >= 2 so direction is encodable")
        if self.frame_h < 32 or self.frame_w < 32:
            raise InvalidArgument("frames must be at least 32x32 to hold the overlays")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be non-negative")
        if not 1 <= self.marker_size <= min(self.frame_h, self.frame_w) // 4:
            raise InvalidArgument("marker_size must be in [1, min(frame_h, frame_w)/4]")
        for name in ("p_cephalic", "p_anterior"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must be a probability")
        if not self.mm_per_pixel > 0:
            raise InvalidArgument("mm_per_pixel must be positive")

    def split_of(self, index: int) -> str:
        bound = 0
        for name, size in zip(SPLITS, self.split_sizes):
            bound += size
            if index < bound:
                return name
        raise IndexError(index)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_sizes"] = list(self.split_sizes)
        return d


@dataclass(frozen=True)
class Layout:
    """Pixel geometry of the overlays for one frame size."""

    height: int
    width: int
    canonical_len: int
    marker_size: int = 16

    @property
    def band_sigma(self) -> float:
        return max(1.5, self.height / 32)

    def band_row(self, k: int | np.ndarray, n_frames: int | None = None):
        n = self.canonical_len if n_frames is None else n_frames
        return np.asarray(k) / (n - 1) * (self.height - 1)

    @property
    def stripe_half(self) -> int:
        return max(1, self.width // 112)

    @property
    def tag_columns(self) -> tuple[int, ...]:
        # centres at (j + 0.5)/6 of the width; column j mirrors column 5 - j
        w1 = self.width - 1
        cols = [int(math.floor((j + 0.5) / 6 * w1 + 0.5)) for j in range(3)]
        return tuple(cols + [w1 - c for c in reversed(cols)])

    @property
    def stripe_rows(self) -> tuple[int, int]:
        h1 = self.height - 1
        return round(0.42 * h1), round(0.58 * h1) + 1

    @property
    def blob_radii(self) -> tuple[float, float]:
        small = max(2.0, round(0.045 * self.height))
        large = max(small + 3.0, round(0.09 * self.height))
        return small, large

    @property
    def blob_centers(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """(row, col) of the presentation disk and of the placenta disk."""
        h1, cc = self.height - 1, (self.width - 1) / 2
        return (round(0.22 * h1), cc), (round(0.78 * h1), cc)

    def visible_frames(self, n_frames: int | None = None) -> np.ndarray:
        n = self.canonical_len if n_frames is None else n_frames
        frac = np.arange(n) / (n - 1)
        return (frac >= BLOB_VISIBLE[0]) & (frac <= BLOB_VISIBLE[1])

    def decode_frames(self, n_frames: int) -> np.ndarray:
        """Indices of the mid-sweep frames the label decoders read."""
        if n_frames == 1:
            return np.array([0])
        lo = math.ceil(DECODE_WINDOW[0] * (n_frames - 1))
        hi = math.floor(DECODE_WINDOW[1] * (n_frames - 1))
        if hi < lo:
            lo = hi = (n_frames - 1) // 2
        return np.arange(lo, hi + 1)

    @classmethod
    def for_params(cls, params: GenParams) -> "Layout":
        return cls(params.frame_h, params.frame_w, params.canonical_len, params.marker_size)

    @classmethod
    def for_sweep(cls, sweep: Sweep, marker_size: int = 16, canonical_len: int | None = None) -> "Layout":
        return cls(sweep.height, sweep.width, canonical_len or sweep.n_frames, marker_size)


def _disk(layout: Layout, center: tuple[float, float], radius: float) -> np.ndarray:
    rr, cc = np.mgrid[0 : layout.height, 0 : layout.width]
    return ((rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2).astype(np.float32)


def render_clean(
    layout: Layout,
    tag: SweepTag,
    presentation: PresentationLabel,
    placenta: PlacentaLabel,
) -> np.ndarray:
    """Noise-free float32 ``(T, H, W)`` intensities before rounding."""
    h, w, n = layout.height, layout.width, layout.canonical_len
    static = np.full((h, w), BACKGROUND, dtype=np.float32)
    ms = layout.marker_size
    static[:ms, :ms] += MARKER_AMPLITUDE
    r0, r1 = layout.stripe_rows
    c = layout.tag_columns[int(tag)]
    hw = layout.stripe_half
    static[r0:r1, c - hw : c + hw + 1] += STRIPE_AMPLITUDE

    small, large = layout.blob_radii
    pres_c, plac_c = layout.blob_centers
    blobs = _disk(layout, pres_c, large if presentation is PresentationLabel.CEPHALIC else small)
    blobs += _disk(layout, plac_c, large if placenta is PlacentaLabel.ANTERIOR else small)
    blobs *= BLOB_AMPLITUDE

    rows = np.arange(h, dtype=np.float64)
    centers = layout.band_row(np.arange(n))
    band = BAND_AMPLITUDE * np.exp(-0.5 * ((rows[None, :] - centers[:, None]) / layout.band_sigma) ** 2)

    frames = static[None, :, :] + band.astype(np.float32)[:, :, None]
    frames[layout.visible_frames()] += blobs[None]
    return frames


def generate_sweep(
    seed: int,
    tag: SweepTag,
    presentation: PresentationLabel,
    placenta: PlacentaLabel,
    params: GenParams,
    patient_id: str = "synthetic",
) -> Sweep:
    tag = SweepTag(tag)
    layout = Layout.for_params(params)
    frames = render_clean(layout, tag, presentation, placenta)
    if params.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "noise", int(tag))))
        noise = rng.standard_normal(frames.shape, dtype=np.float32)
        noise *= np.float32(params.noise_sigma)
        frames += noise
    np.floor(frames + np.float32(0.5), out=frames)
    np.clip(frames, 0, 255, out=frames)
    return Sweep(frames.astype(np.uint8), tag, patient_id, params.mm_per_pixel)


def draw_labels(seed: int, params: GenParams) -> tuple[PresentationLabel, PlacentaLabel]:
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "labels")))
    u_pres, u_plac = rng.random(2)
    pres = PresentationLabel.CEPHALIC if u_pres < params.p_cephalic else PresentationLabel.NON_CEPHALIC
    plac = PlacentaLabel.ANTERIOR if u_plac < params.p_anterior else PlacentaLabel.POSTERIOR
    return pres, plac


def generate_study(seed: int, patient_id: str, params: GenParams, split: str = "test") -> Study:
    pres, plac = draw_labels(seed, params)
    sweeps = {tag: generate_sweep(seed, tag, pres, plac, params, patient_id) for tag in SweepTag}
    return Study(patient_id, sweeps, pres, plac, split)


def patient_id_for(index: int) -> str:
    return f"P{index:05d}"


def sweep_filename(patient_id: str, tag: SweepTag) -> str:
    return f"sweeps/{patient_id}_{SweepTag(tag).name}.bswp"


def _write_patient(job: tuple[GenParams, int, str]) -> ManifestEntry:
    params, index, out_dir = job
    pid = patient_id_for(index)
    split = params.split_of(index)
    study = generate_study(patient_seed(params.master_seed, index), pid, params, split)
    refs = []
    for tag in SweepTag:
        rel = sweep_filename(pid, tag)
        write_sweep(study.sweeps[tag], Path(out_dir) / rel)
        refs.append(SweepRef(tag, rel, None))
    return ManifestEntry(pid, split, study.presentation, study.placenta, tuple(refs))


def generate_corpus(
    params: GenParams,
    out_dir,
    splits: tuple[str, ...] | None = None,
    workers: int = 1,
) -> Manifest:
    """Write ``n_patients * 6`` sweeps plus ``manifest.json`` under ``out_dir``.

    ``splits`` restricts generation to some partitions; the patients written
    are identical to those of the full corpus because seeds depend only on the
    patient index.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = [
        i for i in range(params.n_patients) if splits is None or params.split_of(i) in splits
    ]
    jobs = [(params, i, str(out_dir)) for i in indices]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_write_patient, jobs, chunksize=4))
    else:
        entries = [_write_patient(j) for j in jobs]
    manifest = Manifest(params.master_seed, tuple(entries), None, out_dir)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest

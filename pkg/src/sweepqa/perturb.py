"""Protocol-deviation operators and the probabilistic mixture that assigns them."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .fileio import Manifest, ManifestEntry, SweepRef, validate_manifest, write_manifest, write_sweep
from .sweep import DEFAULT_CANONICAL_LEN, PerturbationPlan, Sweep, SweepTag
from .synthgen import derive_seed

KINDS = ("reversal", "flip", "incomplete")


@dataclass(frozen=True)
class MixtureSpec:
    """Probabilities of applying exactly 0, 1, 2 or 3 perturbations."""

    p0: float = 0.50
    p1: float = 0.30
    p2: float = 0.15
    p3: float = 0.05

    def __post_init__(self):
        probs = self.as_tuple()
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise InvalidArgument(f"mixture probabilities must lie in [0, 1], got {probs}")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise InvalidArgument(f"mixture probabilities must sum to 1, got {math.fsum(probs)}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p0, self.p1, self.p2, self.p3)

    @classmethod
    def parse(cls, text: str) -> "MixtureSpec":
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != 4:
            raise InvalidArgument(f"mixture needs four comma-separated probabilities, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError:
            raise InvalidArgument(f"mixture is not numeric: {text!r}") from None


@dataclass(frozen=True)
class TruncationRange:
    """Inclusive ranges for the start index ``m`` and length ``n`` of an incomplete sweep."""

    m_min: int = 0
    m_max: int = 8
    n_min: int = 8
    n_max: int = 24
    canonical_len: int = DEFAULT_CANONICAL_LEN

    def __post_init__(self):
        if not (0 <= self.m_min <= self.m_max and 1 <= self.n_min <= self.n_max):
            raise InvalidArgument(f"bad truncation ranges {self}")
        if self.m_max + self.n_max > self.canonical_len:
            raise InvalidArgument(
                f"m_max + n_max = {self.m_max + self.n_max} exceeds canonical_len {self.canonical_len}"
            )

    def check(self, m: int, n: int) -> None:
        if not (self.m_min <= m <= self.m_max):
            raise InvalidArgument(f"m={m} outside [{self.m_min}, {self.m_max}]")
        if not (self.n_min <= n <= self.n_max):
            raise InvalidArgument(f"n={n} outside [{self.n_min}, {self.n_max}]")
        if m + n > self.canonical_len:
            raise InvalidArgument(f"m + n = {m + n} exceeds {self.canonical_len}")


DEFAULT_RANGE = TruncationRange()


def reverse(sweep: Sweep) -> Sweep:
    return sweep.with_frames(sweep.frames[::-1])


def flip_horizontal(sweep: Sweep) -> Sweep:
    return sweep.with_frames(sweep.frames[:, :, ::-1])


def truncate_resample(sweep: Sweep, m: int, n: int, limits: TruncationRange = DEFAULT_RANGE) -> Sweep:
    """Keep frames ``m .. m+n-1`` and stretch them back to the canonical length.

    Output frame i is kept frame ``floor(i * n / L)``, so sequence length
    gives nothing away.
    """
    limits.check(m, n)
    L = limits.canonical_len
    if sweep.n_frames != L:
        raise InvalidArgument(f"truncation needs a {L}-frame sweep, got {sweep.n_frames}")
    idx = m + (np.arange(L, dtype=np.int64) * n) // L
    return sweep.with_frames(sweep.frames[idx])


def apply_plan(sweep: Sweep, plan: PerturbationPlan, limits: TruncationRange = DEFAULT_RANGE) -> Sweep:
    """Apply truncation, then reversal, then flip, as the plan requests."""
    out = sweep
    if plan.incomplete:
        out = truncate_resample(out, plan.m, plan.n, limits)
    if plan.reversed:
        out = reverse(out)
    if plan.flipped:
        out = flip_horizontal(out)
    return out


def sample_plan(
    rng: np.random.Generator,
    mixture: MixtureSpec = MixtureSpec(),
    limits: TruncationRange = DEFAULT_RANGE,
) -> PerturbationPlan:
    """Draw how many perturbations, then which ones, then the truncation window."""
    probs = mixture.as_tuple()
    u = rng.random()
    # falls through to the last non-zero bin if rounding leaves the cumsum short of 1
    k = max(i for i, p in enumerate(probs) if p > 0)
    cum = 0.0
    for i, p in enumerate(probs):
        cum += p
        if u < cum:
            k = i
            break
    chosen = set(rng.permutation(3)[:k].tolist())
    m = n = None
    if 2 in chosen:
        m = int(rng.integers(limits.m_min, limits.m_max + 1))
        n = int(rng.integers(limits.n_min, limits.n_max + 1))
    return PerturbationPlan(reversed=0 in chosen, flipped=1 in chosen, incomplete=2 in chosen, m=m, n=n)


def plan_rng(master_seed: int, patient_id: str, tag: SweepTag) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, "perturb", patient_id, int(tag))))


def perturbed_filename(patient_id: str, tag: SweepTag) -> str:
    return f"sweeps/{patient_id}_{SweepTag(tag).name}.bswp"


def _perturb_entry(job) -> ManifestEntry:
    root, entry, mixture, limits, master_seed, out_dir = job
    manifest = Manifest(master_seed, (), None, root)
    refs = []
    for ref in entry.sweeps:
        if entry.split != "test":
            src = manifest.resolve(ref).resolve()
            rel = os.path.relpath(src, Path(out_dir).resolve())
            refs.append(SweepRef(ref.tag, Path(rel).as_posix(), None))
            continue
        plan = sample_plan(plan_rng(master_seed, entry.patient_id, ref.tag), mixture, limits)
        sweep = apply_plan(manifest.load(ref), plan, limits)
        rel = perturbed_filename(entry.patient_id, ref.tag)
        write_sweep(sweep, Path(out_dir) / rel)
        refs.append(SweepRef(ref.tag, rel, plan))
    return ManifestEntry(entry.patient_id, entry.split, entry.presentation, entry.placenta, tuple(refs))


def perturb_corpus(
    manifest: Manifest,
    mixture: MixtureSpec,
    master_seed: int,
    out_dir,
    limits: TruncationRange = DEFAULT_RANGE,
    workers: int = 1,
) -> Manifest:
    """Perturb every test sweep and record its plan; train/val entries point at the originals."""
    validate_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(manifest.root, e, mixture, limits, master_seed, str(out_dir)) for e in manifest.entries]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_perturb_entry, jobs, chunksize=4))
    else:
        entries = [_perturb_entry(j) for j in jobs]
    out = Manifest(master_seed, tuple(entries), mixture.as_tuple(), out_dir)
    write_manifest(out, out_dir / "manifest.json")
    return out

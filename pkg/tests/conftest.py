from __future__ import annotations

import numpy as np
import pytest

from sweepqa.perturb import MixtureSpec, perturb_corpus
from sweepqa.sweep import PlacentaLabel, PresentationLabel, Sweep, SweepTag
from sweepqa.synthgen import GenParams, generate_corpus, generate_sweep

SMALL = GenParams(master_seed=11, n_patients=8, split_sizes=(3, 1, 4), frame_h=64, frame_w=64, marker_size=8)


def small_sweep(tag=SweepTag.C1, seed=1, sigma=0.0, pres=PresentationLabel.CEPHALIC, plac=PlacentaLabel.ANTERIOR, size=64):
    params = GenParams(
        master_seed=0, n_patients=1, split_sizes=(0, 0, 1), frame_h=size, frame_w=size,
        marker_size=max(1, size // 8), noise_sigma=sigma,
    )
    return generate_sweep(seed, tag, pres, plac, params)


def random_sweep(rng: np.random.Generator, t=None, h=None, w=None) -> Sweep:
    t = t or int(rng.integers(1, 12))
    h = h or int(rng.integers(1, 20))
    w = w or int(rng.integers(1, 20))
    frames = rng.integers(0, 256, size=(t, h, w), dtype=np.uint8)
    return Sweep(frames, SweepTag(int(rng.integers(0, 6))), f"p{int(rng.integers(0, 10**6))}", float(rng.uniform(0.1, 2.0)))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A tiny clean corpus plus its perturbed twin (64x64 frames)."""
    root = tmp_path_factory.mktemp("small")
    clean = generate_corpus(SMALL, root / "corpus")
    pert = perturb_corpus(clean, MixtureSpec(0.25, 0.25, 0.25, 0.25), 5, root / "perturbed")
    return clean, pert


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None or (report.when != "call" and report.passed):
        return
    number, title = marks
    rec = _CRITERIA.setdefault(number, {"title": title, "failed": [], "ran": False})
    rec["ran"] = True
    if report.failed or report.skipped:
        rec["failed"].append(report.nodeid.split("::")[-1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        rec = _CRITERIA[number]
        status = "FAIL" if rec["failed"] else "PASS"
        detail = f"  ({', '.join(sorted(set(rec['failed'])))})" if rec["failed"] else ""
        terminalreporter.write_line(f"{status} criterion {number:2d}: {rec['title']}{detail}")

"""Quality assessment of blind-sweep ultrasound acquisitions on synthetic corpora."""

from .kernels import BACKEND
from .sweep import PerturbationPlan, PlacentaLabel, PresentationLabel, Study, Sweep, SweepTag

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "PerturbationPlan",
    "PlacentaLabel",
    "PresentationLabel",
    "Study",
    "Sweep",
    "SweepTag",
]

"""Randomized norm and trace estimation with rank-one Kronecker probes."""

__version__ = "0.1.0"

from .probes import Distribution, RankOneProbe, draw_probe, draw_probe_batch

__all__ = [
    "Distribution",
    "RankOneProbe",
    "draw_probe",
    "draw_probe_batch",
    "__version__",
]

"""Pilot-wave trajectory ensembles and quantum relaxation in a 1D box."""

from pilotwave.spectral import (
    BoxSuperposition,
    WavePoint,
    mode_energy,
    momentum_spread,
    quantum_timescale,
)

__version__ = "0.1.0"

__all__ = [
    "BoxSuperposition",
    "WavePoint",
    "mode_energy",
    "momentum_spread",
    "quantum_timescale",
    "__version__",
]

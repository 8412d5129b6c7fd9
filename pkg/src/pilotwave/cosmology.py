"""Order-of-magnitude cosmology estimates for relaxation suppression.

Everything here is plain arithmetic on CODATA constants: how the
relaxation timescale of a nonequilibrium ensemble compares with the
cosmological expansion timescale as a function of temperature, where the
two cross, and how far primordial coarse-graining lengths get stretched
by expansion. Energies enter in GeV, lengths in cm, times leave in
seconds. Conversions go through hbar and hbar*c only, so the dimensional
bookkeeping stays auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CONSTANTS",
    "CosmoConstants",
    "CosmoQuery",
    "SuppressionRow",
    "expansion_timescale",
    "relaxation_timescale_thermal",
    "stretch_lengthscale",
    "suppression_report",
]

_HBAR = 1.054571817e-34  # J s
_C = 2.99792458e8  # m / s
_K_B = 1.380649e-23  # J / K
_G = 6.67430e-11  # m^3 / (kg s^2)
_GEV = 1.602176634e-10  # J
_CM = 1e-2  # m


@dataclass(frozen=True)
class CosmoConstants:
    """SI constants plus the derived Planck scales.

    The Planck length is stored alongside G; consistency between the two
    is validated to 1e-3 relative so a typo in either cannot slip through.
    """

    hbar: float = _HBAR
    c: float = _C
    k_boltzmann: float = _K_B
    gravity: float = _G

    def __post_init__(self):
        rel = abs(self.planck_length / 1.616255e-35 - 1.0)
        if rel > 1e-3:
            raise ValueError(
                f"Planck length from (hbar, G, c) is off by {rel:.1e} relative"
            )

    @property
    def planck_length(self) -> float:
        return np.sqrt(self.hbar * self.gravity / self.c**3)

    @property
    def planck_time(self) -> float:
        return np.sqrt(self.hbar * self.gravity / self.c**5)

    @property
    def planck_temperature(self) -> float:
        return np.sqrt(self.hbar * self.c**5 / self.gravity) / self.k_boltzmann

    @property
    def planck_energy_gev(self) -> float:
        return np.sqrt(self.hbar * self.c**5 / self.gravity) / _GEV


CONSTANTS = CosmoConstants()


def _energy_joule(kt_gev: float) -> float:
    if kt_gev <= 0:
        raise ValueError("temperature must be positive")
    return kt_gev * _GEV


def _energy_to_time(kt_gev: float) -> float:
    """hbar / kT: the only admissible energy-to-time conversion."""
    return CONSTANTS.hbar / _energy_joule(kt_gev)


def _energy_to_length(kt_gev: float) -> float:
    """hbar c / kT: the only admissible energy-to-length conversion."""
    return CONSTANTS.hbar * CONSTANTS.c / _energy_joule(kt_gev)


def expansion_timescale(kt_gev: float) -> float:
    """Radiation-era expansion timescale a/adot in seconds.

    The standard estimate (1 s) (1 MeV / kT)^2; the prefactor hides the
    effective-species factor, which order-of-magnitude work ignores.
    """
    _energy_joule(kt_gev)
    return (1e-3 / kt_gev) ** 2


def relaxation_timescale_thermal(kt_gev: float, dx_cm: float = None) -> float:
    """Relaxation timescale in seconds at temperature kT.

    With an explicit coarse-graining length: hbar^2 c / (dx (kT)^2).
    Without one, dx defaults to the thermal length hbar c / kT (no 2 pi),
    and the expression collapses to hbar / kT.
    """
    kt_j = _energy_joule(kt_gev)
    if dx_cm is None:
        dx_m = _energy_to_length(kt_gev)
    elif dx_cm <= 0:
        raise ValueError("coarse-graining length must be positive")
    else:
        dx_m = dx_cm * _CM
    return CONSTANTS.hbar**2 * CONSTANTS.c / (dx_m * kt_j**2)


@dataclass(frozen=True)
class SuppressionRow:
    kt_gev: float
    relaxation_s: float
    expansion_s: float

    @property
    def suppressed(self) -> bool:
        return self.relaxation_s >= self.expansion_s


@dataclass(frozen=True)
class SuppressionReport:
    rows: tuple
    crossover_gev: float

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)


def suppression_report(kt_values_gev) -> SuppressionReport:
    """Tabulate relaxation vs expansion timescales over a temperature list.

    Relaxation uses the thermal-default coarse-graining length. The ratio
    of the two timescales grows linearly in kT, so there is a unique
    crossover temperature kT = (1e-6 s) GeV / hbar, about 1.5e18 GeV; it
    is reported whenever the input range brackets it and as NaN otherwise.
    """
    arr = np.atleast_1d(np.asarray(kt_values_gev, dtype=float)).ravel()
    kts = sorted(float(k) for k in arr)
    rows = tuple(
        SuppressionRow(
            kt_gev=kt,
            relaxation_s=relaxation_timescale_thermal(kt),
            expansion_s=expansion_timescale(kt),
        )
        for kt in kts
    )
    crossover = float("nan")
    if rows:
        # ratio tau/t_exp = (hbar/GeV_J) kT / 1e-6 s is exactly linear in kT
        exact = 1e-6 / (CONSTANTS.hbar / _GEV)
        lo, hi = rows[0].kt_gev, rows[-1].kt_gev
        if lo <= exact <= hi:
            crossover = exact
    return SuppressionReport(rows=rows, crossover_gev=crossover)


def stretch_lengthscale(delta0_cm: float, expansion_factor: float) -> float:
    """Disequilibrium lengthscale after expansion by the given factor."""
    if delta0_cm <= 0 or expansion_factor <= 0:
        raise ValueError("lengthscale and expansion factor must be positive")
    return delta0_cm * expansion_factor


@dataclass(frozen=True)
class CosmoQuery:
    """Inputs for one CLI evaluation, all in the module's native units."""

    kt_gev: float = None
    dx_cm: float = None
    delta0_cm: float = None
    expansion_factor: float = None

    def __post_init__(self):
        for name in ("kt_gev", "dx_cm", "delta0_cm", "expansion_factor"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive")

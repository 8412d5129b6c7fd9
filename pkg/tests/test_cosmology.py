import math

import numpy as np
import pytest

from pilotwave.cosmology import (
    CONSTANTS,
    CosmoConstants,
    CosmoQuery,
    expansion_timescale,
    relaxation_timescale_thermal,
    stretch_lengthscale,
    suppression_report,
)


class TestConstants:
    def test_planck_length(self):
        assert CONSTANTS.planck_length == pytest.approx(1.616255e-35, rel=1e-6)

    def test_planck_time(self):
        assert CONSTANTS.planck_time == pytest.approx(5.391247e-44, rel=1e-5)

    def test_planck_energy(self):
        assert CONSTANTS.planck_energy_gev == pytest.approx(1.2209e19, rel=1e-4)

    def test_inconsistent_constants_rejected(self):
        with pytest.raises(ValueError):
            CosmoConstants(
                hbar=CONSTANTS.hbar * 1.01,
                c=CONSTANTS.c,
                k_boltzmann=CONSTANTS.k_boltzmann,
                gravity=CONSTANTS.gravity,
            )


class TestExpansionTimescale:
    def test_one_mev_anchor(self):
        assert expansion_timescale(1e-3) == pytest.approx(1.0, rel=1e-12)

    def test_one_gev(self):
        assert expansion_timescale(1.0) == pytest.approx(1e-6, rel=1e-12)

    def test_grand_unification_epoch(self):
        assert expansion_timescale(1e18) == pytest.approx(1e-42, rel=1e-12)

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            expansion_timescale(0.0)


class TestRelaxationTimescale:
    def test_thermal_default_collapses(self):
        # with the thermal coarse-graining length the expression is hbar/kT
        kt_j = 1.602176634e-10
        assert relaxation_timescale_thermal(1.0) == pytest.approx(
            CONSTANTS.hbar / kt_j, rel=1e-12
        )

    def test_high_temperature_value(self):
        assert relaxation_timescale_thermal(1e18) == pytest.approx(6.5821e-43, rel=1e-4)

    def test_explicit_length_scaling(self):
        # twice the coarse-graining length means half the timescale
        base = relaxation_timescale_thermal(1.0, dx_cm=1e-14)
        assert relaxation_timescale_thermal(1.0, dx_cm=2e-14) == pytest.approx(
            base / 2.0, rel=1e-12
        )

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            relaxation_timescale_thermal(-1.0)
        with pytest.raises(ValueError):
            relaxation_timescale_thermal(1.0, dx_cm=0.0)


class TestSuppressionReport:
    def test_crossover_location(self):
        report = suppression_report(np.logspace(15, 19, 9))
        assert 1e17 < report.crossover_gev < 1e19
        assert report.crossover_gev == pytest.approx(1.5193e18, rel=1e-4)

    def test_crossover_exact_expression(self):
        report = suppression_report([1e17, 1e19])
        expected = 1e-6 * 1.602176634e-10 / CONSTANTS.hbar
        assert report.crossover_gev == pytest.approx(expected, rel=1e-12)

    def test_crossover_nan_when_not_bracketed(self):
        report = suppression_report([1e-3, 1.0])
        assert math.isnan(report.crossover_gev)

    def test_empty_input(self):
        report = suppression_report([])
        assert len(report) == 0
        assert math.isnan(report.crossover_gev)

    def test_rows_sorted_and_monotone(self):
        report = suppression_report([1e10, 1e-3, 1.0, 1e18])
        kts = [row.kt_gev for row in report]
        assert kts == sorted(kts)
        relax = np.array([row.relaxation_s for row in report])
        expand = np.array([row.expansion_s for row in report])
        assert np.all(np.diff(relax) < 0)
        assert np.all(np.diff(expand) < 0)
        assert np.all(np.diff(relax / expand) > 0)

    def test_suppression_flag_flips_at_crossover(self):
        report = suppression_report([1e-3, 1.0, 1e10, 1e18, 1e19])
        flags = [row.suppressed for row in report]
        assert flags == [False, False, False, False, True]

    def test_low_temperature_never_suppressed(self):
        (row,) = suppression_report([1e-3]).rows
        assert not row.suppressed
        assert row.relaxation_s < row.expansion_s


class TestStretch:
    def test_identity_factor(self):
        assert stretch_lengthscale(3.2e-5, 1.0) == 3.2e-5

    def test_planck_relic_reaches_macroscopic_scale(self):
        # a Planck-length feature inflated by 1e32 lands near a millimeter
        start_cm = CONSTANTS.planck_length / 1e-2
        assert stretch_lengthscale(start_cm, 1e32) == pytest.approx(0.16, rel=0.02)

    def test_large_expansion_budget(self):
        assert stretch_lengthscale(1e-2, 1e30) == pytest.approx(1e28, rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            stretch_lengthscale(0.0, 2.0)
        with pytest.raises(ValueError):
            stretch_lengthscale(1.0, -2.0)


class TestCosmoQuery:
    def test_accepts_partial_fields(self):
        q = CosmoQuery(kt_gev=1.0)
        assert q.kt_gev == 1.0
        assert q.dx_cm is None

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kt_gev": -1.0},
            {"dx_cm": 0.0},
            {"delta0_cm": -1e-3},
            {"expansion_factor": 0.0},
        ],
    )
    def test_rejects_nonpositive_fields(self, kwargs):
        with pytest.raises(ValueError):
            CosmoQuery(**kwargs)

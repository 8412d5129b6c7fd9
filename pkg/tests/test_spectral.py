import numpy as np
import pytest

from pilotwave.spectral import (
    BoxSuperposition,
    mode_energy,
    momentum_spread,
    quantum_timescale,
)


def make_state(seed=1, n_modes=10, length=100.0):
    return BoxSuperposition.with_random_phases(
        length, n_modes, np.random.default_rng(seed)
    )


class TestModeEnergy:
    def test_ground_energy_reference_box(self):
        assert mode_energy(1, 100.0) == pytest.approx(np.pi**2 / 20000, rel=1e-14)

    def test_unit_wavenumber_box(self):
        assert mode_energy(1, np.pi) == pytest.approx(0.5, rel=1e-14)

    def test_quadratic_in_mode_number(self):
        assert mode_energy(3, 100.0) == pytest.approx(9 * mode_energy(1, 100.0))

    @pytest.mark.parametrize("n,length", [(0, 100.0), (-1, 100.0), (1, 0.0), (1, -5.0)])
    def test_rejects_bad_inputs(self, n, length):
        with pytest.raises(ValueError):
            mode_energy(n, length)

    def test_period_matches_ground_energy(self):
        state = make_state()
        assert state.period == pytest.approx(2 * np.pi / mode_energy(1, 100.0))
        assert state.period == pytest.approx(12732.3954, abs=1e-3)


class TestStateConstruction:
    def test_default_amplitudes_normalized(self):
        state = make_state(n_modes=7)
        assert np.sum(state.amplitudes**2) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_unnormalized_amplitudes(self):
        with pytest.raises(ValueError):
            BoxSuperposition(length=100.0, phases=np.zeros(2), amplitudes=np.array([1.0, 1.0]))

    def test_rejects_empty_modes(self):
        with pytest.raises(ValueError):
            BoxSuperposition(length=100.0, phases=np.zeros(0), amplitudes=np.zeros(0))

    def test_phases_reproducible_from_seed(self):
        a = make_state(seed=42)
        b = make_state(seed=42)
        assert np.array_equal(a.phases, b.phases)


class TestEvaluation:
    def test_wavepoint_density_consistent(self):
        state = make_state()
        pt = state.evaluate(37.3, 12.0)
        assert pt.density == pytest.approx(abs(pt.psi) ** 2, abs=1e-12)

    def test_density_matches_psi_batch(self):
        state = make_state(seed=3)
        xs = np.linspace(0.5, 99.5, 41)
        assert np.allclose(state.density(xs, 7.0), np.abs(state.psi(xs, 7.0)) ** 2)

    def test_wall_values_vanish(self):
        state = make_state(seed=5)
        assert state.psi(np.array([0.0, 100.0]), 3.0) == pytest.approx([0.0, 0.0], abs=1e-13)

    def test_single_mode_density_is_stationary(self):
        state = BoxSuperposition.with_random_phases(100.0, 1, np.random.default_rng(0))
        xs = np.linspace(1.0, 99.0, 17)
        assert np.allclose(state.density(xs, 0.0), state.density(xs, 811.7))

    def test_velocity_zero_for_single_mode(self):
        state = BoxSuperposition.with_random_phases(100.0, 1, np.random.default_rng(0))
        v, den = state.velocity_and_density(np.array([25.0, 50.0, 75.0]), 4.0)
        assert np.allclose(v, 0.0, atol=1e-14)
        assert np.all(den > 0)

    def test_velocity_finite_above_node_guard(self):
        state = make_state(seed=9)
        xs = np.linspace(0.05, 99.95, 4001)
        v, den = state.velocity_and_density(xs, 23.0)
        ok = den > state.node_guard
        assert np.all(np.isfinite(v[ok]))

    def test_gradient_matches_finite_difference(self):
        state = make_state(seed=2)
        x = 41.27
        h = 1e-6
        psi, dpsi = state.psi_and_gradient(np.array([x]), 9.0)
        fd = (state.psi(np.array([x + h]), 9.0) - state.psi(np.array([x - h]), 9.0)) / (2 * h)
        assert dpsi[0] == pytest.approx(fd[0], rel=1e-8)

    def test_periodicity_in_time(self):
        state = make_state(seed=11)
        xs = np.linspace(0.5, 99.5, 31)
        assert np.allclose(state.psi(xs, 17.0), state.psi(xs, 17.0 + state.period), atol=1e-9)


class TestDensityCdf:
    def test_endpoints(self):
        state = make_state(seed=4)
        assert state.density_cdf(np.array([0.0]), 5.0)[0] == pytest.approx(0.0, abs=1e-13)
        assert state.density_cdf(np.array([100.0]), 5.0)[0] == pytest.approx(1.0, abs=1e-12)

    def test_monotone(self):
        state = make_state(seed=4)
        xs = np.linspace(0.0, 100.0, 501)
        cdf = state.density_cdf(xs, 31.0)
        assert np.all(np.diff(cdf) >= -1e-14)

    def test_derivative_matches_density(self):
        state = make_state(seed=8)
        xs = np.linspace(2.0, 98.0, 25)
        h = 1e-5
        deriv = (state.density_cdf(xs + h, 13.0) - state.density_cdf(xs - h, 13.0)) / (2 * h)
        assert np.allclose(deriv, state.density(xs, 13.0), rtol=1e-6, atol=1e-10)

    def test_cell_mass_against_quadrature(self):
        state = make_state(seed=6)
        lo, hi = 20.0, 21.0
        grid = np.linspace(lo, hi, 20001)
        quad = np.trapezoid(state.density(grid, 60.0), grid)
        exact = state.density_cdf(np.array([hi]), 60.0)[0] - state.density_cdf(np.array([lo]), 60.0)[0]
        assert exact == pytest.approx(quad, rel=1e-9)


class TestScales:
    def test_quantum_timescale_inverse_energy_spread(self):
        state = make_state()
        energies = np.array([mode_energy(n, 100.0) for n in range(1, 11)])
        spread = np.std(energies)
        assert quantum_timescale(state) == pytest.approx(1.0 / spread, rel=1e-12)

    def test_quantum_timescale_undefined_for_single_mode(self):
        state = BoxSuperposition.with_random_phases(100.0, 1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            quantum_timescale(state)

    def test_momentum_spread_grows_with_modes(self):
        narrow = make_state(seed=1, n_modes=5)
        wide = make_state(seed=1, n_modes=30)
        assert momentum_spread(wide) > momentum_spread(narrow)

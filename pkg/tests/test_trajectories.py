import numpy as np
import pytest
from scipy.integrate import solve_ivp

from pilotwave.spectral import BoxSuperposition, mode_energy
from pilotwave.trajectories import (
    COMPLETED,
    NODE_STALLED,
    IntegratorConfig,
    NodeStallError,
    backtrack,
    backtrack_many,
    endpoint_error_estimate,
    evolve_ensemble,
    integrate,
)


def make_state(seed=3, n_modes=10, length=100.0):
    return BoxSuperposition.with_random_phases(
        length, n_modes, np.random.default_rng(seed)
    )


def two_mode_state(length=10.0):
    # equal weights, aligned phases: psi has an exact zero at x = L/3
    # whenever the relative mode phase reaches pi
    return BoxSuperposition(
        length=length, phases=np.zeros(2), amplitudes=np.full(2, np.sqrt(0.5))
    )


class TestSingleTrajectory:
    def test_stationary_state_does_not_move(self):
        state = BoxSuperposition.with_random_phases(100.0, 1, np.random.default_rng(0))
        traj = integrate(state, 42.0, 0.0, 100.0)
        assert traj.status == COMPLETED
        assert traj.positions[-1] == pytest.approx(42.0, abs=1e-12)

    def test_against_independent_integrator(self):
        state = make_state()
        traj = integrate(state, 30.0, 0.0, 25.0)

        def rhs(t, y):
            v, _ = state.velocity_and_density(np.asarray(y), t)
            return v

        ref = solve_ivp(rhs, (0.0, 25.0), [30.0], method="DOP853", rtol=1e-12, atol=1e-12)
        assert traj.positions[-1] == pytest.approx(ref.y[0, -1], abs=1e-7)

    def test_step_count_respects_max_step(self):
        state = make_state()
        traj = integrate(state, 30.0, 0.0, 25.0)
        assert traj.n_steps >= 25.0 / 0.5

    def test_stays_inside_box(self):
        state = make_state(seed=12)
        for x0 in (1.0, 50.0, 99.0):
            traj = integrate(state, x0, 0.0, 60.0)
            assert np.all(traj.positions >= 0.0)
            assert np.all(traj.positions <= 100.0)

    def test_reverse_integration_recovers_start(self):
        state = make_state(seed=7)
        traj = integrate(state, 61.0, 0.0, 35.0)
        origin = backtrack(state, traj.positions[-1], 35.0)
        assert origin == pytest.approx(61.0, abs=1e-6)


class TestEnsemble:
    def test_forward_backward_round_trip(self):
        state = make_state()
        xs = np.linspace(5.0, 95.0, 19)
        fwd = evolve_ensemble(state, xs, 0.0, 40.0)
        assert fwd.stalled_fraction == 0.0
        origins, status = backtrack_many(state, fwd.positions, np.full(xs.size, 40.0))
        assert np.all(status == 0)
        assert np.max(np.abs(origins - xs)) < 1e-6

    def test_batch_matches_solo_backtrack_exactly(self):
        state = make_state()
        fwd = evolve_ensemble(state, np.array([20.0, 50.0, 80.0]), 0.0, 40.0)
        origins, _ = backtrack_many(state, fwd.positions, np.full(3, 40.0))
        solo = backtrack(state, fwd.positions[1], 40.0)
        assert solo == origins[1]

    def test_deterministic_repeat(self):
        state = make_state(seed=21)
        xs = np.linspace(10.0, 90.0, 9)
        a = evolve_ensemble(state, xs, 0.0, 30.0)
        b = evolve_ensemble(state, xs, 0.0, 30.0)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.n_steps, b.n_steps)

    def test_order_preserved_in_one_dimension(self):
        # non-crossing property of the flow: sorted starts stay sorted
        state = make_state(seed=14)
        xs = np.linspace(2.0, 98.0, 49)
        fwd = evolve_ensemble(state, xs, 0.0, 120.0)
        assert np.all(np.diff(fwd.positions) > 0)


class TestNodeHandling:
    def test_start_on_node_is_flagged_not_crashed(self):
        state = two_mode_state()
        t_node = np.pi / (3 * mode_energy(1, state.length))
        res = evolve_ensemble(
            state,
            np.array([state.length / 3, 5.0]),
            t_node,
            t_node + 1.0,
            max_stall_fraction=0.9,
        )
        assert res.statuses[0] == NODE_STALLED
        assert np.isnan(res.positions[0])
        assert res.statuses[1] == COMPLETED
        assert np.isfinite(res.positions[1])

    def test_stall_budget_enforced(self):
        state = two_mode_state()
        t_node = np.pi / (3 * mode_energy(1, state.length))
        with pytest.raises(NodeStallError):
            evolve_ensemble(
                state,
                np.array([state.length / 3]),
                t_node,
                t_node + 1.0,
                max_stall_fraction=0.0,
            )

    def test_backtrack_many_marks_stalls_nan(self):
        state = two_mode_state()
        t_node = np.pi / (3 * mode_energy(1, state.length))
        origins, status = backtrack_many(
            state, np.array([state.length / 3, 7.0]), np.array([t_node, t_node])
        )
        assert np.isnan(origins[0]) and status[0] != 0
        assert np.isfinite(origins[1]) and status[1] == 0


class TestAccuracyControls:
    def test_tighter_tolerance_reduces_round_trip_error(self):
        state = make_state(seed=5)
        xs = np.linspace(5.0, 95.0, 13)
        errors = {}
        for tol in (1e-6, 1e-9):
            cfg = IntegratorConfig(rel_tol=tol, abs_tol=tol)
            fwd = evolve_ensemble(state, xs, 0.0, 60.0, cfg)
            origins, _ = backtrack_many(state, fwd.positions, np.full(xs.size, 60.0), cfg)
            errors[tol] = np.max(np.abs(origins - xs))
        assert errors[1e-9] < errors[1e-6] / 10

    def test_endpoint_error_estimate_bounds_true_error(self):
        state = make_state(seed=5)
        est = endpoint_error_estimate(state, 30.0, 0.0, 25.0)
        assert est > 0

        def rhs(t, y):
            v, _ = state.velocity_and_density(np.asarray(y), t)
            return v

        ref = solve_ivp(rhs, (0.0, 25.0), [30.0], method="DOP853", rtol=1e-12, atol=1e-12)
        traj = integrate(state, 30.0, 0.0, 25.0)
        true_err = abs(traj.positions[-1] - ref.y[0, -1])
        assert true_err < 10 * est + 1e-12

    def test_config_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(min_step=1.0, max_step=0.5)
        with pytest.raises(ValueError):
            IntegratorConfig(node_retreat_factor=1.5)

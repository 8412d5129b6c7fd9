"""End-to-end numerical experiments on box-superposition ensembles.

Each experiment wires the spectral state, the trajectory engine and the
relaxation diagnostics into one reproducible run: a sampled decay curve of
the coarse functional, drop-time measurements, scaling studies in mode
count and in cell width, the wavefunction-period recurrence probe, and the
chi-squared typicality demonstration.

Conventions shared by every experiment: box units (unit mass, unit hbar),
a seeded generator for anything random, and exact cell averages (CDF
differences over backtracked cell edges) for every coarse value, so run
cost scales with the number of cell edges rather than with any sampling
resolution. The fine-grained functional is tracked by transporting a fixed
initial quadrature forward leg by leg and backtracking each stop; since
the quantity is conserved exactly, its drift reports accumulated
round-trip trajectory error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from pilotwave.spectral import BoxSuperposition, momentum_spread
from pilotwave.trajectories import (
    DEFAULT_CONFIG,
    IntegratorConfig,
    backtrack_many,
    evolve_ensemble,
)
from pilotwave.relaxation import (
    EnsembleSpec,
    HSeries,
    cell_edges,
    coarse_averages,
    coarse_h,
    fine_h_transported,
    reconstruct_density,
    subdivide_cells,
)

__all__ = [
    "CellScalingResult",
    "DensitySnapshot",
    "ModeScalingResult",
    "RecurrenceReport",
    "RejectionBoundError",
    "ThresholdNotReachedError",
    "TrialConfig",
    "TypicalityReport",
    "density_snapshot",
    "measure_drop_time",
    "recurrence_check",
    "run_trial",
    "sample_from_density",
    "scaling_in_cells",
    "scaling_in_modes",
    "typicality_demo",
]


class ThresholdNotReachedError(RuntimeError):
    """The sampled decay curve never crossed the requested drop level."""


class RejectionBoundError(RuntimeError):
    """A rejection-sampling proposal exceeded its claimed density bound."""


@dataclass(frozen=True)
class TrialConfig:
    """One relaxation trial: state, ensemble, grids, sampling horizon.

    ``rho0`` selects the initial ensemble: "uniform", "equilibrium" or
    "modulated" (the latter shaped by mod_amplitude and mod_wavenumber).
    ``fine_h_order`` sets how many transported quadrature nodes ride along
    per cell; set track_fine_h False to skip that transport entirely (the
    coarse curve itself never needs it). ``stop_when_dropped`` ends
    sampling early once the coarse value has fallen by that fraction of
    its initial value, which is what the scaling studies use.
    """

    seed: int
    length: float = 100.0
    n_modes: int = 10
    cell_width: float = 1.0
    rho0: str = "uniform"
    mod_amplitude: float = 0.3
    mod_wavenumber: int = 1
    t_max: float = 300.0
    t_step: float = 5.0
    fine_h_order: int = 8
    track_fine_h: bool = True
    stop_when_dropped: float = None
    max_stall_fraction: float = 0.01
    integrator: IntegratorConfig = DEFAULT_CONFIG

    def build(self):
        """Instantiate the (state, ensemble) pair this trial runs on."""
        rng = np.random.default_rng(self.seed)
        state = BoxSuperposition.with_random_phases(self.length, self.n_modes, rng)
        if self.rho0 == "uniform":
            ens = EnsembleSpec.uniform(state)
        elif self.rho0 == "equilibrium":
            ens = EnsembleSpec.equilibrium(state)
        elif self.rho0 == "modulated":
            ens = EnsembleSpec.modulated(
                state, self.mod_amplitude, self.mod_wavenumber
            )
        else:
            raise ValueError(f"unknown initial ensemble kind {self.rho0!r}")
        return state, ens


def run_trial(config: TrialConfig) -> HSeries:
    """Sample the coarse functional (and optionally the fine one) in time.

    Coarse values are exact cell averages at each sample time. The fine
    column transports one fixed t = 0 quadrature forward between sample
    times and backtracks the stops, so each value reuses the positions
    accumulated so far instead of re-integrating from scratch; nodes lost
    to stalls in either direction are dropped from the quadrature and
    counted in the stalled_fraction column.
    """
    state, ens = config.build()
    edges = cell_edges(config.length, config.cell_width)
    times = np.arange(0.0, config.t_max + config.t_step / 2.0, config.t_step)
    if times.size < 2:
        raise ValueError("need at least two sample times")

    if config.track_fine_h:
        pts0, wts0, _ = subdivide_cells(edges, config.fine_h_order)
        carried = pts0.copy()
        alive = np.ones(pts0.size, dtype=bool)

    hbar, fine, stalled = [], [], []
    threshold = None
    for k, t in enumerate(times):
        t = float(t)
        hbar.append(coarse_h(coarse_averages(state, ens, t, edges, config.integrator)))
        if config.track_fine_h:
            if k > 0:
                idx = np.flatnonzero(alive)
                leg = evolve_ensemble(
                    state,
                    carried[idx],
                    float(times[k - 1]),
                    t,
                    config.integrator,
                    config.max_stall_fraction,
                )
                carried[idx] = leg.positions
                alive[idx] = np.isfinite(leg.positions)
                origins = np.full(pts0.size, np.nan)
                idx = np.flatnonzero(alive)
                back, _ = backtrack_many(
                    state, carried[idx], np.full(idx.size, t), config.integrator
                )
                origins[idx] = back
            else:
                origins = pts0
            fine.append(fine_h_transported(ens, pts0, wts0, origins))
            stalled.append(1.0 - np.isfinite(origins).mean())
        else:
            fine.append(np.nan)
            stalled.append(0.0)
        if k == 0:
            if config.stop_when_dropped is not None:
                threshold = hbar[0] * (1.0 - config.stop_when_dropped)
        elif threshold is not None and hbar[-1] <= threshold:
            break

    n = len(hbar)
    meta = {
        "seed": config.seed,
        "length": config.length,
        "n_modes": config.n_modes,
        "cell_width": config.cell_width,
        "rho0": config.rho0,
    }
    return HSeries(
        times=times[:n],
        hbar=np.asarray(hbar),
        fine_h=np.asarray(fine),
        stalled_fraction=np.asarray(stalled),
        meta=meta,
    )


def measure_drop_time(series: HSeries, fraction: float = 0.05) -> float:
    """First time the coarse value falls below (1 - fraction) of its start.

    Linear interpolation between the two bracketing samples. Raises
    :class:`ThresholdNotReachedError` when the series never gets there.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("drop fraction must lie in (0, 1)")
    h0 = series.hbar0
    if h0 <= 0.0:
        raise ValueError("initial coarse value is not positive; nothing to drop")
    target = h0 * (1.0 - fraction)
    below = np.flatnonzero(series.hbar <= target)
    if below.size == 0:
        raise ThresholdNotReachedError(
            f"series never dropped {fraction:.1%} below its initial value "
            f"within t <= {series.times[-1]:g}"
        )
    i = int(below[0])
    if i == 0:
        return float(series.times[0])
    t0, t1 = series.times[i - 1], series.times[i]
    h0_, h1_ = series.hbar[i - 1], series.hbar[i]
    return float(t0 + (t1 - t0) * (h0_ - target) / (h0_ - h1_))


def _drop_time_with_retries(
    config: TrialConfig, fraction: float, extend: float = 1.8, tries: int = 3
) -> float:
    """Measure a drop time, stretching the horizon when it is not reached."""
    cfg = config
    for attempt in range(tries):
        series = run_trial(cfg)
        try:
            return measure_drop_time(series, fraction)
        except ThresholdNotReachedError:
            if attempt == tries - 1:
                raise
            cfg = replace(
                cfg, t_max=cfg.t_max * extend, t_step=cfg.t_step * extend
            )
    raise AssertionError("unreachable")


def _grid_timescale(state: BoxSuperposition, width: float) -> float:
    """Dimensional decay-time guess used only to size sampling grids."""
    return 1.0 / (width * momentum_spread(state) ** 3)


def _loglog_ols(abscissa, means):
    """Plain least squares of ln(mean) on ln(abscissa): (slope, err, intercept)."""
    x = np.log(np.asarray(abscissa, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    design = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = max(x.size - 2, 1)
    cov = (resid @ resid / dof) * np.linalg.inv(design.T @ design)
    return float(coef[1]), float(np.sqrt(cov[1, 1])), float(coef[0])


@dataclass(frozen=True)
class ModeScalingResult:
    """Log-log scaling of the mean drop time against superposition size.

    The slope comes from ordinary least squares of ln(mean drop time) on
    ln(mode count); its uncertainty reflects the scatter of the per-mode
    means around the fitted line, which is the dominant error source here
    (the drop-time distribution at fixed mode count is broad).
    """

    modes: np.ndarray
    n_trials: int
    drop_times: list
    mean_drop: np.ndarray
    se_drop: np.ndarray
    slope: float
    slope_err: float
    intercept: float

    def predicted_drop(self, n_modes) -> np.ndarray:
        return np.exp(self.intercept + self.slope * np.log(n_modes))


def scaling_in_modes(
    modes,
    n_trials: int = 10,
    length: float = 100.0,
    base_seed: int = 20260,
    drop_fraction: float = 0.05,
    n_grid: int = 120,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> ModeScalingResult:
    """Drop-time scaling across mode counts at unit cell width.

    Each (mode count, trial) pair gets its own seeded random-phase state.
    The sampling horizon adapts to the dimensional timescale of each state
    and stretches itself when a slow trial needs it.
    """
    modes = np.asarray(sorted(set(int(m) for m in np.atleast_1d(modes))))
    if modes.size < 2:
        raise ValueError("need at least two mode counts to fit a slope")
    if np.any(modes < 10) or np.any(modes > 40):
        raise ValueError("mode counts must lie in {10, ..., 40}")
    if n_trials < 3:
        raise ValueError("need at least three trials per mode count")

    drop_times = []
    for m in modes:
        per = np.empty(n_trials)
        for k in range(n_trials):
            seed = (base_seed, int(m), k)
            state = BoxSuperposition.with_random_phases(
                length, int(m), np.random.default_rng(seed)
            )
            horizon = _grid_timescale(state, 1.0)
            config = TrialConfig(
                seed=0,
                length=length,
                n_modes=int(m),
                cell_width=1.0,
                t_max=horizon,
                t_step=horizon / n_grid,
                track_fine_h=False,
                stop_when_dropped=drop_fraction + 0.02,
                integrator=cfg,
            )
            # the state is prebuilt from the composite seed; bypass build()
            per[k] = _drop_time_prebuilt(state, config, drop_fraction)
        drop_times.append(per)

    mean_drop = np.array([d.mean() for d in drop_times])
    se_drop = np.array([d.std(ddof=1) / np.sqrt(d.size) for d in drop_times])
    slope, slope_err, intercept = _loglog_ols(modes, mean_drop)
    return ModeScalingResult(
        modes=modes,
        n_trials=n_trials,
        drop_times=drop_times,
        mean_drop=mean_drop,
        se_drop=se_drop,
        slope=slope,
        slope_err=slope_err,
        intercept=intercept,
    )


def _drop_time_prebuilt(
    state: BoxSuperposition,
    config: TrialConfig,
    fraction: float,
    extend: float = 1.8,
    tries: int = 3,
) -> float:
    """Drop time for an already-built state (scaling studies build their own)."""
    ens = EnsembleSpec.uniform(state)
    edges = cell_edges(config.length, config.cell_width)
    t_max, t_step = config.t_max, config.t_step
    for attempt in range(tries):
        times = np.arange(0.0, t_max + t_step / 2.0, t_step)
        hbar = []
        threshold = None
        for t in times:
            hbar.append(
                coarse_h(coarse_averages(state, ens, float(t), edges, config.integrator))
            )
            if threshold is None:
                threshold = hbar[0] * (1.0 - config.stop_when_dropped)
            elif hbar[-1] <= threshold:
                break
        n = len(hbar)
        series = HSeries(
            times=times[:n],
            hbar=np.asarray(hbar),
            fine_h=np.full(n, np.nan),
            stalled_fraction=np.zeros(n),
        )
        try:
            return measure_drop_time(series, fraction)
        except ThresholdNotReachedError:
            if attempt == tries - 1:
                raise
            t_max *= extend
            t_step *= extend
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class CellScalingResult:
    """Drop times across coarse-graining widths at twenty modes.

    ``products`` holds mean drop time multiplied by width, the combination
    expected to stay constant while the cell is small against the features
    of the evolving density; ``fit_constant`` is the proportional fit of
    the mean drop time against inverse width over the widths at or below
    the small-cell cutoff, and ``residual_ratio`` reports mean/(fit) - 1
    for every width, which is where the large-cell departure shows up.
    The log-log slope (expected near -1) is fitted on the small widths.
    """

    widths: np.ndarray
    n_trials: int
    drop_times: list
    mean_drop: np.ndarray
    se_drop: np.ndarray
    products: np.ndarray
    small_widths: np.ndarray
    fit_constant: float
    residual_ratio: np.ndarray
    slope: float
    slope_err: float


def scaling_in_cells(
    widths=(0.2, 0.3, 0.4, 0.5, 1.0, 2.0),
    n_trials: int = 3,
    length: float = 100.0,
    base_seed: int = 20261,
    drop_fraction: float = 0.05,
    small_cutoff: float = 0.5,
    n_grid: int = 120,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> CellScalingResult:
    """Drop-time scaling against cell width, paired across widths by seed.

    The same seeded twenty-mode states are reused for every width so the
    width is the only thing that changes along a row.
    """
    widths = np.asarray(sorted(float(w) for w in np.atleast_1d(widths)))
    if widths.size < 2:
        raise ValueError("need at least two widths")
    if widths[0] < 0.2 - 1e-12 or widths[-1] > 2.0 + 1e-12:
        raise ValueError("cell widths must lie in [0.2, 2]")
    if n_trials < 3:
        raise ValueError("need at least three trials per width")
    n_modes = 20
    states = [
        BoxSuperposition.with_random_phases(
            length, n_modes, np.random.default_rng((base_seed, k))
        )
        for k in range(n_trials)
    ]
    drop_times = []
    for w in widths:
        per = np.empty(n_trials)
        for k, state in enumerate(states):
            horizon = _grid_timescale(state, float(w))
            config = TrialConfig(
                seed=0,
                length=length,
                n_modes=n_modes,
                cell_width=float(w),
                t_max=horizon,
                t_step=horizon / n_grid,
                track_fine_h=False,
                stop_when_dropped=drop_fraction + 0.02,
                integrator=cfg,
            )
            per[k] = _drop_time_prebuilt(state, config, drop_fraction)
        drop_times.append(per)

    mean_drop = np.array([d.mean() for d in drop_times])
    se_drop = np.array([d.std(ddof=1) / np.sqrt(d.size) for d in drop_times])
    products = mean_drop * widths
    small = widths <= small_cutoff + 1e-12
    if np.count_nonzero(small) < 2:
        raise ValueError("need at least two widths at or below the cutoff")
    # proportional fit mean = A / width on the small widths
    inv = 1.0 / widths[small]
    fit_constant = float(np.sum(mean_drop[small] * inv) / np.sum(inv**2))
    residual_ratio = mean_drop / (fit_constant / widths) - 1.0
    slope, slope_err, _ = _loglog_ols(widths[small], mean_drop[small])
    return CellScalingResult(
        widths=widths,
        n_trials=n_trials,
        drop_times=drop_times,
        mean_drop=mean_drop,
        se_drop=se_drop,
        products=products,
        small_widths=widths[small],
        fit_constant=fit_constant,
        residual_ratio=residual_ratio,
        slope=slope,
        slope_err=slope_err,
    )


@dataclass(frozen=True)
class RecurrenceReport:
    """Coarse functional and trajectory round trip over one state period.

    For a box superposition every mode energy is a multiple of the ground
    energy scale, so the wavefunction (and with it the whole flow) is
    periodic; the coarse functional must return to its initial value even
    after relaxing in between, and every trajectory must close.
    """

    period: float
    hbar0: float
    hbar_period: float
    hbar_before: dict
    max_displacement: float
    probe_stalled_fraction: float

    @property
    def hbar_return_error(self) -> float:
        return abs(self.hbar_period - self.hbar0)


def recurrence_check(
    config: TrialConfig,
    n_probes: int = 96,
    rise_offsets=(200.0, 100.0),
) -> RecurrenceReport:
    """Evaluate the periodicity of both the coarse value and the flow map.

    ``rise_offsets`` are times before the period at which the coarse value
    is also sampled, to witness that it was still well below its initial
    value shortly before snapping back.
    """
    state, ens = config.build()
    period = state.period
    edges = cell_edges(config.length, config.cell_width)
    hbar0 = coarse_h(coarse_averages(state, ens, 0.0, edges, config.integrator))
    hbar_p = coarse_h(coarse_averages(state, ens, period, edges, config.integrator))
    before = {}
    for off in rise_offsets:
        t = period - float(off)
        before[float(off)] = coarse_h(
            coarse_averages(state, ens, t, edges, config.integrator)
        )
    probes = (np.arange(n_probes) + 0.5) / n_probes * config.length
    res = evolve_ensemble(
        state, probes, 0.0, period, config.integrator, config.max_stall_fraction
    )
    disp = np.abs(res.positions - probes)
    return RecurrenceReport(
        period=period,
        hbar0=hbar0,
        hbar_period=hbar_p,
        hbar_before=before,
        max_displacement=float(np.nanmax(disp)),
        probe_stalled_fraction=res.stalled_fraction,
    )


def sample_from_density(density, length: float, n_samples: int, rng, bound=None):
    """Rejection-sample positions in [0, length] from an unnormalized density.

    ``bound`` must dominate the density everywhere; by default it is taken
    from a dense scan with five percent headroom. Every proposal is checked
    against the bound and a violation raises :class:`RejectionBoundError`
    rather than silently producing a biased sample.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if bound is None:
        grid = np.linspace(0.0, length, 8001)
        bound = float(np.max(density(grid))) * 1.05
    if bound <= 0.0:
        raise ValueError("density bound must be positive")
    out = np.empty(n_samples)
    got = 0
    while got < n_samples:
        m = max(2 * (n_samples - got), 1024)
        xs = rng.uniform(0.0, length, m)
        vals = np.asarray(density(xs), dtype=float)
        if np.any(vals > bound):
            raise RejectionBoundError(
                "proposal density exceeded its claimed bound "
                f"({float(np.max(vals))!r} > {bound!r})"
            )
        keep = xs[rng.uniform(0.0, bound, m) < vals]
        take = min(keep.size, n_samples - got)
        out[got : got + take] = keep[:take]
        got += take
    return out


@dataclass(frozen=True)
class TypicalityReport:
    """Chi-squared verdicts of one position sample against two candidates.

    The sample was drawn from either the squared or the fourth-power
    measure of the initial wavefunction; it is then tested against both
    candidate densities, each with its own equal-probability binning, so
    both statistics follow chi-squared with (bins - 1) degrees of freedom
    under their respective hypotheses.
    """

    measure: str
    n_samples: int
    n_bins: int
    chi2_squared: float
    chi2_fourth: float
    critical_99: float
    counts_squared_bins: np.ndarray
    squared_bin_edges: np.ndarray

    @property
    def matches_squared(self) -> bool:
        return self.chi2_squared < self.critical_99

    @property
    def matches_fourth(self) -> bool:
        return self.chi2_fourth < self.critical_99


def _quantile_edges(grid, cdf, n_bins):
    qs = np.arange(1, n_bins) / n_bins
    return np.concatenate([[grid[0]], np.interp(qs, cdf, grid), [grid[-1]]])


def typicality_demo(
    state: BoxSuperposition,
    n_samples: int = 100_000,
    measure: str = "squared",
    n_bins: int = 40,
    rng=None,
) -> TypicalityReport:
    """Sample positions from one measure and test against both candidates.

    ``measure`` picks the sampling density: "squared" draws from the
    initial |psi|^2, "fourth-power" from the normalized |psi|^4. Either
    sample is then chi-squared tested against both candidate densities on
    equal-probability bins of the candidate under test (expected counts
    come from exact CDF differences at the realized bin edges, so slight
    quantile placement error never biases the statistic).
    """
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples for a stable verdict")
    if measure not in ("squared", "fourth-power"):
        raise ValueError(f"unknown sampling measure {measure!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    L = state.length
    grid = np.linspace(0.0, L, 200001)
    psi2 = state.density(grid, 0.0)
    psi4 = psi2**2
    cum4 = np.concatenate(
        [[0.0], np.cumsum((psi4[1:] + psi4[:-1]) / 2.0 * np.diff(grid))]
    )
    norm4 = float(cum4[-1])
    cum4 /= norm4

    if measure == "squared":
        sample = sample_from_density(lambda x: state.density(x, 0.0), L, n_samples, rng)
    else:
        sample = sample_from_density(
            lambda x: state.density(x, 0.0) ** 2 / norm4, L, n_samples, rng
        )

    edges_sq = _quantile_edges(grid, state.density_cdf(grid, 0.0), n_bins)
    probs_sq = np.diff(state.density_cdf(edges_sq, 0.0))
    counts_sq = np.histogram(sample, edges_sq)[0]
    chi2_sq = float(np.sum((counts_sq - n_samples * probs_sq) ** 2 / (n_samples * probs_sq)))

    edges_4 = _quantile_edges(grid, cum4, n_bins)
    probs_4 = np.diff(np.interp(edges_4, grid, cum4))
    counts_4 = np.histogram(sample, edges_4)[0]
    chi2_4 = float(np.sum((counts_4 - n_samples * probs_4) ** 2 / (n_samples * probs_4)))

    return TypicalityReport(
        measure=measure,
        n_samples=n_samples,
        n_bins=n_bins,
        chi2_squared=chi2_sq,
        chi2_fourth=chi2_4,
        critical_99=float(stats.chi2.ppf(0.99, n_bins - 1)),
        counts_squared_bins=counts_sq,
        squared_bin_edges=edges_sq,
    )


@dataclass(frozen=True)
class DensitySnapshot:
    """Reconstructed density against |psi|^2 on a plotting grid."""

    time: float
    xs: np.ndarray
    rho: np.ndarray
    psi2: np.ndarray

    @property
    def rho_mass(self) -> float:
        good = np.isfinite(self.rho)
        return float(np.trapezoid(np.where(good, self.rho, 0.0), self.xs))


def density_snapshot(
    config: TrialConfig, t: float, n_points: int = 2000
) -> DensitySnapshot:
    """Reconstruct rho(x, t) pointwise for inspection or plotting."""
    state, ens = config.build()
    xs = np.linspace(0.0, config.length, n_points + 1)[1:-1]
    rho = reconstruct_density(
        state, ens, float(t), xs, config.integrator, config.max_stall_fraction
    )
    return DensitySnapshot(
        time=float(t), xs=xs, rho=rho, psi2=state.density(xs, float(t))
    )

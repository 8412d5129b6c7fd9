"""Command-line entry points.

Each simulation subcommand reads one JSON config file and writes, into
--outdir: a CSV with the run's data, a JSON summary echoing the inputs
and derived statistics, and (unless --no-figures) a rendered PNG. The
cosmo subcommand takes plain flags since its inputs are a handful of
numbers. Identical config plus identical seed reproduces identical CSV
bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from pilotwave import plotting, reporting
from pilotwave.cosmology import (
    relaxation_timescale_thermal,
    stretch_lengthscale,
    suppression_report,
)
from pilotwave.experiments import (
    ThresholdNotReachedError,
    TrialConfig,
    _loglog_ols,
    density_snapshot,
    measure_drop_time,
    recurrence_check,
    run_trial,
    scaling_in_cells,
    scaling_in_modes,
    typicality_demo,
)
from pilotwave.signaling import (
    DeltaRhoA,
    PairEnsemble,
    QuenchScaling,
    SuddenQuench,
    delta_rho_a,
    reference_pair,
)
from pilotwave.spectral import BoxSuperposition
from pilotwave.trajectories import DEFAULT_CONFIG, IntegratorConfig

_TRIAL_KEYS = (
    "seed",
    "length",
    "n_modes",
    "cell_width",
    "rho0",
    "mod_amplitude",
    "mod_wavenumber",
    "t_max",
    "t_step",
    "fine_h_order",
    "track_fine_h",
    "stop_when_dropped",
    "max_stall_fraction",
)


def _load_config(path, allowed):
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise SystemExit(f"config root must be a JSON object: {path}")
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise SystemExit(f"unknown config keys {unknown}; allowed: {sorted(allowed)}")
    return cfg


def _integrator(cfg):
    spec = cfg.get("integrator")
    if spec is None:
        return DEFAULT_CONFIG
    return IntegratorConfig(**spec)


def _trial_config(cfg, integrator, **overrides):
    kwargs = {k: cfg[k] for k in _TRIAL_KEYS if k in cfg}
    kwargs.update(overrides)
    kwargs.setdefault("seed", 1)
    return TrialConfig(integrator=integrator, **kwargs)


def _paths(args, stem):
    os.makedirs(args.outdir, exist_ok=True)
    base = os.path.join(args.outdir, stem)
    return base + ".csv", base + "_summary.json", base + ".png"


def _echo(cfg):
    return {k: v for k, v in sorted(cfg.items())}


def cmd_simulate(args):
    cfg = _load_config(args.config, _TRIAL_KEYS + ("times", "n_points", "integrator"))
    integrator = _integrator(cfg)
    times = cfg.get("times", [0.0, 60.0, 120.0])
    n_points = cfg.get("n_points", 2000)
    trial = _trial_config(cfg, integrator)
    csv_path, summary_path, fig_path = _paths(args, "simulate")
    snapshots = [density_snapshot(trial, float(t), n_points) for t in times]
    rows = (
        (snap.time, x, r, p)
        for snap in snapshots
        for x, r, p in zip(snap.xs, snap.rho, snap.psi2)
    )
    reporting.write_rows(csv_path, ("t", "x", "rho", "psi2"), rows)
    reporting.write_summary(
        summary_path,
        {
            "config": _echo(cfg),
            "rho_mass": {f"{s.time:g}": s.rho_mass for s in snapshots},
        },
    )
    if not args.no_figures:
        plotting.save_density_figure(snapshots, fig_path)
    return 0


def cmd_hseries(args):
    cfg = _load_config(args.config, _TRIAL_KEYS + ("integrator", "drop_fraction"))
    integrator = _integrator(cfg)
    drop_fraction = cfg.get("drop_fraction", 0.05)
    trial = _trial_config(cfg, integrator)
    csv_path, summary_path, fig_path = _paths(args, "hseries")
    series = run_trial(trial)
    series.write_csv(csv_path)
    summary = {
        "config": _echo(cfg),
        "hbar0": series.hbar0,
        "hbar_final": float(series.hbar[-1]),
        "max_stalled_fraction": float(np.max(series.stalled_fraction)),
        "drop_fraction": drop_fraction,
    }
    try:
        summary["drop_time"] = measure_drop_time(series, drop_fraction)
    except ThresholdNotReachedError:
        summary["drop_time"] = None
    reporting.write_summary(summary_path, summary)
    if not args.no_figures:
        plotting.save_hseries_figure(series, fig_path)
    return 0


def cmd_scaling_m(args):
    allowed = ("modes", "n_trials", "length", "base_seed", "drop_fraction", "n_grid", "integrator")
    cfg = _load_config(args.config, allowed)
    integrator = _integrator(cfg)
    kwargs = {
        k: cfg[k]
        for k in ("n_trials", "length", "base_seed", "drop_fraction", "n_grid")
        if k in cfg
    }
    result = scaling_in_modes(
        tuple(cfg.get("modes", (10, 20, 40))), cfg=integrator, **kwargs
    )
    csv_path, summary_path, fig_path = _paths(args, "scaling_m")
    rows = (
        (int(m), k, t)
        for m, times in zip(result.modes, result.drop_times)
        for k, t in enumerate(times)
    )
    reporting.write_rows(csv_path, ("n_modes", "trial", "drop_time"), rows)
    reporting.write_summary(
        summary_path,
        {
            "config": _echo(cfg),
            "n_trials": result.n_trials,
            "mean_drop": result.mean_drop,
            "se_drop": result.se_drop,
            "slope": result.slope,
            "slope_err": result.slope_err,
            "intercept": result.intercept,
        },
    )
    if not args.no_figures:
        plotting.save_mode_scaling_figure(result, fig_path)
    return 0


def cmd_scaling_dx(args):
    allowed = ("widths", "n_trials", "length", "base_seed", "drop_fraction", "small_cutoff", "n_grid", "integrator")
    cfg = _load_config(args.config, allowed)
    integrator = _integrator(cfg)
    kwargs = {
        k: cfg[k]
        for k in ("n_trials", "length", "base_seed", "drop_fraction", "small_cutoff", "n_grid")
        if k in cfg
    }
    result = scaling_in_cells(
        tuple(cfg.get("widths", (0.2, 0.3, 0.4, 0.5, 1.0, 2.0))), cfg=integrator, **kwargs
    )
    csv_path, summary_path, fig_path = _paths(args, "scaling_dx")
    rows = (
        (w, k, t)
        for w, times in zip(result.widths, result.drop_times)
        for k, t in enumerate(times)
    )
    reporting.write_rows(csv_path, ("cell_width", "trial", "drop_time"), rows)
    reporting.write_summary(
        summary_path,
        {
            "config": _echo(cfg),
            "n_trials": result.n_trials,
            "mean_drop": result.mean_drop,
            "se_drop": result.se_drop,
            "products": result.products,
            "fit_constant": result.fit_constant,
            "residual_ratio": result.residual_ratio,
            "small_widths": result.small_widths,
            "slope_small_widths": result.slope,
            "slope_err": result.slope_err,
        },
    )
    if not args.no_figures:
        plotting.save_cell_scaling_figure(result, fig_path)
    return 0


def cmd_recurrence(args):
    allowed = _TRIAL_KEYS + ("n_probes", "rise_offsets", "integrator")
    cfg = _load_config(args.config, allowed)
    integrator = _integrator(cfg)
    n_probes = cfg.get("n_probes", 96)
    rise_offsets = tuple(cfg.get("rise_offsets", (200.0, 100.0)))
    trial = _trial_config(cfg, integrator)
    report = recurrence_check(trial, n_probes=n_probes, rise_offsets=rise_offsets)
    csv_path, summary_path, fig_path = _paths(args, "recurrence")
    rows = [(0.0, report.hbar0)]
    for offset in sorted(report.hbar_before, reverse=True):
        rows.append((report.period - offset, report.hbar_before[offset]))
    rows.append((report.period, report.hbar_period))
    reporting.write_rows(csv_path, ("t", "hbar"), rows)
    reporting.write_summary(
        summary_path,
        {
            "config": _echo(cfg),
            "period": report.period,
            "hbar0": report.hbar0,
            "hbar_period": report.hbar_period,
            "hbar_return_error": report.hbar_return_error,
            "max_displacement": report.max_displacement,
            "probe_stalled_fraction": report.probe_stalled_fraction,
        },
    )
    if not args.no_figures:
        plotting.save_recurrence_figure(report, fig_path)
    return 0


def cmd_typicality(args):
    allowed = ("seed", "length", "n_modes", "n_samples", "measure", "n_bins")
    cfg = _load_config(args.config, allowed)
    rng = np.random.default_rng(cfg.get("seed", 1))
    state = BoxSuperposition.with_random_phases(
        cfg.get("length", 100.0), cfg.get("n_modes", 10), rng
    )
    report = typicality_demo(
        state,
        n_samples=cfg.get("n_samples", 100_000),
        measure=cfg.get("measure", "squared"),
        n_bins=cfg.get("n_bins", 40),
        rng=rng,
    )
    csv_path, summary_path, fig_path = _paths(args, "typicality")
    rows = zip(
        report.squared_bin_edges[:-1],
        report.squared_bin_edges[1:],
        report.counts_squared_bins,
    )
    reporting.write_rows(csv_path, ("bin_lo", "bin_hi", "count"), rows)
    reporting.write_summary(
        summary_path,
        {
            "config": _echo(cfg),
            "measure": report.measure,
            "chi2_squared": report.chi2_squared,
            "chi2_fourth": report.chi2_fourth,
            "critical_99": report.critical_99,
            "matches_squared": report.matches_squared,
            "matches_fourth": report.matches_fourth,
        },
    )
    if not args.no_figures:
        plotting.save_typicality_figure(report, fig_path)
    return 0


def cmd_signal(args):
    allowed = (
        "length", "c", "d", "n_basis", "ensemble", "quench", "strength",
        "eps_values", "n_grid", "baseline", "integrator",
    )
    cfg = _load_config(args.config, allowed)
    integrator = _integrator(cfg)
    c = cfg.get("c")
    d = cfg.get("d")
    state = reference_pair(
        length=cfg.get("length", 10.0), c=c, d=d, n_basis=cfg.get("n_basis", 16)
    )
    ens = (
        PairEnsemble.equilibrium(state)
        if cfg.get("ensemble", "uniform") == "equilibrium"
        else PairEnsemble.uniform(state)
    )
    quench = (
        SuddenQuench.none()
        if cfg.get("quench", "linear") == "none"
        else SuddenQuench.linear_tilt(cfg.get("strength", 0.01))
    )
    eps_values = [float(e) for e in cfg.get("eps_values", (0.01, 0.05))]
    n_grid = cfg.get("n_grid", 96)
    baseline = cfg.get("baseline", "initial")
    results = [
        delta_rho_a(state, ens, quench, e, n_grid, baseline, integrator)
        for e in eps_values
    ]
    csv_path, summary_path, fig_path = _paths(args, "signal")
    rows = (
        (res.eps, x, base, q, dv)
        for res in results
        for x, base, q, dv in zip(res.grid, res.reference, res.quenched, res.delta)
    )
    reporting.write_rows(
        csv_path, ("eps", "x_a", "rho_a_base", "rho_a_quenched", "delta_rho_a"), rows
    )
    summary = {
        "config": _echo(cfg),
        "baseline": baseline,
        "max_abs": {f"{r.eps:g}": r.max_abs for r in results},
        "integral": {f"{r.eps:g}": r.integral for r in results},
    }
    scaling = None
    if len(results) >= 2 and all(r.max_abs > 0 for r in results):
        slope, slope_err, _ = _loglog_ols(
            np.array(eps_values), np.array([r.max_abs for r in results])
        )
        scaling = QuenchScaling(
            eps_values=np.array(eps_values),
            max_abs=np.array([r.max_abs for r in results]),
            slope=slope,
            slope_err=slope_err,
        )
        summary["slope"] = slope
        summary["slope_err"] = slope_err
    reporting.write_summary(summary_path, summary)
    if not args.no_figures:
        plotting.save_signal_figure(results, scaling, fig_path)
    return 0


def cmd_cosmo(args):
    kts = np.geomspace(args.kt_min, args.kt_max, args.points) if args.points > 0 else []
    report = suppression_report(kts)
    csv_path, summary_path, fig_path = _paths(args, "cosmo")
    rows = (
        (r.kt_gev, r.relaxation_s, r.expansion_s, r.suppressed) for r in report.rows
    )
    reporting.write_rows(
        csv_path, ("kt_gev", "relaxation_s", "expansion_s", "suppressed"), rows
    )
    summary = {
        "kt_min_gev": args.kt_min,
        "kt_max_gev": args.kt_max,
        "points": args.points,
        "crossover_gev": report.crossover_gev,
    }
    if args.dx_cm is not None:
        summary["relaxation_at_kt_max_fixed_dx_s"] = relaxation_timescale_thermal(
            args.kt_max, args.dx_cm
        )
        summary["dx_cm"] = args.dx_cm
    if args.delta0_cm is not None:
        summary["stretched_lengthscale_cm"] = stretch_lengthscale(
            args.delta0_cm, args.expansion_factor
        )
        summary["delta0_cm"] = args.delta0_cm
        summary["expansion_factor"] = args.expansion_factor
    reporting.write_summary(summary_path, summary)
    if not args.no_figures and len(report):
        plotting.save_cosmo_figure(report, fig_path)
    return 0


def _add_config_command(sub, name, fn, helptext):
    p = sub.add_parser(name, help=helptext)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--outdir", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pilotwave",
        description="Relaxation experiments for guided ensembles in a 1D box.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_config_command(sub, "simulate", cmd_simulate, "density snapshots at chosen times")
    _add_config_command(sub, "hseries", cmd_hseries, "coarse H time series for one trial")
    _add_config_command(sub, "scaling-m", cmd_scaling_m, "drop-time scaling in mode count")
    _add_config_command(sub, "scaling-dx", cmd_scaling_dx, "drop-time scaling in cell width")
    _add_config_command(sub, "recurrence", cmd_recurrence, "full-period return check")
    _add_config_command(sub, "typicality", cmd_typicality, "sampling-measure chi-squared demo")
    _add_config_command(sub, "signal", cmd_signal, "quench response of the A-side marginal")

    p = sub.add_parser("cosmo", help="expansion vs relaxation timescale table")
    p.add_argument("--kt-min", type=float, default=1e-3, help="lowest kT in GeV")
    p.add_argument("--kt-max", type=float, default=1e19, help="highest kT in GeV")
    p.add_argument("--points", type=int, default=45, help="table rows (log-spaced)")
    p.add_argument("--dx-cm", type=float, default=None, help="fixed coarse-graining length in cm")
    p.add_argument("--delta0-cm", type=float, default=None, help="initial disequilibrium lengthscale in cm")
    p.add_argument("--expansion-factor", type=float, default=1.0, help="stretch factor for delta0")
    p.add_argument("--outdir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_cosmo)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Figure rendering for the CLI report paths.

All figures go straight to files through the Agg backend; nothing here
opens a window. Each save_* function takes the result object its
subcommand produced plus a target path, and returns the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_cell_scaling_figure",
    "save_cosmo_figure",
    "save_density_figure",
    "save_hseries_figure",
    "save_mode_scaling_figure",
    "save_recurrence_figure",
    "save_signal_figure",
    "save_typicality_figure",
]


def _finish(fig, path):
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_density_figure(snapshots, path):
    """Overlay reconstructed density and Born density per snapshot time."""
    n = len(snapshots)
    fig, axes = plt.subplots(n, 1, figsize=(8.0, 2.6 * n), squeeze=False, constrained_layout=True)
    for ax, snap in zip(axes[:, 0], snapshots):
        ax.plot(snap.xs, snap.psi2, lw=0.9, color="tab:blue", label="$|\\psi|^2$")
        ax.plot(snap.xs, snap.rho, lw=0.9, color="tab:red", alpha=0.8, label="$\\rho$")
        ax.set_ylabel("density")
        ax.set_title(f"t = {snap.time:g}", fontsize=10)
        ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("x")
    return _finish(fig, path)


def save_hseries_figure(series, path):
    fig, ax = plt.subplots(figsize=(7.0, 4.2), constrained_layout=True)
    ax.plot(series.times, series.hbar, "o-", ms=3, color="tab:blue",
            label="coarse $\\bar{H}(t)$")
    fine = np.asarray(series.fine_h, dtype=float)
    if np.any(np.isfinite(fine)):
        ax.plot(series.times, fine, "--", color="tab:gray", lw=1.0,
                label="fine-grained $H$")
    ax.axhline(series.hbar0, color="k", lw=0.6, alpha=0.5)
    ax.set_xlabel("t")
    ax.set_ylabel("H")
    ax.legend()
    return _finish(fig, path)


def save_mode_scaling_figure(result, path):
    fig, ax = plt.subplots(figsize=(6.4, 4.4), constrained_layout=True)
    ax.errorbar(result.modes, result.mean_drop, yerr=result.se_drop,
                fmt="o", capsize=3, color="tab:blue", label="mean drop time")
    grid = np.linspace(result.modes.min(), result.modes.max(), 64)
    ax.plot(grid, result.predicted_drop(grid), "-", color="tab:red",
            label=f"slope {result.slope:.2f} $\\pm$ {result.slope_err:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("number of modes")
    ax.set_ylabel("5% drop time")
    ax.legend()
    return _finish(fig, path)


def save_cell_scaling_figure(result, path):
    fig, ax = plt.subplots(figsize=(6.4, 4.4), constrained_layout=True)
    inv = 1.0 / result.widths
    ax.errorbar(inv, result.mean_drop, yerr=result.se_drop, fmt="o",
                capsize=3, color="tab:blue", label="mean drop time")
    grid = np.linspace(inv.min(), inv.max(), 64)
    ax.plot(grid, result.fit_constant * grid, "-", color="tab:red",
            label="proportional fit (small cells)")
    ax.set_xlabel("1 / cell width")
    ax.set_ylabel("5% drop time")
    ax.legend()
    return _finish(fig, path)


def save_recurrence_figure(report, path):
    fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
    ts = [0.0]
    hs = [report.hbar0]
    for offset in sorted(report.hbar_before, reverse=True):
        ts.append(report.period - offset)
        hs.append(report.hbar_before[offset])
    ts.append(report.period)
    hs.append(report.hbar_period)
    ax.plot(ts, hs, "o-", color="tab:blue")
    ax.axhline(report.hbar0, color="k", lw=0.6, alpha=0.5)
    ax.set_xlabel("t")
    ax.set_ylabel("coarse $\\bar{H}$")
    ax.set_title(f"return error {report.hbar_return_error:.2e}", fontsize=10)
    return _finish(fig, path)


def save_typicality_figure(report, path):
    fig, ax = plt.subplots(figsize=(7.0, 4.2), constrained_layout=True)
    edges = report.squared_bin_edges
    mids = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    expected = report.n_samples / report.n_bins
    ax.bar(mids, report.counts_squared_bins, width=widths, color="tab:blue",
           alpha=0.6, label="observed counts")
    ax.axhline(expected, color="tab:red", lw=1.2, label="expected if Born-distributed")
    ax.set_xlabel("x")
    ax.set_ylabel("samples per equal-probability bin")
    ax.set_title(
        f"measure {report.measure}: $\\chi^2$ vs squared {report.chi2_squared:.1f}, "
        f"vs fourth {report.chi2_fourth:.1f} (99% cut {report.critical_99:.1f})",
        fontsize=9,
    )
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_signal_figure(results, scaling, path):
    """Marginal responses per quench duration plus the peak-growth fit."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 4.0), constrained_layout=True)
    for res in results:
        ax1.plot(res.grid, res.delta, lw=1.0, label=f"$\\epsilon$ = {res.eps:g}")
    ax1.set_xlabel("$x_A$")
    ax1.set_ylabel("marginal change at A")
    ax1.legend(fontsize=8)
    if scaling is not None:
        ax2.loglog(scaling.eps_values, scaling.max_abs, "o", color="tab:blue")
        fit = np.exp(
            np.log(scaling.max_abs[0])
            + scaling.slope * (np.log(scaling.eps_values) - np.log(scaling.eps_values[0]))
        )
        ax2.loglog(scaling.eps_values, fit, "-", color="tab:red",
                   label=f"slope {scaling.slope:.3f} $\\pm$ {scaling.slope_err:.3f}")
        ax2.legend(fontsize=8)
    ax2.set_xlabel("$\\epsilon$")
    ax2.set_ylabel("peak response")
    return _finish(fig, path)


def save_cosmo_figure(report, path):
    fig, ax = plt.subplots(figsize=(6.8, 4.4), constrained_layout=True)
    kt = np.array([r.kt_gev for r in report.rows])
    tau = np.array([r.relaxation_s for r in report.rows])
    texp = np.array([r.expansion_s for r in report.rows])
    ax.loglog(kt, tau, "o-", ms=3, color="tab:blue", label="relaxation timescale")
    ax.loglog(kt, texp, "s-", ms=3, color="tab:red", label="expansion timescale")
    if np.isfinite(report.crossover_gev):
        ax.axvline(report.crossover_gev, color="k", lw=0.8, ls=":",
                   label=f"crossover {report.crossover_gev:.2e} GeV")
    ax.set_xlabel("kT [GeV]")
    ax.set_ylabel("timescale [s]")
    ax.legend(fontsize=8)
    return _finish(fig, path)

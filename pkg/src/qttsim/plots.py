"""Figure rendering for the report outputs.

Every analysis product is a delimited text table first; these helpers render
the companion PNG next to each table so a report directory is self-contained.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, png_path):
    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path


def render_offset_series(t_s, delta_ps, png_path, title="Clock offset", label="offset"):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t_s, np.asarray(delta_ps) / 1e3, lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel(f"{label} (ns)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _finish(fig, png_path)


def render_dual_offset(t_s, sync_ps, drift_ps, png_path, title="Synchronized and drifting clocks"):
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(t_s, sync_ps, "-", color="tab:blue", lw=0.8, label="synchronized")
    ax1.set_xlabel("time (s)")
    ax1.set_ylabel("synchronized offset (ps)", color="tab:blue")
    ax1.grid(alpha=0.3)
    ax2 = ax1.twinx()
    ax2.plot(t_s, np.asarray(drift_ps) / 1e3, "--", color="tab:red", lw=0.8, label="drifting")
    ax2.set_ylabel("drifting offset (ns)", color="tab:red")
    ax1.set_title(title)
    return _finish(fig, png_path)


def render_stability(tables, png_path, ylabel="deviation", title="Clock stability"):
    """tables: mapping label -> (tau array, deviation array)."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for label, (taus, devs) in tables.items():
        ax.loglog(taus, devs, "o-", ms=3, lw=1, label=label)
    ax.set_xlabel("averaging time (s)")
    ax.set_ylabel(ylabel)
    ax.grid(which="both", alpha=0.3)
    ax.legend()
    ax.set_title(title)
    return _finish(fig, png_path)


def render_car_sweep(rates, cars, lock_fractions, png_path):
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.semilogx(rates, cars, "o-", color="tab:blue")
    ax1.set_xlabel("background rate (counts/s)")
    ax1.set_ylabel("CAR", color="tab:blue")
    ax1.axhline(1.0, color="gray", lw=0.8, ls=":")
    ax1.grid(alpha=0.3)
    ax2 = ax1.twinx()
    ax2.semilogx(rates, lock_fractions, "s--", color="tab:orange")
    ax2.set_ylabel("lock fraction", color="tab:orange")
    ax2.set_ylim(-0.05, 1.05)
    ax1.set_title("Correlation quality vs background")
    return _finish(fig, png_path)


def render_range(t_s, d_m, residual_cm, png_path, d_reference_m=None):
    fig, ax1 = plt.subplots(figsize=(7, 4))
    if d_reference_m is not None:
        ax1.plot(t_s, np.asarray(d_reference_m) / 1e3, color="0.7", lw=2, label="emulated")
    ax1.plot(t_s, np.asarray(d_m) / 1e3, color="tab:blue", lw=0.8, label="measured")
    ax1.set_xlabel("time (s)")
    ax1.set_ylabel("range (km)")
    ax1.grid(alpha=0.3)
    ax1.legend(loc="upper left")
    ax2 = ax1.twinx()
    ax2.plot(t_s, residual_cm, color="tab:red", lw=0.6)
    ax2.set_ylabel("residual (cm)", color="tab:red")
    ax1.set_title("Two-way ranging")
    return _finish(fig, png_path)


def render_coarse_grid(a_values_m, theta_values_rad, peak_counts, png_path):
    fig, ax = plt.subplots(figsize=(6, 5))
    extent = [
        np.degrees(theta_values_rad[0]),
        np.degrees(theta_values_rad[-1]),
        a_values_m[0] / 1e3,
        a_values_m[-1] / 1e3,
    ]
    im = ax.imshow(peak_counts, origin="lower", aspect="auto", extent=extent, cmap="inferno")
    ax.set_xlabel("inclination (deg)")
    ax.set_ylabel("altitude (km)")
    ax.set_title("Coarse orbit scan: correlation peak height")
    fig.colorbar(im, ax=ax, label="peak counts")
    return _finish(fig, png_path)


def render_fit_history(acq_t_s, histories, truths, png_path):
    """histories: {'altitude (km)': (down, up), ...} value series per direction."""
    fig, axes = plt.subplots(len(histories), 1, figsize=(7, 2.6 * len(histories)), sharex=True)
    if len(histories) == 1:
        axes = [axes]
    for ax, (label, (down, up)) in zip(axes, histories.items()):
        ax.plot(acq_t_s, down, "-", color="tab:blue", lw=1, label="downlink")
        ax.plot(acq_t_s, up, "--", color="tab:red", lw=1, label="uplink")
        if label in truths and truths[label] is not None:
            ax.axhline(truths[label], color="0.5", lw=0.8, ls=":")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].legend(loc="best")
    axes[-1].set_xlabel("time into pass (s)")
    axes[0].set_title("Orbit-fit convergence")
    return _finish(fig, png_path)

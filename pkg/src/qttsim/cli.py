"""Command-line interface.

Subcommands: simulate, sync, track, stability, car, range. All outputs are
delimited text with self-describing headers; ``--plot-data`` additionally
emits per-figure data files (fig2c.csv, fig2e.csv, fig3.csv, coarse_grid.csv)
and renders the companion PNG next to each. Exit codes: 0 success, 1 domain
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import math
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import PS_PER_SECOND, PhysicalConstants, QttError
from .correlation import correlate
from .orbit import LinkDirection, prop_delay_s
from .scenario import Scenario, bundled_scenario_path, load_scenario
from .simulate import run_simulation
from .stability import PhaseSeries, modified_adev, overlapping_adev, time_deviation
from .sync import SyncMode, run_stationary_sync
from .tagio import (
    atomic_write,
    read_records_csv,
    read_tags,
    write_records_csv,
    write_tags,
    write_truth,
)
from .tracking import run_tracked_sync

SCENARIO_COPY = "scenario.scenario"
TAGS_FILE = "tags.bin"


class UsageError(Exception):
    """Bad invocation (missing inputs, malformed arguments): exit code 2."""


def _write_table(path, header: list[str], rows) -> None:
    with atomic_write(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _load_run_dir(directory: Path) -> tuple[Scenario, Path]:
    scenario_path = directory / SCENARIO_COPY
    tags_path = directory / TAGS_FILE
    if not scenario_path.exists() or not tags_path.exists():
        raise UsageError(f"{directory} does not contain a simulation ({SCENARIO_COPY}, {TAGS_FILE})")
    return load_scenario(scenario_path), tags_path


def _resolve_scenario_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    try:
        return bundled_scenario_path(name)
    except QttError:
        raise UsageError(f"scenario not found: {name}")


def cmd_simulate(args) -> int:
    scenario_path = _resolve_scenario_path(args.scenario)
    scn = load_scenario(scenario_path, seed_override=args.seed)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_simulation(scn)
    write_tags(out_dir / TAGS_FILE, result.streams)
    write_truth(out_dir, result.truth)
    if args.seed is None:
        shutil.copyfile(scenario_path, out_dir / SCENARIO_COPY)
    else:
        _copy_scenario_with_seed(scenario_path, out_dir / SCENARIO_COPY, args.seed)
    counts = ", ".join(f"{s.channel.label}={len(s)}" for s in result.streams)
    print(f"simulated '{scn.label}' ({scn.duration_s:g} s): {counts}")
    return 0


def _copy_scenario_with_seed(src: Path, dst: Path, seed: int) -> None:
    """Persist the effective seed so downstream commands see the run as-is."""
    lines = src.read_text().splitlines()
    out, in_scenario, seed_written = [], False, False
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("["):
            if in_scenario and not seed_written:
                out.append(f"seed = {seed}")
                seed_written = True
            in_scenario = stripped == "[scenario]"
        elif in_scenario and stripped.split("=")[0].strip() == "seed":
            line = f"seed = {seed}"
            seed_written = True
        out.append(line)
    if in_scenario and not seed_written:
        out.append(f"seed = {seed}")
    with atomic_write(dst) as handle:
        handle.write("\n".join(out) + "\n")


def cmd_sync(args) -> int:
    directory = Path(args.directory)
    scn, tags_path = _load_run_dir(directory)
    streams = read_tags(tags_path)
    mode = SyncMode.SYNCHRONIZED if args.mode == "sync" else SyncMode.DRIFTING
    records = run_stationary_sync(streams, scn.acquisition, mode, duration_s=scn.duration_s)
    out = Path(args.output) if args.output else directory / f"records_{mode.value}.csv"
    write_records_csv(out, records)
    locked = sum(1 for r in records if r.found)
    print(f"{mode.value}: {len(records)} acquisitions, {locked} locked -> {out}")

    if args.plot_data:
        other = SyncMode.DRIFTING if mode is SyncMode.SYNCHRONIZED else SyncMode.SYNCHRONIZED
        other_records = run_stationary_sync(streams, scn.acquisition, other, duration_s=scn.duration_s)
        by_mode = {mode: records, other: other_records}
        _emit_clock_figures(directory, by_mode, scn.acquisition.t_a_s)
    return 0


def _emit_clock_figures(directory: Path, by_mode, t_a_s: float) -> None:
    from . import plots

    sync_records = by_mode[SyncMode.SYNCHRONIZED]
    drift_records = by_mode[SyncMode.DRIFTING]
    t_s = [r.t_mid_ps / PS_PER_SECOND for r in sync_records]
    _write_table(
        directory / "fig2c.csv",
        ["t_s", "delta_sync_ps", "delta_drift_ps"],
        [
            [f"{t:.3f}", rs.delta_ps, rd.delta_ps]
            for t, rs, rd in zip(t_s, sync_records, drift_records)
        ],
    )
    plots.render_dual_offset(
        t_s,
        [r.delta_ps for r in sync_records],
        [r.delta_ps for r in drift_records],
        directory / "fig2c.png",
    )
    rows = []
    tables = {}
    for label, records in (("sync", sync_records), ("drift", drift_records)):
        series = PhaseSeries.from_offsets_ps(
            [r.delta_ps for r in records],
            t_a_s,
            gaps=[i for i, r in enumerate(records) if not r.found],
        )
        adev = overlapping_adev(series)
        tables[label] = (np.array([t for t, _ in adev]), np.array([d for _, d in adev]))
        rows.append(adev)
    taus = [t for t, _ in rows[0]]
    devs_sync = {t: d for t, d in rows[0]}
    devs_drift = {t: d for t, d in rows[1]}
    _write_table(
        directory / "fig2e.csv",
        ["tau_s", "adev_sync", "adev_drift"],
        [
            [f"{t:g}", f"{devs_sync[t]:.6g}", f"{devs_drift.get(t, float('nan')):.6g}"]
            for t in taus
        ],
    )
    plots.render_stability(tables, directory / "fig2e.png", ylabel="overlapping Allan deviation")


def cmd_track(args) -> int:
    directory = Path(args.directory)
    scn, tags_path = _load_run_dir(directory)
    if not scn.is_orbital:
        raise QttError("scenario has no orbit")
    if scn.tracking is None:
        raise QttError("scenario has no [tracking] section")
    streams = read_tags(tags_path)
    mode = SyncMode.SYNCHRONIZED if args.mode == "sync" else SyncMode.DRIFTING
    result = run_tracked_sync(
        streams,
        scn.orbit,
        scn.pass_epoch_ps,
        scn.acquisition,
        scn.tracking,
        mode=mode,
        duration_s=scn.duration_s,
    )
    out = Path(args.output) if args.output else directory / f"records_tracked_{mode.value}.csv"
    write_records_csv(out, result.records)

    grid_path = directory / "coarse_grid.csv"
    _write_coarse_grid(grid_path, result.scan)
    history_path = directory / "fit_history.csv"
    _write_fit_history(history_path, result, scn)
    locked = sum(1 for r in result.records if r.found)
    print(
        f"tracked {mode.value}: scan best a={result.scan.best_a_m / 1e3:.3f} km, "
        f"theta={math.degrees(result.scan.best_theta_rad):.3f} deg; "
        f"{len(result.records)} acquisitions, {locked} locked -> {out}"
    )
    if args.plot_data:
        from . import plots

        plots.render_coarse_grid(
            result.scan.a_values, result.scan.theta_values, result.scan.peak_counts,
            directory / "coarse_grid.png",
        )
        acq_t = [i * scn.acquisition.t_a_s for i, _ in result.history_down]
        plots.render_fit_history(
            acq_t,
            {
                "altitude (km)": (
                    [s.a_m / 1e3 for _, s in result.history_down],
                    [s.a_m / 1e3 for _, s in result.history_up],
                ),
                "inclination (deg)": (
                    [math.degrees(s.theta_rad) for _, s in result.history_down],
                    [math.degrees(s.theta_rad) for _, s in result.history_up],
                ),
                "drift slope": (
                    [s.drift_slope for _, s in result.history_down],
                    [s.drift_slope for _, s in result.history_up],
                ),
            },
            {
                "altitude (km)": scn.orbit.altitude_m / 1e3,
                "inclination (deg)": math.degrees(scn.orbit.inclination_rad),
                "drift slope": None,
            },
            directory / "fit_history.png",
        )
    return 0


def _write_coarse_grid(path, scan) -> None:
    """Matrix layout: first row inclination (deg), first column altitude (m)."""
    header = ["a_m\\theta_deg"] + [f"{math.degrees(t):.4f}" for t in scan.theta_values]
    rows = []
    for i, a in enumerate(scan.a_values):
        rows.append([f"{a:.1f}"] + [str(int(c)) for c in scan.peak_counts[i]])
    _write_table(path, header, rows)


def _write_fit_history(path, result, scn: Scenario) -> None:
    header = [
        "acq_index",
        "t_s",
        "direction",
        "a_m",
        "theta_deg",
        "drift_slope",
        "offset_ps",
        "sigma_a_m",
        "sigma_theta_deg",
        "sigma_drift",
        "sigma_offset_ps",
        "corr_a_drift",
    ]
    rows = []
    for direction, history in (("down", result.history_down), ("up", result.history_up)):
        for acq_index, state in history:
            if state.covariance is not None:
                sig = np.sqrt(np.maximum(np.diag(state.covariance), 0.0))
                corr = state.element_correlation(0, 2)
                extras = [
                    f"{sig[0]:.6g}",
                    f"{math.degrees(sig[1]):.6g}",
                    f"{sig[2]:.6g}",
                    f"{sig[3] * PS_PER_SECOND:.6g}",
                    f"{corr:.6g}",
                ]
            else:
                extras = ["", "", "", "", ""]
            rows.append(
                [
                    acq_index,
                    f"{acq_index * scn.acquisition.t_a_s:.3f}",
                    direction,
                    f"{state.a_m:.3f}",
                    f"{math.degrees(state.theta_rad):.6f}",
                    f"{state.drift_slope:.6e}",
                    f"{state.offset_s * PS_PER_SECOND:.3f}",
                ]
                + extras
            )
    _write_table(path, header, rows)


def cmd_stability(args) -> int:
    records_path = Path(args.records)
    if not records_path.exists():
        raise UsageError(f"records file not found: {records_path}")
    records = read_records_csv(records_path)
    if len(records) < 3:
        raise QttError("need at least 3 records for stability analysis")
    t_a_s = (records[1].t_mid_ps - records[0].t_mid_ps) / PS_PER_SECOND
    series = PhaseSeries.from_offsets_ps(
        [r.delta_ps for r in records],
        t_a_s,
        gaps=[i for i, r in enumerate(records) if not r.found],
    )
    out_prefix = Path(args.output_prefix) if args.output_prefix else records_path.with_suffix("")
    results = {
        "adev": overlapping_adev(series),
        "mdev": modified_adev(series),
        "tdev": time_deviation(series),
    }
    for name, table in results.items():
        path = Path(f"{out_prefix}_{name}.csv")
        _write_table(
            path, ["tau_s", name], [[f"{t:g}", f"{d:.6g}"] for t, d in table]
        )
        print(f"{name}: {len(table)} points -> {path}")
    if args.plot_data:
        from . import plots

        plots.render_stability(
            {
                name: (np.array([t for t, _ in tab]), np.array([d for _, d in tab]))
                for name, tab in results.items()
                if tab
            },
            Path(f"{out_prefix}_stability.png"),
        )
    return 0


def cmd_car(args) -> int:
    directory = Path(args.directory)
    scenario_path = directory / SCENARIO_COPY
    if scenario_path.exists():
        scn = load_scenario(scenario_path, seed_override=args.seed)
    else:
        scn = load_scenario(_resolve_scenario_path(args.directory), seed_override=args.seed)
    try:
        rates = [float(r) for r in args.sweep.split(",") if r.strip()]
    except ValueError:
        raise UsageError(f"bad --sweep list: {args.sweep!r}")
    if not rates:
        raise UsageError("empty --sweep list")

    duration = args.seconds
    rows = []
    sweep = []
    # the CAR study correlates the downlink only; silence the other source
    beta_off = replace(scn.source_beta, pair_rate=0.0, background_rate=0.0, dark_rate=0.0)
    for rate in rates:
        trial = replace(
            scn,
            duration_s=duration,
            source_alpha=replace(scn.source_alpha, background_rate=rate),
            source_beta=beta_off,
        )
        result = run_simulation(trial)
        cars, locks, peaks, accidentals = [], 0, [], []
        n_acq = int(duration // scn.acquisition.t_a_s)
        t_a_ps = scn.acquisition.t_a_ps
        local = result.streams.alice_local.tags
        receive = result.streams.bob_receive.tags
        pad = scn.acquisition.correlation.search_halfwidth
        for i in range(n_acq):
            t0, t1 = i * t_a_ps, (i + 1) * t_a_ps
            lw = local[(local >= t0) & (local < t1)]
            rw = receive[(receive >= t0 - pad) & (receive < t1 + pad)]
            res = correlate(lw, rw, scn.acquisition.correlation)
            if res.found:
                locks += 1
                cars.append(res.car)
                peaks.append(res.peak_height)
                accidentals.append(res.accidental_mean)
        mean_car = float(np.mean(cars)) if cars else float("nan")
        lock_fraction = locks / n_acq if n_acq else 0.0
        rows.append(
            [
                f"{rate:g}",
                f"{mean_car:.6g}",
                f"{lock_fraction:.4f}",
                f"{np.mean(peaks):.6g}" if peaks else "nan",
                f"{np.mean(accidentals):.6g}" if accidentals else "nan",
            ]
        )
        sweep.append((rate, mean_car, lock_fraction))
        print(f"background {rate:g}/s: CAR={mean_car:.3f}, lock={lock_fraction:.2%}")
    out = Path(args.output) if args.output else directory / "car_sweep.csv"
    _write_table(
        out, ["background_rate", "mean_car", "lock_fraction", "mean_peak", "mean_accidental"], rows
    )
    if args.plot_data:
        from . import plots

        plots.render_car_sweep(
            [s[0] for s in sweep], [s[1] for s in sweep], [s[2] for s in sweep],
            out.with_suffix(".png"),
        )
    return 0


def cmd_range(args) -> int:
    records_path = Path(args.records)
    if not records_path.exists():
        raise UsageError(f"records file not found: {records_path}")
    records = [r for r in read_records_csv(records_path) if r.found]
    if not records:
        raise QttError("no locked records to range on")
    c = PhysicalConstants().c
    t_s = np.array([r.t_mid_ps for r in records]) / PS_PER_SECOND
    d_m = np.array([r.t_prop_ps for r in records]) / PS_PER_SECOND * c

    d_ref = None
    orbit_dir = Path(args.orbit_dir) if args.orbit_dir else records_path.parent
    scenario_path = orbit_dir / SCENARIO_COPY
    if scenario_path.exists():
        scn = load_scenario(scenario_path)
        if scn.is_orbital:
            t_orbit = t_s - scn.pass_epoch_ps / PS_PER_SECOND
            down = prop_delay_s(scn.orbit, t_orbit, LinkDirection.DOWNLINK)
            up = prop_delay_s(scn.orbit, t_orbit, LinkDirection.UPLINK)
            d_ref = 0.5 * (down + up) * c
    if d_ref is None:
        d_ref = np.full_like(d_m, float(np.mean(d_m)))
        reference = "mean"
    else:
        reference = "emulated orbit"
    residual_cm = (d_m - d_ref) * 100.0

    out = Path(args.output) if args.output else records_path.with_name("range.csv")
    _write_table(
        out,
        ["t_s", "d_m", "d_reference_m", "residual_cm"],
        [
            [f"{t:.3f}", f"{d:.4f}", f"{r:.4f}", f"{res:.4f}"]
            for t, d, r, res in zip(t_s, d_m, d_ref, residual_cm)
        ],
    )
    print(
        f"range: {len(records)} points, reference={reference}, "
        f"residual std {np.std(residual_cm):.3f} cm -> {out}"
    )
    if args.plot_data:
        from . import plots

        fig_path = out.with_name("fig3.png")
        plots.render_range(t_s, d_m, residual_cm, fig_path, d_reference_m=d_ref)
        _write_table(
            out.with_name("fig3.csv"),
            ["t_s", "d_m", "d_reference_m", "residual_cm"],
            [
                [f"{t:.3f}", f"{d:.4f}", f"{r:.4f}", f"{res:.4f}"]
                for t, d, r, res in zip(t_s, d_m, d_ref, residual_cm)
            ],
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qttsim",
        description="Two-way quantum time transfer simulation and analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate tag streams for a scenario")
    p.add_argument("scenario", help="scenario file path or bundled scenario name")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sync", help="run the stationary two-way clock over a simulation directory")
    p.add_argument("directory")
    p.add_argument("--mode", choices=["sync", "drift"], default="sync")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--plot-data", action="store_true", help="emit figure data files and PNGs")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("track", help="run the orbit-tracking clock over an emulated pass")
    p.add_argument("directory")
    p.add_argument("--mode", choices=["sync", "drift"], default="sync")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("stability", help="ADEV/MDEV/TDEV tables from a records CSV")
    p.add_argument("records")
    p.add_argument("-o", "--output-prefix", default=None)
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("car", help="coincidence-to-accidental ratio vs background rate")
    p.add_argument("directory", help="simulation directory or scenario file")
    p.add_argument("--sweep", required=True, help="comma-separated background rates (counts/s)")
    p.add_argument("--seconds", type=float, default=10.0, help="sim length per rate")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(func=cmd_car)

    p = sub.add_parser("range", help="two-way ranging series from a records CSV")
    p.add_argument("records")
    p.add_argument("--orbit-dir", default=None, help="simulation directory for the emulated orbit")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(func=cmd_range)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except QttError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:  # console-script shim
    sys.exit(main())

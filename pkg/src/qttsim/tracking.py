"""Orbit tracking: coarse element scan, precise fit, and the tracked software clocks.

Satellite motion spreads the coincidence peak far beyond the correlation
window within one acquisition, so correlation only locks after the motion is
compensated. The pipeline is:

1. Coarse scan: grid over (altitude, inclination); each cell's propagation
   delay is subtracted from the receive tags and the correlation peak height
   recorded. Cells accurate enough to de-spread the peak form an island; the
   best cell seeds the fit.
2. Precise fit: accumulated coincidence offsets (t, tau) are fit with
   tau_fit(t) = T_prop(t; a, theta) + m*t + b, separable least squares:
   (m, b) solved exactly per outer iteration, (a, theta) by damped
   Gauss-Newton with a finite-difference Jacobian. m absorbs the clock's
   fractional frequency drift, b the constant offset.
3. Tracked clocks: per acquisition, the current tau_fit de-spreads the
   receive tags, correlation measures the residual offset, new coincidences
   join the accumulated set, and the fit is refreshed. The synchronized
   clock reports the residual (drift removed); the drifting clock reports
   the two-way offset with only the orbit delay removed, so it diverges at
   the clock drift rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    PS_PER_SECOND,
    ConfigError,
    FitError,
    ScanFailedError,
    StreamSet,
    SyncLostError,
    div_round_nearest,
    round_ps,
)
from .correlation import CorrelationConfig, correlate, pairs_in_window
from .orbit import LinkDirection, OrbitParams, prop_delay_s, prop_delay_sampled_s
from .sync import AcquisitionConfig, SyncMode, SyncRecord, absolute_offset


@dataclass(frozen=True)
class CoarseScanConfig:
    """Grid-search ranges and steps for the orbit element scan."""

    a_min_m: float = 650_000.0
    a_max_m: float = 750_000.0
    a_step_m: float = 133.0
    theta_min_rad: float = math.radians(96.0)
    theta_max_rad: float = math.radians(100.0)
    theta_step_rad: float = math.radians(0.1)
    scan_seconds: float = 1.0
    correlation: CorrelationConfig = field(default_factory=CorrelationConfig)

    def __post_init__(self):
        if self.a_step_m <= 0 or self.theta_step_rad <= 0 or self.scan_seconds <= 0:
            raise ConfigError("scan steps and duration must be > 0")
        if self.a_max_m < self.a_min_m or self.theta_max_rad < self.theta_min_rad:
            raise ConfigError("scan ranges must be ordered")

    @property
    def a_values(self) -> np.ndarray:
        return np.arange(self.a_min_m, self.a_max_m + 0.5 * self.a_step_m, self.a_step_m)

    @property
    def theta_values(self) -> np.ndarray:
        return np.arange(
            self.theta_min_rad, self.theta_max_rad + 0.5 * self.theta_step_rad, self.theta_step_rad
        )


@dataclass(frozen=True)
class CoarseScanResult:
    """Full scan grid plus the winning cell."""

    a_values: np.ndarray
    theta_values: np.ndarray
    peak_counts: np.ndarray  # shape (n_a, n_theta)
    found: np.ndarray        # bool, same shape
    best_a_m: float
    best_theta_rad: float
    best_tau_ps: int


@dataclass(frozen=True)
class OrbitFitState:
    """Orbit-fit parameters, their covariance, and the accumulated coincidences.

    ``drift_slope`` is the fitted m (the fractional frequency drift seen by
    this direction); ``offset_s`` is the constant term b. ``covariance``
    orders parameters (a_m, theta_rad, m, b_s).
    """

    a_m: float
    theta_rad: float
    drift_slope: float = 0.0
    offset_s: float = 0.0
    t_points_s: np.ndarray = field(default_factory=lambda: np.empty(0))
    tau_points_s: np.ndarray = field(default_factory=lambda: np.empty(0))
    covariance: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return int(self.t_points_s.size)

    def with_points(self, t_s: np.ndarray, tau_s: np.ndarray) -> "OrbitFitState":
        return replace(
            self,
            t_points_s=np.concatenate([self.t_points_s, t_s]),
            tau_points_s=np.concatenate([self.tau_points_s, tau_s]),
        )

    def element_correlation(self, i: int, j: int) -> float:
        """Correlation coefficient between fit parameters i and j."""
        if self.covariance is None:
            raise FitError("fit has no covariance yet")
        c = self.covariance
        denom = math.sqrt(c[i, i] * c[j, j])
        return float(c[i, j] / denom) if denom > 0 else 0.0


def _compensate_receive(
    receive_ps: np.ndarray, orbit: OrbitParams, direction: LinkDirection,
    drift_slope: float = 0.0, offset_s: float = 0.0,
) -> np.ndarray:
    """Subtract the modeled relative offset from receive tags (orbit-time ps).

    The model is evaluated at the estimated departure time (one fixed-point
    step back from the arrival tag), which keeps the compensation error far
    below the correlation window for LEO-scale range rates.
    """
    if receive_ps.size == 0:
        return receive_ps.copy()
    r_s = receive_ps / PS_PER_SECOND
    depart = r_s - prop_delay_sampled_s(orbit, r_s, direction)
    shift_s = prop_delay_sampled_s(orbit, depart, direction) + drift_slope * depart + offset_s
    return receive_ps - round_ps(shift_s * PS_PER_SECOND)


def coarse_scan(
    local_tags: np.ndarray,
    receive_tags: np.ndarray,
    template: OrbitParams,
    cfg: CoarseScanConfig,
    direction: LinkDirection = LinkDirection.DOWNLINK,
) -> CoarseScanResult:
    """Grid-scan orbit elements until motion compensation isolates coincidences.

    Tags are orbit-time picoseconds (epoch at culmination). Uses the first
    ``scan_seconds`` of the local stream. Ties between equally tall peaks go
    to the cell nearer the altitude-grid center. Raises ScanFailedError with
    the best observed significance when no cell locks.
    """
    if local_tags.size == 0 or receive_tags.size == 0:
        raise ScanFailedError("empty streams")
    t0 = int(local_tags[0])
    t1 = t0 + int(cfg.scan_seconds * PS_PER_SECOND)
    local_win = local_tags[(local_tags >= t0) & (local_tags < t1)]
    # generous receive slice: any cell's delay (< 6 ms for LEO) plus the search window
    pad = cfg.correlation.search_halfwidth + cfg.correlation.coincidence_window
    r_hi = t1 + int(6.0e-3 * PS_PER_SECOND) + pad
    receive_win = receive_tags[(receive_tags >= t0 - pad) & (receive_tags < r_hi)]

    a_values = cfg.a_values
    theta_values = cfg.theta_values
    peaks = np.zeros((a_values.size, theta_values.size), dtype=np.int64)
    found = np.zeros_like(peaks, dtype=bool)
    taus = np.zeros_like(peaks)
    best_significance = 0.0

    for i, a in enumerate(a_values):
        for j, theta in enumerate(theta_values):
            try:
                orbit = template.with_elements(float(a), float(theta))
                compensated = np.sort(_compensate_receive(receive_win, orbit, direction))
                result = correlate(local_win, compensated, cfg.correlation)
            except ConfigError:
                continue
            peaks[i, j] = result.peak_height
            found[i, j] = result.found
            if result.found:
                taus[i, j] = result.tau_ps
            if result.accidental_mean > 0:
                sig = (result.peak_height - result.accidental_mean) / math.sqrt(
                    result.accidental_mean
                )
                best_significance = max(best_significance, sig)

    if not found.any():
        raise ScanFailedError(
            f"no cell passed significance (best observed {best_significance:.2f} sigma)"
        )
    center_a = 0.5 * (a_values[0] + a_values[-1])
    flat = np.flatnonzero(found.ravel())
    heights = peaks.ravel()[flat]
    top = heights.max()
    winners = flat[heights == top]
    ai, tj = np.unravel_index(winners, peaks.shape)
    pick = int(np.argmin(np.abs(a_values[ai] - center_a)))
    best_i, best_j = int(ai[pick]), int(tj[pick])
    return CoarseScanResult(
        a_values=a_values,
        theta_values=theta_values,
        peak_counts=peaks,
        found=found,
        best_a_m=float(a_values[best_i]),
        best_theta_rad=float(theta_values[best_j]),
        best_tau_ps=int(taus[best_i, best_j]),
    )


# Fit internals -------------------------------------------------------------

_FD_STEP_A_M = 0.5
_FD_STEP_THETA_RAD = 5.0e-7
# convergence: step below (1 m, 1e-5 deg, 1e-13, 0.1 ps)
_STEP_TOL = np.array([1.0, math.radians(1.0e-5), 1.0e-13, 1.0e-13])
_MAX_ITER = 50


def _model_delay(template, direction, t_s, a, theta):
    return prop_delay_sampled_s(template.with_elements(a, theta), t_s, direction)


def _solve_linear(t_s: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Exact least-squares (slope, intercept) for y = m*t + b (centered form)."""
    t_mean = float(t_s.mean())
    y_mean = float(y.mean())
    tc = t_s - t_mean
    var = float(tc @ tc)
    if var == 0.0:
        raise FitError("singular normal equations in linear block")
    slope = float(tc @ (y - y_mean)) / var
    return slope, y_mean - slope * t_mean


def precise_fit(
    state: OrbitFitState,
    direction: LinkDirection,
    template: OrbitParams,
    min_points: int = 100,
    outlier_cut_s: float | None = None,
    bounds: tuple[float, float, float, float] | None = None,
) -> OrbitFitState:
    """Refine (a, theta, m, b) against the accumulated coincidence offsets.

    Separable weighted least squares with unit weights: the linear (m, b)
    block is solved exactly inside every outer iteration; the nonlinear
    (a, theta) block takes damped Gauss-Newton steps with a projected
    finite-difference Jacobian. One outlier-rejection pass (residuals beyond
    ``outlier_cut_s``) precedes the final fit. The covariance of all four
    parameters is evaluated at the solution.

    ``bounds`` = (a_lo, a_hi, theta_lo, theta_hi) confines trial steps to the
    neighborhood the coarse scan established; early, nearly degenerate fits
    can otherwise wander into unreachable geometry.
    """
    if state.n_points < min_points:
        raise FitError(f"fit needs >= {min_points} coincidences, have {state.n_points}")
    t_all = state.t_points_s
    tau_all = state.tau_points_s
    if bounds is None:
        bounds = (1.0, math.inf, 0.0, math.pi)
    a_lo, a_hi, th_lo, th_hi = bounds

    def run(t_s, tau_s, a0, theta0):
        a, theta = a0, theta0
        m, b = _solve_linear(t_s, tau_s - _model_delay(template, direction, t_s, a, theta))
        resid = tau_s - _model_delay(template, direction, t_s, a, theta) - m * t_s - b
        rss = float(resid @ resid)
        lam = 1e-3
        ones = np.ones_like(t_s)
        design = np.column_stack([t_s, ones])
        gram = design.T @ design
        for _ in range(_MAX_ITER):
            delay = _model_delay(template, direction, t_s, a, theta)
            col_a = (
                _model_delay(template, direction, t_s, a + _FD_STEP_A_M, theta)
                - _model_delay(template, direction, t_s, a - _FD_STEP_A_M, theta)
            ) / (2.0 * _FD_STEP_A_M)
            col_t = (
                _model_delay(template, direction, t_s, a, theta + _FD_STEP_THETA_RAD)
                - _model_delay(template, direction, t_s, a, theta - _FD_STEP_THETA_RAD)
            ) / (2.0 * _FD_STEP_THETA_RAD)
            jac = np.column_stack([col_a, col_t])
            # variable projection: remove the part the linear block absorbs
            try:
                proj = np.linalg.solve(gram, design.T @ jac)
            except np.linalg.LinAlgError as exc:
                raise FitError("singular normal equations") from exc
            jac_p = jac - design @ proj
            resid = tau_s - delay - m * t_s - b
            grad = jac_p.T @ resid
            hess = jac_p.T @ jac_p
            step = None
            for _ in range(12):
                damped = hess + lam * np.diag(np.maximum(np.diag(hess), 1e-30))
                try:
                    trial = np.linalg.solve(damped, grad)
                except np.linalg.LinAlgError as exc:
                    raise FitError("singular normal equations") from exc
                a_try = a + trial[0]
                theta_try = theta + trial[1]
                if not (a_lo <= a_try <= a_hi and th_lo < theta_try < th_hi):
                    lam *= 10.0
                    continue
                try:
                    delay_try = _model_delay(template, direction, t_s, a_try, theta_try)
                except ConfigError:
                    # geometry unreachable (e.g. inclination below the site latitude)
                    lam *= 10.0
                    continue
                m_try, b_try = _solve_linear(t_s, tau_s - delay_try)
                resid_try = tau_s - delay_try - m_try * t_s - b_try
                rss_try = float(resid_try @ resid_try)
                if rss_try <= rss:
                    step = np.array([trial[0], trial[1], m_try - m, b_try - b])
                    a, theta, m, b, rss = a_try, theta_try, m_try, b_try, rss_try
                    lam = max(lam * 0.3, 1e-9)
                    break
                lam *= 10.0
            if step is None or np.all(np.abs(step) < _STEP_TOL):
                break
        return a, theta, m, b, rss

    a, theta, m, b, rss = run(t_all, tau_all, state.a_m, state.theta_rad)

    cut = outlier_cut_s
    if cut is not None:
        resid = tau_all - _model_delay(template, direction, t_all, a, theta) - m * t_all - b
        keep = np.abs(resid) <= cut
        if keep.sum() >= min_points and not keep.all():
            a, theta, m, b, rss = run(t_all[keep], tau_all[keep], a, theta)
            t_fit, tau_fit = t_all[keep], tau_all[keep]
        else:
            t_fit, tau_fit = t_all, tau_all
    else:
        t_fit, tau_fit = t_all, tau_all

    cov = _fit_covariance(template, direction, t_fit, tau_fit, a, theta, m, b)
    return replace(
        state,
        a_m=a,
        theta_rad=theta,
        drift_slope=m,
        offset_s=b,
        covariance=cov,
    )


def _fit_covariance(template, direction, t_s, tau_s, a, theta, m, b) -> np.ndarray:
    col_a = (
        _model_delay(template, direction, t_s, a + _FD_STEP_A_M, theta)
        - _model_delay(template, direction, t_s, a - _FD_STEP_A_M, theta)
    ) / (2.0 * _FD_STEP_A_M)
    col_t = (
        _model_delay(template, direction, t_s, a, theta + _FD_STEP_THETA_RAD)
        - _model_delay(template, direction, t_s, a, theta - _FD_STEP_THETA_RAD)
    ) / (2.0 * _FD_STEP_THETA_RAD)
    jac = np.column_stack([col_a, col_t, t_s, np.ones_like(t_s)])
    resid = tau_s - _model_delay(template, direction, t_s, a, theta) - m * t_s - b
    dof = max(t_s.size - 4, 1)
    s2 = float(resid @ resid) / dof
    gram = jac.T @ jac
    try:
        cov = s2 * np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        cov = s2 * np.linalg.pinv(gram)
    return cov


@dataclass(frozen=True)
class TrackedSyncResult:
    """Tracked-pass outputs.

    ``acq_points_down`` / ``acq_points_up`` give each acquisition's slice
    (start, end) into the final fit state's accumulated point arrays, so
    consumers can evaluate per-acquisition quantities (e.g. the ranging
    series) at the exact coincidence times.
    """

    records: list[SyncRecord]
    history_down: list[tuple[int, OrbitFitState]]
    history_up: list[tuple[int, OrbitFitState]]
    scan: CoarseScanResult
    acq_points_down: list[tuple[int, int]] = field(default_factory=list)
    acq_points_up: list[tuple[int, int]] = field(default_factory=list)

    def final_state(self, direction: LinkDirection) -> OrbitFitState:
        history = self.history_down if direction is LinkDirection.DOWNLINK else self.history_up
        return history[-1][1]


def run_tracked_sync(
    streams: StreamSet,
    template: OrbitParams,
    pass_epoch_ps: int,
    cfg: AcquisitionConfig,
    scan_cfg: CoarseScanConfig,
    mode: SyncMode = SyncMode.SYNCHRONIZED,
    duration_s: float | None = None,
    min_fit_points: int = 100,
    dense_refits: int = 40,
    refit_interval: int = 4,
) -> TrackedSyncResult:
    """Track an emulated pass: scan once, then iterate correlate / accumulate / refit.

    ``pass_epoch_ps`` is the scenario time of culmination (orbit time 0).
    Record times are reported in scenario time. The drifting variant removes
    only the orbit delay from the reported offset, so its delta series
    diverges at the clock drift rate; the synchronized variant reports the
    residual after the full fit (drift included) is removed.

    The fit refreshes after every acquisition for the first ``dense_refits``
    (the convergence-critical phase), then every ``refit_interval``-th and at
    the final acquisition; the accumulated coincidence set itself is never
    decimated.
    """
    t_a_ps = cfg.t_a_ps
    if duration_s is None:
        last = min(s.tags[-1] for s in streams if len(s))
        n_acq = int(last // t_a_ps)
    else:
        n_acq = int(round(duration_s * PS_PER_SECOND)) // t_a_ps
    if n_acq < 1:
        raise ConfigError("streams shorter than one acquisition")

    epoch = int(pass_epoch_ps)
    directions = {
        LinkDirection.DOWNLINK: (
            streams.alice_local.tags - epoch,
            streams.bob_receive.tags - epoch,
        ),
        LinkDirection.UPLINK: (
            streams.bob_local.tags - epoch,
            streams.alice_receive.tags - epoch,
        ),
    }

    scan = coarse_scan(
        directions[LinkDirection.DOWNLINK][0],
        directions[LinkDirection.DOWNLINK][1],
        template,
        scan_cfg,
        LinkDirection.DOWNLINK,
    )

    states: dict[LinkDirection, OrbitFitState] = {}
    for direction in (LinkDirection.DOWNLINK, LinkDirection.UPLINK):
        states[direction] = OrbitFitState(
            a_m=scan.best_a_m,
            theta_rad=scan.best_theta_rad,
            drift_slope=0.0,
            offset_s=0.0,
        )

    history: dict[LinkDirection, list[tuple[int, OrbitFitState]]] = {
        LinkDirection.DOWNLINK: [],
        LinkDirection.UPLINK: [],
    }
    acq_points: dict[LinkDirection, list[tuple[int, int]]] = {
        LinkDirection.DOWNLINK: [],
        LinkDirection.UPLINK: [],
    }
    records: list[SyncRecord] = []
    consecutive_missed = 0
    corr = cfg.correlation
    pad = corr.search_halfwidth + corr.coincidence_window
    outlier_cut_s = 5.0 * corr.coincidence_window / PS_PER_SECOND
    # confine the fit to the scan's neighborhood (10 grid steps of slack)
    fit_bounds = (
        scan_cfg.a_min_m - 10 * scan_cfg.a_step_m,
        scan_cfg.a_max_m + 10 * scan_cfg.a_step_m,
        scan_cfg.theta_min_rad - 10 * scan_cfg.theta_step_rad,
        scan_cfg.theta_max_rad + 10 * scan_cfg.theta_step_rad,
    )

    for i in range(n_acq):
        t0 = i * t_a_ps - epoch
        t1 = t0 + t_a_ps
        measured: dict[LinkDirection, dict] = {}
        for direction, (local, receive) in directions.items():
            state = states[direction]
            lo = np.searchsorted(local, t0, side="left")
            hi = np.searchsorted(local, t1, side="left")
            local_win = local[lo:hi]
            max_delay = int(6.0e-3 * PS_PER_SECOND)
            rlo = np.searchsorted(receive, t0 - pad, side="left")
            rhi = np.searchsorted(receive, t1 + max_delay + pad, side="left")
            receive_raw = receive[rlo:rhi]
            orbit = template.with_elements(state.a_m, state.theta_rad)
            compensated = _compensate_receive(
                receive_raw, orbit, direction, state.drift_slope, state.offset_s
            )
            order = np.argsort(compensated, kind="stable")
            compensated_sorted = compensated[order]
            found = False
            info = {"found": False, "state": state}
            n_before = state.n_points
            if local_win.size and compensated_sorted.size:
                try:
                    result = correlate(local_win, compensated_sorted, corr)
                except ConfigError:
                    result = None
                if result is not None and result.found:
                    found = True
                    li, rj = pairs_in_window(
                        local_win, compensated_sorted, result.tau_ps, corr.coincidence_window
                    )
                    raw_receive = receive_raw[order][rj]
                    t_pts = local_win[li] / PS_PER_SECOND
                    tau_pts = (raw_receive - local_win[li]) / PS_PER_SECOND
                    resid_mean_ps = div_round_nearest(
                        int(np.sum(compensated_sorted[rj] - local_win[li], dtype=np.int64)),
                        li.size,
                    )
                    state = state.with_points(t_pts, tau_pts)
                    refit_due = (
                        i < dense_refits or i % refit_interval == 0 or i == n_acq - 1
                    )
                    if refit_due and state.n_points >= min_fit_points:
                        state = precise_fit(
                            state, direction, template,
                            min_points=min_fit_points, outlier_cut_s=outlier_cut_s,
                            bounds=fit_bounds,
                        )
                    states[direction] = state
                    info = {
                        "found": True,
                        "state": state,
                        "tau_mean_ps": div_round_nearest(
                            int(np.sum(raw_receive - local_win[li], dtype=np.int64)), li.size
                        ),
                        "t_mean_s": float(t_pts.mean()),
                        "resid_ps": resid_mean_ps,
                    }
            measured[direction] = info
            history[direction].append((i, states[direction]))
            acq_points[direction].append((n_before, states[direction].n_points))

        down = measured[LinkDirection.DOWNLINK]
        up = measured[LinkDirection.UPLINK]
        if down["found"] and up["found"]:
            consecutive_missed = 0
            tprop_a = round_ps(
                float(
                    prop_delay_s(
                        template.with_elements(down["state"].a_m, down["state"].theta_rad),
                        down["t_mean_s"],
                        LinkDirection.DOWNLINK,
                    )
                )
                * PS_PER_SECOND
            )
            tprop_b = round_ps(
                float(
                    prop_delay_s(
                        template.with_elements(up["state"].a_m, up["state"].theta_rad),
                        up["t_mean_s"],
                        LinkDirection.UPLINK,
                    )
                )
                * PS_PER_SECOND
            )
            if mode is SyncMode.SYNCHRONIZED:
                delta = div_round_nearest(down["resid_ps"] - up["resid_ps"], 2)
            else:
                delta = absolute_offset(down["tau_mean_ps"], up["tau_mean_ps"], tprop_a, tprop_b)
            records.append(
                SyncRecord(
                    acq_index=i,
                    t_mid_ps=i * t_a_ps + t_a_ps // 2,
                    tau_alpha_ps=down["tau_mean_ps"],
                    tau_beta_ps=up["tau_mean_ps"],
                    delta_ps=delta,
                    t_prop_ps=div_round_nearest(down["tau_mean_ps"] + up["tau_mean_ps"], 2),
                    drift_alpha=down["state"].drift_slope,
                    drift_beta=up["state"].drift_slope,
                    found_alpha=True,
                    found_beta=True,
                )
            )
        else:
            consecutive_missed += 1
            records.append(
                SyncRecord(
                    acq_index=i,
                    t_mid_ps=i * t_a_ps + t_a_ps // 2,
                    tau_alpha_ps=down.get("tau_mean_ps", 0),
                    tau_beta_ps=up.get("tau_mean_ps", 0),
                    delta_ps=0,
                    t_prop_ps=0,
                    drift_alpha=states[LinkDirection.DOWNLINK].drift_slope,
                    drift_beta=states[LinkDirection.UPLINK].drift_slope,
                    found_alpha=bool(down["found"]),
                    found_beta=bool(up["found"]),
                )
            )
            if consecutive_missed > cfg.max_missed:
                raise SyncLostError(i)
    return TrackedSyncResult(
        records=records,
        history_down=history[LinkDirection.DOWNLINK],
        history_up=history[LinkDirection.UPLINK],
        scan=scan,
        acq_points_down=acq_points[LinkDirection.DOWNLINK],
        acq_points_up=acq_points[LinkDirection.UPLINK],
    )

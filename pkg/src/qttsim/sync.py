"""Two-way offset recovery and the recursive synchronized / drifting clocks.

Each acquisition window is correlated in both link directions. The relative
offsets tau_alpha (Bob receive minus Alice local) and tau_beta (Alice receive
minus Bob local) combine into the absolute clock offset

    delta = (tau_alpha - tau_beta - T_prop_alpha + T_prop_beta) / 2

which is Bob's clock reading minus Alice's. On a stationary symmetric link
the propagation terms cancel and (tau_alpha + tau_beta) / 2 measures the
propagation time itself (the ranging product).

The synchronized software clock is a feed-forward servo: the fractional
frequency drift estimated from successive offsets pre-shifts the next
acquisition's receive tags, so the reported offset is the residual
synchronization error. The drifting clock correlates every acquisition
independently and just records the diverging offset.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import PS_PER_SECOND, ConfigError, StreamSet, SyncLostError, div_round_nearest
from .correlation import CorrelationConfig, CorrelationResult, correlate


class SyncMode(enum.Enum):
    SYNCHRONIZED = "synchronized"
    DRIFTING = "drifting"


@dataclass(frozen=True)
class AcquisitionConfig:
    """Acquisition length and correlation parameters for the sync loop."""

    t_a_s: float = 1.0
    correlation: CorrelationConfig = field(default_factory=CorrelationConfig)
    max_missed: int = 5

    def __post_init__(self):
        if self.t_a_s <= 0:
            raise ConfigError("acquisition time must be > 0")
        if self.max_missed < 1:
            raise ConfigError("max_missed must be >= 1")

    @property
    def t_a_ps(self) -> int:
        return int(round(self.t_a_s * PS_PER_SECOND))


@dataclass(frozen=True)
class SyncRecord:
    """One acquisition's two-way measurement.

    tau fields are the absolute relative offsets per direction (servo
    corrections added back). ``delta_ps`` is the mode's clock-offset product:
    the servo residual for the synchronized clock, the raw two-way offset for
    the drifting clock. ``t_prop_ps`` is (tau_alpha + tau_beta) / 2.
    """

    acq_index: int
    t_mid_ps: int
    tau_alpha_ps: int
    tau_beta_ps: int
    delta_ps: int
    t_prop_ps: int
    drift_alpha: float
    drift_beta: float
    found_alpha: bool
    found_beta: bool

    @property
    def found(self) -> bool:
        return self.found_alpha and self.found_beta


def absolute_offset(tau_alpha_ps: int, tau_beta_ps: int, tprop_alpha_ps: int, tprop_beta_ps: int) -> int:
    """Absolute clock offset from the two directions' relative offsets.

    Exact integer evaluation of (tau_alpha - tau_beta - T_alpha + T_beta) / 2
    with the final halving rounded to nearest, ties away from zero.
    """
    s = int(tau_alpha_ps) - int(tau_beta_ps) - int(tprop_alpha_ps) + int(tprop_beta_ps)
    return div_round_nearest(s, 2)


class _DirectionTracker:
    """Per-direction servo state: cumulative correction and drift history."""

    def __init__(self, local_tags: np.ndarray, receive_tags: np.ndarray, apply_feedforward: bool):
        self.local = local_tags
        self.receive = receive_tags
        self.apply_feedforward = apply_feedforward
        self.correction_ps = 0
        self.drift = 0.0
        self.last_raw_tau: int | None = None
        self.last_raw_index = -1

    def measure(self, acq_index: int, t0_ps: int, t1_ps: int, cfg: AcquisitionConfig) -> tuple[bool, int]:
        """Correlate one acquisition window; returns (found, raw tau)."""
        corr = cfg.correlation
        pad = corr.search_halfwidth + corr.coincidence_window
        lo = np.searchsorted(self.local, t0_ps, side="left")
        hi = np.searchsorted(self.local, t1_ps, side="left")
        local_win = self.local[lo:hi]
        rlo = np.searchsorted(self.receive, t0_ps + self.correction_ps - pad, side="left")
        rhi = np.searchsorted(self.receive, t1_ps + self.correction_ps + pad, side="left")
        receive_win = self.receive[rlo:rhi] - self.correction_ps

        found = False
        raw_tau = self._predicted_raw(acq_index, cfg.t_a_ps)
        if local_win.size and receive_win.size:
            try:
                result: CorrelationResult = correlate(local_win, receive_win, corr)
            except ConfigError:
                result = None
            if result is not None and result.found:
                found = True
                raw_tau = int(result.tau_ps) + self.correction_ps

        if found:
            if self.last_raw_tau is not None:
                dt_ps = (acq_index - self.last_raw_index) * cfg.t_a_ps
                self.drift = (raw_tau - self.last_raw_tau) / dt_ps
            self.last_raw_tau = raw_tau
            self.last_raw_index = acq_index
        if self.apply_feedforward:
            self.correction_ps += int(round(self.drift * cfg.t_a_ps))
        return found, raw_tau

    def _predicted_raw(self, acq_index: int, t_a_ps: int) -> int:
        """Extrapolated offset used to fill records for missed acquisitions."""
        if self.last_raw_tau is None:
            return 0
        elapsed_ps = (acq_index - self.last_raw_index) * t_a_ps
        return self.last_raw_tau + int(round(self.drift * elapsed_ps))


def run_stationary_sync(
    streams: StreamSet,
    cfg: AcquisitionConfig,
    mode: SyncMode,
    duration_s: float | None = None,
) -> list[SyncRecord]:
    """Run the two-way clock over consecutive acquisitions of a stationary link.

    Synchronized mode estimates the per-direction fractional drift from
    successive offsets and pre-shifts the next acquisition's receive tags by
    drift * T_a; its delta series is the servo residual. Drifting mode does
    no feed-forward and reports the raw two-way offset. Acquisitions where
    either direction fails to lock carry the previous drift forward and are
    marked; more than ``max_missed`` consecutive failures raises
    SyncLostError.
    """
    t_a_ps = cfg.t_a_ps
    if duration_s is None:
        last = min(s.tags[-1] for s in streams if len(s)) if any(len(s) for s in streams) else 0
        n_acq = int(last // t_a_ps)
    else:
        n_acq = int(round(duration_s * PS_PER_SECOND)) // t_a_ps
    if n_acq < 1:
        raise ConfigError("streams shorter than one acquisition")

    feedforward = mode is SyncMode.SYNCHRONIZED
    down = _DirectionTracker(streams.alice_local.tags, streams.bob_receive.tags, feedforward)
    up = _DirectionTracker(streams.bob_local.tags, streams.alice_receive.tags, feedforward)

    records: list[SyncRecord] = []
    consecutive_missed = 0
    for i in range(n_acq):
        t0 = i * t_a_ps
        t1 = t0 + t_a_ps
        corr_down = down.correction_ps
        corr_up = up.correction_ps
        found_a, raw_a = down.measure(i, t0, t1, cfg)
        found_b, raw_b = up.measure(i, t0, t1, cfg)

        if mode is SyncMode.SYNCHRONIZED:
            delta = div_round_nearest((raw_a - corr_down) - (raw_b - corr_up), 2)
        else:
            delta = div_round_nearest(raw_a - raw_b, 2)
        records.append(
            SyncRecord(
                acq_index=i,
                t_mid_ps=t0 + t_a_ps // 2,
                tau_alpha_ps=raw_a,
                tau_beta_ps=raw_b,
                delta_ps=delta,
                t_prop_ps=div_round_nearest(raw_a + raw_b, 2),
                drift_alpha=down.drift,
                drift_beta=up.drift,
                found_alpha=found_a,
                found_beta=found_b,
            )
        )
        if found_a and found_b:
            consecutive_missed = 0
        else:
            consecutive_missed += 1
            if consecutive_missed > cfg.max_missed:
                raise SyncLostError(i)
    return records

"""Clock-stability statistics: overlapping Allan, modified Allan, and time deviations.

All estimators run on a regularly sampled phase series x (seconds) with
spacing tau0. Missing acquisitions are handled by pairwise exclusion: any
second difference touching a gap is dropped from the average. Log-log slopes
of the deviations identify the dominant noise type (white PM: ADEV -1,
MDEV -1.5; flicker PM: MDEV -1; white FM: ADEV -1/2, TDEV +1/2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError


@dataclass(frozen=True)
class PhaseSeries:
    """Regularly sampled clock phase (seconds) with optional gaps.

    ``gaps`` lists indices whose values are placeholders (missed
    acquisitions); they are excluded pairwise from every estimator.
    """

    x: np.ndarray
    tau0_s: float
    gaps: tuple[int, ...] = ()

    def __post_init__(self):
        arr = np.asarray(self.x, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 3:
            raise ConfigError("phase series needs at least 3 samples")
        if self.tau0_s <= 0:
            raise ConfigError("tau0 must be > 0")
        if any(g < 0 or g >= arr.size for g in self.gaps):
            raise ConfigError("gap index out of range")
        object.__setattr__(self, "x", arr)
        object.__setattr__(self, "gaps", tuple(sorted(set(int(g) for g in self.gaps))))

    @property
    def valid_mask(self) -> np.ndarray:
        mask = np.ones(self.x.size, dtype=bool)
        if self.gaps:
            mask[list(self.gaps)] = False
        return mask

    @classmethod
    def from_offsets_ps(cls, delta_ps, tau0_s: float, gaps=()) -> "PhaseSeries":
        return cls(np.asarray(delta_ps, dtype=np.float64) * 1e-12, tau0_s, tuple(gaps))


def default_tau_grid(series: PhaseSeries) -> list[float]:
    """Octave-spaced averaging times from tau0 to N*tau0/4."""
    n = series.x.size
    taus = []
    m = 1
    while m <= n // 4:
        taus.append(m * series.tau0_s)
        m *= 2
    return taus or [series.tau0_s]


def _averaging_factor(series: PhaseSeries, tau_s: float) -> int:
    m = tau_s / series.tau0_s
    m_int = int(round(m))
    if abs(m - m_int) > 1e-9 or m_int < 1:
        raise ConfigError(f"tau {tau_s} is not an integer multiple of tau0 {series.tau0_s}")
    if m_int > (series.x.size - 1) // 2:
        raise ConfigError(f"tau {tau_s} too long for series of {series.x.size} samples")
    return m_int


def _second_differences(series: PhaseSeries, m: int) -> tuple[np.ndarray, np.ndarray]:
    x = series.x
    v = series.valid_mask
    d = x[2 * m :] - 2.0 * x[m : x.size - m] + x[: x.size - 2 * m]
    dv = v[2 * m :] & v[m : x.size - m] & v[: x.size - 2 * m]
    return d, dv


def overlapping_adev(series: PhaseSeries, taus=None) -> list[tuple[float, float]]:
    """Overlapping Allan deviation at the requested averaging times.

    sigma_y^2(m tau0) = sum (x[i+2m] - 2 x[i+m] + x[i])^2
                        / (2 (N - 2m) (m tau0)^2)
    with gapped terms excluded pairwise.
    """
    taus = default_tau_grid(series) if taus is None else list(taus)
    out = []
    for tau in taus:
        m = _averaging_factor(series, tau)
        d, dv = _second_differences(series, m)
        count = int(dv.sum())
        if count == 0:
            continue
        avar = float(np.sum(d[dv] ** 2)) / (2.0 * count * (m * series.tau0_s) ** 2)
        out.append((float(tau), math.sqrt(avar)))
    return out


def modified_adev(series: PhaseSeries, taus=None) -> list[tuple[float, float]]:
    """Modified Allan deviation (phase-averaged second differences).

    Averaging the second differences over m adjacent samples before squaring
    separates white PM (slope -3/2) from flicker PM (slope -1). Windows
    touching a gap are excluded.
    """
    taus = default_tau_grid(series) if taus is None else list(taus)
    n = series.x.size
    out = []
    for tau in taus:
        m = _averaging_factor(series, tau)
        if 3 * m > n:
            continue
        d, dv = _second_differences(series, m)
        sums = np.convolve(np.where(dv, d, 0.0), np.ones(m), mode="valid")
        counts = np.convolve(dv.astype(np.float64), np.ones(m), mode="valid")
        full = counts > m - 0.5
        n_windows = int(full.sum())
        if n_windows == 0:
            continue
        mvar = float(np.sum(sums[full] ** 2)) / (
            2.0 * m * m * (m * series.tau0_s) ** 2 * n_windows
        )
        out.append((float(tau), math.sqrt(mvar)))
    return out


def time_deviation(series: PhaseSeries, taus=None) -> list[tuple[float, float]]:
    """Time deviation TDEV(tau) = tau * mod sigma_y(tau) / sqrt(3)."""
    return [(tau, tau * mdev / math.sqrt(3.0)) for tau, mdev in modified_adev(series, taus)]


def fit_loglog_slope(points, tau_range: tuple[float, float]) -> float:
    """Least-squares slope of log(dev) against log(tau) within [tau_min, tau_max].

    Nonpositive deviations are excluded with a warning; fewer than three
    usable points is an error.
    """
    tau_min, tau_max = tau_range
    kept_tau, kept_dev = [], []
    dropped = 0
    for tau, dev in points:
        if not tau_min <= tau <= tau_max:
            continue
        if dev <= 0:
            dropped += 1
            continue
        kept_tau.append(tau)
        kept_dev.append(dev)
    if dropped:
        warnings.warn(f"excluded {dropped} nonpositive deviation points from slope fit")
    if len(kept_tau) < 3:
        raise ConfigError("need at least 3 positive points in range for a slope fit")
    slope, _ = np.polyfit(np.log10(kept_tau), np.log10(kept_dev), 1)
    return float(slope)

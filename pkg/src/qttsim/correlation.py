"""Coincidence correlation: peak search, offset recovery, pairing, and CAR.

The relative clock offset between a local and a receive stream is the
location of the coincidence peak in the histogram of pairwise time
differences (receive minus local), restricted to a configured search window.
The histogram is built by a windowed merge sweep (binary-search windows per
local tag, never the full outer product), entirely in integer picoseconds.
The peak location is refined to a centroid fixed point, coincidence pairs are
extracted around it, and the coincidence-to-accidental ratio is the peak bin
height over the mean off-peak bin level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import ConfigError, TagStream, as_tag_array, div_round_nearest, round_ps

# Cap transient pair-index arrays; chunking keeps memory flat on dense streams.
_MAX_PAIRS_PER_CHUNK = 4_000_000


@dataclass(frozen=True)
class CorrelationConfig:
    """Histogram and peak-acceptance parameters (picoseconds).

    search_halfwidth: largest |offset| scanned.
    coarse_bin: histogram bin width for the peak search.
    coincidence_window: half-width used for pair matching and centroid
        refinement once the peak bin is found.
    fine_bin: quantum of the refined offset.
    min_peak_significance: required peak height above the accidental level,
        in accidental-level standard deviations. The acceptance test uses the
        exact Poisson tail at the equivalent Gaussian false-alarm probability
        so small accidental levels do not inflate the lock rate.
    """

    coarse_bin: int = 500
    search_halfwidth: int = 10_000_000
    coincidence_window: int = 1000
    fine_bin: int = 1
    min_peak_significance: float = 6.0

    def __post_init__(self):
        if min(self.coarse_bin, self.search_halfwidth, self.coincidence_window, self.fine_bin) <= 0:
            raise ConfigError("correlation window parameters must be > 0")
        if self.fine_bin > self.coarse_bin:
            raise ConfigError("fine_bin must be <= coarse_bin")
        if self.coincidence_window < self.fine_bin:
            raise ConfigError("coincidence_window must be >= fine_bin")
        if self.search_halfwidth < self.coarse_bin:
            raise ConfigError("search_halfwidth must be >= coarse_bin")
        if self.min_peak_significance <= 0:
            raise ConfigError("min_peak_significance must be > 0")


@dataclass(frozen=True)
class CorrelationResult:
    """Outcome of one correlation attempt.

    ``tau_ps`` is the refined peak centroid (receive minus local) and is None
    when ``found`` is False. ``coincidences`` holds the matched (local,
    receive) tag pairs within the coincidence window of tau. When the
    accidental floor is exactly zero, ``car`` degrades to the raw peak height
    and ``zero_accidental`` is set.
    """

    found: bool
    tau_ps: int | None
    peak_height: int
    accidental_mean: float
    car: float
    coincidences: tuple[np.ndarray, np.ndarray] = field(
        default_factory=lambda: (np.empty(0, np.int64), np.empty(0, np.int64))
    )
    zero_accidental: bool = False

    @property
    def n_coincidences(self) -> int:
        return int(self.coincidences[0].size)


def _not_found(peak_height: int = 0, accidental_mean: float = 0.0, car: float = 0.0):
    return CorrelationResult(
        found=False,
        tau_ps=None,
        peak_height=int(peak_height),
        accidental_mean=float(accidental_mean),
        car=float(car),
        zero_accidental=accidental_mean == 0.0,
    )


def _chunk_size(local_n: int, receive: np.ndarray, width_ps: int, span_ps: int) -> int:
    density = receive.size / max(span_ps, 1)
    per_tag = max(density * width_ps, 1.0)
    return int(np.clip(_MAX_PAIRS_PER_CHUNK / per_tag, 1024, 1 << 20))


def lag_histogram(
    local: np.ndarray, receive: np.ndarray, lo_ps: int, n_bins: int, bin_ps: int
) -> np.ndarray:
    """Counts of pairwise differences (receive - local) in n_bins bins from lo_ps.

    Windowed sweep: for each local tag, only receive tags inside
    [tag+lo, tag+hi) contribute, located by binary search on the sorted
    stream. Work is O((N+M) log + number of in-window pairs).
    """
    hi_ps = lo_ps + n_bins * bin_ps
    counts = np.zeros(n_bins, dtype=np.int64)
    if local.size == 0 or receive.size == 0:
        return counts
    span = int(max(local[-1], receive[-1]) - min(local[0], receive[0]))
    step = _chunk_size(local.size, receive, hi_ps - lo_ps, span)
    for start in range(0, local.size, step):
        chunk = local[start : start + step]
        left = np.searchsorted(receive, chunk + lo_ps, side="left")
        right = np.searchsorted(receive, chunk + hi_ps, side="left")
        k = right - left
        total = int(k.sum())
        if total == 0:
            continue
        # flat receive indices for all windows in this chunk
        offsets = np.repeat(np.cumsum(k) - k, k)
        flat = np.arange(total) - offsets + np.repeat(left, k)
        diffs = receive[flat] - np.repeat(chunk, k)
        counts += np.bincount((diffs - lo_ps) // bin_ps, minlength=n_bins)
    return counts


def pairs_in_window(
    local: np.ndarray, receive: np.ndarray, center_ps: int, halfwidth_ps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i_local, j_receive) with |receive - local - center| <= halfwidth."""
    if local.size == 0 or receive.size == 0:
        return np.empty(0, np.intp), np.empty(0, np.intp)
    left = np.searchsorted(receive, local + (center_ps - halfwidth_ps), side="left")
    right = np.searchsorted(receive, local + (center_ps + halfwidth_ps), side="right")
    k = right - left
    total = int(k.sum())
    if total == 0:
        return np.empty(0, np.intp), np.empty(0, np.intp)
    offsets = np.repeat(np.cumsum(k) - k, k)
    j = np.arange(total) - offsets + np.repeat(left, k)
    i = np.repeat(np.arange(local.size), k)
    return i.astype(np.intp), j.astype(np.intp)


def _window_anchor(diffs: np.ndarray, halfwidth: int, fallback: int) -> int:
    """Center of the densest coincidence window over the given differences.

    The anchor is a function of the difference multiset alone (no histogram
    grid), so it commutes exactly with integer shifts of either stream. Among
    equally dense windows the one centered nearest zero wins (the configured
    tie-break for symmetric noise).
    """
    if diffs.size == 0:
        return fallback
    d = np.sort(diffs)
    right = np.searchsorted(d, d + 2 * halfwidth, side="right")
    counts = right - np.arange(d.size)
    best = int(counts.max())
    starts = np.flatnonzero(counts == best)
    centers = [
        div_round_nearest(int(d[i]) + int(d[i + best - 1]), 2) for i in starts
    ]
    return min(centers, key=lambda c: (abs(c), c))


def _centroid_fixed_point(
    local: np.ndarray, receive: np.ndarray, start_ps: int, cfg: CorrelationConfig
) -> int:
    """Refine the offset: densest-window anchor, then a centroid fixed point.

    Every step is a function of the pairwise-difference multiset, so the
    refined offset commutes exactly with integer shifts of either stream.
    Pairs are materialized once inside a widened envelope around the coarse
    peak and re-extracted only if the iteration walks out of it; a two-cycle
    (round-to-nearest can oscillate by 1 ps) resolves deterministically to
    the smaller value.
    """
    w = cfg.coincidence_window
    envelope = w + 4 * cfg.coarse_bin
    center = int(start_ps)
    i, j = pairs_in_window(local, receive, center, envelope)
    diffs = receive[j] - local[i]
    tau = _window_anchor(diffs, w, center)
    seen: set[int] = set()
    for _ in range(32):
        if abs(tau - center) + w > envelope:
            center = tau
            i, j = pairs_in_window(local, receive, center, envelope)
            diffs = receive[j] - local[i]
        sel = diffs[(diffs >= tau - w) & (diffs <= tau + w)]
        if sel.size == 0:
            return tau
        nxt = div_round_nearest(int(np.sum(sel, dtype=np.int64)), int(sel.size))
        if cfg.fine_bin > 1:
            nxt = div_round_nearest(nxt, cfg.fine_bin) * cfg.fine_bin
        if nxt == tau:
            return tau
        if nxt in seen:
            return min(nxt, tau)
        seen.add(tau)
        tau = nxt
    return tau


def poisson_peak_threshold(accidental_mean: float, significance: float) -> int:
    """Smallest count that rejects 'accidental fluctuation' at the configured level.

    Uses the exact Poisson upper tail at the one-sided Gaussian p-value of
    ``significance``; for large means this approaches mean + z*sqrt(mean).
    A floor of 3 counts guards the empty-accidental-floor regime, where the
    tail test alone would lock on a single stray pair.
    """
    if accidental_mean <= 0.0:
        return 3
    p = float(stats.norm.sf(significance))
    return max(3, int(stats.poisson.isf(p, accidental_mean)) + 1)


def correlate(local, receive, cfg: CorrelationConfig) -> CorrelationResult:
    """Locate the coincidence peak of receive against local and measure its offset.

    Returns found=False (not an exception) when either stream is empty or no
    bin beats the significance threshold. Ties between equal-height peak bins
    break toward the smallest |offset|.
    """
    local = as_tag_array(local)
    receive = as_tag_array(receive)
    if local.size == 0 or receive.size == 0:
        return _not_found()
    span = int(max(local[-1], receive[-1]) - min(local[0], receive[0]))
    if span < cfg.coarse_bin:
        raise ConfigError("combined stream span shorter than one histogram bin")
    if cfg.search_halfwidth > span:
        raise ConfigError("search_halfwidth exceeds the stream span")

    half_bins = -(-cfg.search_halfwidth // cfg.coarse_bin)
    n_bins = 2 * half_bins
    lo = -half_bins * cfg.coarse_bin
    counts = lag_histogram(local, receive, lo, n_bins, cfg.coarse_bin)

    peak_height = int(counts.max())
    if peak_height == 0:
        return _not_found()
    centers = lo + (np.arange(n_bins) + 0.5) * cfg.coarse_bin
    candidates = np.flatnonzero(counts == peak_height)
    peak_bin = int(candidates[np.argmin(np.abs(centers[candidates]))])
    peak_center = centers[peak_bin]

    off_peak = np.abs(centers - peak_center) > 10.0 * cfg.coincidence_window
    accidental_mean = float(counts[off_peak].mean()) if np.any(off_peak) else 0.0

    threshold = poisson_peak_threshold(accidental_mean, cfg.min_peak_significance)
    if peak_height < threshold:
        flat_mean = float(counts.mean())
        car = flat_mean / accidental_mean if accidental_mean > 0 else 0.0
        return _not_found(peak_height, accidental_mean, car)

    tau = _centroid_fixed_point(local, receive, round_ps(peak_center), cfg)
    i, j = pairs_in_window(local, receive, tau, cfg.coincidence_window)
    if accidental_mean > 0:
        car = peak_height / accidental_mean
        zero_acc = False
    else:
        car = float(peak_height)
        zero_acc = True
    return CorrelationResult(
        found=True,
        tau_ps=int(tau),
        peak_height=peak_height,
        accidental_mean=accidental_mean,
        car=car,
        coincidences=(local[i].copy(), receive[j].copy()),
        zero_accidental=zero_acc,
    )


def apply_drift_compensation(stream, drift: float, t_ref_ps: int):
    """Undo a linear frequency offset: t -> t - drift * (t - t_ref), rounded to ps.

    Re-sharpens a drift-broadened coincidence peak before correlation.
    Collisions created by rounding are merged.
    """
    if abs(drift) >= 1.0e-4:
        raise ConfigError("drift compensation beyond sanity bound 1e-4")
    tags = as_tag_array(stream)
    if tags.size and drift != 0.0:
        correction = drift * (tags - int(t_ref_ps)).astype(np.float64)
        tags = np.unique(tags - round_ps(correction))
    elif tags.size:
        tags = tags.copy()
    if isinstance(stream, TagStream):
        return TagStream(stream.channel, tags)
    return tags

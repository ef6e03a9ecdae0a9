"""Site clock models: offset, frequency drift, aging, and white-FM noise.

A site clock maps true time t to the local reading

    t_local = t + delta0 + drift * t + 0.5 * aging * t^2 + x_noise(t)

where x_noise is integrated white frequency noise (random-walk phase) whose
1-s Allan deviation equals ``white_fm_amplitude``. Both detectors at a site
share one clock, so the same phase realization is applied to a site's local
and receive streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import (
    PS_PER_SECOND,
    ConfigError,
    TagStream,
    as_tag_array,
    round_ps,
)

# Phase-noise realizations are stored on a fixed grid and interpolated to tag
# times. 1 ms spacing keeps within-cell Brownian wander below ~0.1 ps for
# amplitudes up to 1e-10.
NOISE_GRID_STEP_S = 1.0e-3
_NOISE_BLOCK = 1 << 16

MAX_FRACTIONAL_DRIFT = 1.0e-4


@dataclass(frozen=True)
class ClockParams:
    """Per-site clock parameters.

    delta0_ps: initial absolute offset of this clock's reading, in ps.
    fractional_drift: dimensionless rate (e.g. 4.5e-10 reads 450 ps fast
        per second of true time).
    drift_rate_of_change: linear aging in 1/s (default 0).
    white_fm_amplitude: Allan deviation of the clock at tau = 1 s;
        0 disables noise.
    seed: noise realization seed; equal seeds share a realization.
    """

    delta0_ps: int = 0
    fractional_drift: float = 0.0
    drift_rate_of_change: float = 0.0
    white_fm_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if abs(self.fractional_drift) >= MAX_FRACTIONAL_DRIFT:
            raise ConfigError("fractional_drift beyond sanity bound 1e-4")
        if self.white_fm_amplitude < 0:
            raise ConfigError("white_fm_amplitude must be >= 0")


@lru_cache(maxsize=16)
def _noise_block(seed: int, block_index: int) -> np.ndarray:
    """One block of unit-variance increments, deterministic per (seed, block)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(block_index,)))
    return rng.standard_normal(_NOISE_BLOCK)


def _noise_phase_seconds(clk: ClockParams, t_s: np.ndarray) -> np.ndarray:
    """Random-walk phase (seconds) of the clock's white-FM noise at times t_s.

    The realization is a Brownian path with diffusion amplitude^2 per second,
    built from fixed seed-addressed blocks so any evaluation window sees the
    same path.
    """
    if clk.white_fm_amplitude == 0.0 or t_s.size == 0:
        return np.zeros_like(t_s, dtype=np.float64)
    t_s = np.maximum(t_s, 0.0)  # path pinned at x(0)=0 for t <= 0
    t_max = float(t_s.max())
    n_steps = int(np.ceil(t_max / NOISE_GRID_STEP_S)) + 2
    n_blocks = (n_steps + _NOISE_BLOCK - 1) // _NOISE_BLOCK
    increments = np.concatenate([_noise_block(clk.seed, b) for b in range(n_blocks)])[:n_steps]
    sigma_step = clk.white_fm_amplitude * np.sqrt(NOISE_GRID_STEP_S)
    path = np.concatenate(([0.0], np.cumsum(increments) * sigma_step))
    grid = np.arange(path.size) * NOISE_GRID_STEP_S
    return np.interp(t_s, grid, path)


def phase_offset_ps(clk: ClockParams, t_ps, include_noise: bool = True) -> np.ndarray:
    """Clock reading minus true time, in ps (float), at true times t_ps."""
    t = np.atleast_1d(np.asarray(t_ps, dtype=np.int64))
    t_s = t / PS_PER_SECOND
    out = np.full(t.shape, float(clk.delta0_ps))
    out += clk.fractional_drift * t.astype(np.float64)
    if clk.drift_rate_of_change != 0.0:
        out += 0.5 * clk.drift_rate_of_change * t_s * t.astype(np.float64)
    if include_noise and clk.white_fm_amplitude != 0.0:
        out += _noise_phase_seconds(clk, t_s) * PS_PER_SECOND
    return out


def to_local_frame(stream, clk: ClockParams):
    """Transform true-time tags into the clock's local reading.

    Output is re-sorted (noise can perturb order) and deduplicated at ps
    resolution. Returns a TagStream when given one, else an int64 array.
    """
    tags = as_tag_array(stream)
    if tags.size == 0:
        shifted = tags
    else:
        offset = phase_offset_ps(clk, tags) - float(clk.delta0_ps)
        shifted = tags + clk.delta0_ps + round_ps(offset)
        if shifted.size > 1 and not np.all(np.diff(shifted) > 0):
            shifted = np.unique(shifted)
    if isinstance(stream, TagStream):
        return TagStream(stream.channel, shifted)
    return shifted


def from_local_frame(stream, clk: ClockParams):
    """Invert to_local_frame (fixed point; exact to <= 1 ps when noise-free)."""
    local = as_tag_array(stream)
    if local.size == 0:
        recovered = local
    else:
        t = local.copy()
        for _ in range(3):
            t = local - round_ps(phase_offset_ps(clk, t))
        recovered = np.unique(t)
    if isinstance(stream, TagStream):
        return TagStream(stream.channel, recovered)
    return recovered


def relative_offset_truth(clk_a: ClockParams, clk_b: ClockParams, t_ps) -> int | np.ndarray:
    """Exact instantaneous reading difference clock A minus clock B, in ps.

    Ground-truth oracle for scoring measured offsets; note the measurement
    pipeline reports Bob-minus-Alice (see sync.SyncRecord), so tests score
    records against ``relative_offset_truth(clock_b, clock_a, t)``.
    """
    diff = phase_offset_ps(clk_a, t_ps) - phase_offset_ps(clk_b, t_ps)
    out = round_ps(diff)
    if np.ndim(t_ps) == 0:
        return int(out[0])
    return out

"""Scenario assembly: sources, channel, motion, detectors, and clocks to tag streams.

For each direction, pair emissions split into a local detection and a
transmitted photon. The transmitted photon picks up the (possibly
time-varying, direction-dependent) propagation delay, merges with sky
background and dark counts at the receive detector, passes the dead-time
filter, and is finally timestamped in the receiving site's clock frame. The
local detection merges with its detector's dark counts and is timestamped in
the emitting site's frame.

Alongside the streams a truth record is produced (injected offset history,
drifts, and the surviving true pairs); it exists for test oracles only and
is never consumed by the measurement pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clocks import ClockParams, phase_offset_ps, to_local_frame
from .core import (
    PS_PER_SECOND,
    Channel,
    PhysicalConstants,
    StreamSet,
    TagStream,
    round_ps,
)
from .orbit import LinkDirection, apply_motion, elevation_rad
from .scenario import Scenario
from .source import SourceConfig, dead_time_filter, generate_background, generate_pairs

TRUTH_SAMPLE_STEP_S = 0.1


@dataclass(frozen=True)
class DirectionTruth:
    """Surviving true pairs of one direction, in local clock frames."""

    local_tags: np.ndarray
    receive_tags: np.ndarray


@dataclass(frozen=True)
class SimulationTruth:
    """Ground truth retained for oracles; never an input to sync or track."""

    t_grid_ps: np.ndarray
    delta_bob_minus_alice_ps: np.ndarray
    clock_alice: ClockParams
    clock_bob: ClockParams
    pairs_down: DirectionTruth
    pairs_up: DirectionTruth


@dataclass(frozen=True)
class SimulationOutput:
    streams: StreamSet
    truth: SimulationTruth
    scenario: Scenario


def _merge_with_indices(pair_tags, pair_indices, *noise_arrays):
    """Merge pair tags with noise streams, keeping each tag's emission index (-1 noise)."""
    tags = [np.asarray(pair_tags, dtype=np.int64)]
    idx = [np.asarray(pair_indices, dtype=np.int64)]
    for noise in noise_arrays:
        arr = np.asarray(noise, dtype=np.int64)
        tags.append(arr)
        idx.append(np.full(arr.size, -1, dtype=np.int64))
    tags = np.concatenate(tags)
    idx = np.concatenate(idx)
    order = np.argsort(tags, kind="stable")
    return tags[order], idx[order]


def _detector_stream(tags, indices, dead_time_s):
    keep = dead_time_filter(tags, int(dead_time_s * PS_PER_SECOND))
    return tags[keep], indices[keep]


def _simulate_direction(
    cfg: SourceConfig,
    scn: Scenario,
    direction: LinkDirection,
    emitter_clock: ClockParams,
    receiver_clock: ClockParams,
    local_channel: Channel,
    receive_channel: Channel,
):
    duration = scn.duration_s
    record = generate_pairs(cfg, duration, local_channel)

    local_dark = generate_background(cfg.dark_rate, duration, cfg.rng_seed * 10 + 1, local_channel)
    local_tags, local_idx = _merge_with_indices(
        record.local_detections.tags, record.local_indices, local_dark.tags
    )
    local_tags, local_idx = _detector_stream(local_tags, local_idx, cfg.detector_dead_time)

    # transmitted photons: propagate, then optional visibility mask
    trans_tags = record.transmitted_tags
    trans_idx = record.transmitted_indices
    if scn.is_orbital:
        epoch = scn.pass_epoch_ps
        arrivals = apply_motion(trans_tags - epoch, scn.orbit, direction) + epoch
        if scn.min_elevation_mask_rad is not None:
            elev = elevation_rad(scn.orbit, (trans_tags - epoch) / PS_PER_SECOND)
            visible = elev >= scn.min_elevation_mask_rad
            arrivals, trans_idx = arrivals[visible], trans_idx[visible]
    else:
        # constant symmetric delay for the stationary testbed
        delay_ps = round_ps(scn.range_m / PhysicalConstants().c * PS_PER_SECOND)
        arrivals = trans_tags + delay_ps

    background = generate_background(
        cfg.background_rate, duration, cfg.rng_seed * 10 + 2, receive_channel
    )
    receive_dark = generate_background(
        cfg.dark_rate, duration, cfg.rng_seed * 10 + 3, receive_channel
    )
    recv_tags, recv_idx = _merge_with_indices(
        arrivals, trans_idx, background.tags, receive_dark.tags
    )
    recv_tags, recv_idx = _detector_stream(recv_tags, recv_idx, cfg.detector_dead_time)

    # clock transforms; truth pair tags go through the same deterministic map
    # (dead-time filtering already guarantees sorted, strictly increasing tags)
    local_stream = to_local_frame(TagStream(local_channel, local_tags), emitter_clock)
    recv_stream = to_local_frame(TagStream(receive_channel, recv_tags), receiver_clock)

    truth = _pair_truth(
        local_tags, local_idx, emitter_clock, recv_tags, recv_idx, receiver_clock
    )
    return local_stream, recv_stream, truth


def _pair_truth(local_tags, local_idx, emitter_clock, recv_tags, recv_idx, receiver_clock):
    """Emission indices surviving both arms, as matched local-frame tag pairs."""
    lm = local_idx >= 0
    rm = recv_idx >= 0
    le, lt = local_idx[lm], local_tags[lm]
    re, rt = recv_idx[rm], recv_tags[rm]
    lo = np.argsort(le, kind="stable")
    ro = np.argsort(re, kind="stable")
    le, lt = le[lo], lt[lo]
    re, rt = re[ro], rt[ro]
    common = np.intersect1d(le, re, assume_unique=True)
    lpos = np.searchsorted(le, common)
    rpos = np.searchsorted(re, common)
    return DirectionTruth(
        local_tags=_frame_map(lt[lpos], emitter_clock),
        receive_tags=_frame_map(rt[rpos], receiver_clock),
    )


def _frame_map(tags: np.ndarray, clk: ClockParams) -> np.ndarray:
    """Deterministic per-tag clock transform (no sort/dedupe), for truth bookkeeping."""
    if tags.size == 0:
        return tags.astype(np.int64)
    offset = phase_offset_ps(clk, tags) - float(clk.delta0_ps)
    return tags + clk.delta0_ps + round_ps(offset)


def run_simulation(scn: Scenario) -> SimulationOutput:
    """Produce the four detector streams and the truth sidecar for a scenario."""
    alice_local, bob_receive, truth_down = _simulate_direction(
        scn.source_alpha,
        scn,
        LinkDirection.DOWNLINK,
        emitter_clock=scn.clock_alice,
        receiver_clock=scn.clock_bob,
        local_channel=Channel.ALICE_LOCAL,
        receive_channel=Channel.BOB_RECEIVE,
    )
    bob_local, alice_receive, truth_up = _simulate_direction(
        scn.source_beta,
        scn,
        LinkDirection.UPLINK,
        emitter_clock=scn.clock_bob,
        receiver_clock=scn.clock_alice,
        local_channel=Channel.BOB_LOCAL,
        receive_channel=Channel.ALICE_RECEIVE,
    )

    t_grid_ps = (np.arange(0.0, scn.duration_s, TRUTH_SAMPLE_STEP_S) * PS_PER_SECOND).astype(np.int64)
    delta_truth = phase_offset_ps(scn.clock_bob, t_grid_ps) - phase_offset_ps(
        scn.clock_alice, t_grid_ps
    )
    truth = SimulationTruth(
        t_grid_ps=t_grid_ps,
        delta_bob_minus_alice_ps=round_ps(delta_truth),
        clock_alice=scn.clock_alice,
        clock_bob=scn.clock_bob,
        pairs_down=truth_down,
        pairs_up=truth_up,
    )
    streams = StreamSet(
        alice_local=alice_local,
        alice_receive=alice_receive,
        bob_local=bob_local,
        bob_receive=bob_receive,
    )
    return SimulationOutput(streams=streams, truth=truth, scenario=scn)

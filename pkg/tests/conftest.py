"""Shared fixtures: the expensive simulation runs used across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from qttsim import (
    SyncMode,
    bundled_scenario_path,
    load_scenario,
    run_simulation,
    run_stationary_sync,
    run_tracked_sync,
)


@pytest.fixture(scope="session")
def night_scenario():
    return load_scenario(bundled_scenario_path("stationary_night"))


@pytest.fixture(scope="session")
def night_run(night_scenario):
    """Full desk-scale stationary night run: simulation plus both clock modes."""
    sim = run_simulation(night_scenario)
    sync = run_stationary_sync(
        sim.streams, night_scenario.acquisition, SyncMode.SYNCHRONIZED,
        duration_s=night_scenario.duration_s,
    )
    drift = run_stationary_sync(
        sim.streams, night_scenario.acquisition, SyncMode.DRIFTING,
        duration_s=night_scenario.duration_s,
    )
    return {"scenario": night_scenario, "sim": sim, "sync": sync, "drift": drift}


@pytest.fixture(scope="session")
def lownoise_pass_run():
    scn = load_scenario(bundled_scenario_path("leo_pass_lownoise"))
    sim = run_simulation(scn)
    tracked = run_tracked_sync(
        sim.streams, scn.orbit, scn.pass_epoch_ps, scn.acquisition, scn.tracking,
        mode=SyncMode.SYNCHRONIZED, duration_s=scn.duration_s,
    )
    return {"scenario": scn, "sim": sim, "tracked": tracked}


@pytest.fixture(scope="session")
def noisy_pass_run():
    scn = load_scenario(bundled_scenario_path("leo_pass"))
    sim = run_simulation(scn)
    tracked = run_tracked_sync(
        sim.streams, scn.orbit, scn.pass_epoch_ps, scn.acquisition, scn.tracking,
        mode=SyncMode.SYNCHRONIZED, duration_s=scn.duration_s,
    )
    return {"scenario": scn, "sim": sim, "tracked": tracked}


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)

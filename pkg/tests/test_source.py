import numpy as np
import pytest
from scipy import stats

from qttsim import Channel, ConfigError, SourceConfig, generate_background, generate_pairs
from qttsim.source import dead_time_filter

PS = 10**12


def cfg(**kw):
    base = dict(
        pair_rate=1e5,
        local_efficiency=1.0,
        channel_efficiency=1.0,
        pair_jitter_sigma=0.0,
        detector_dead_time=0.0,
        rng_seed=5,
    )
    base.update(kw)
    return SourceConfig(**base)


def test_null_process():
    rec = generate_pairs(cfg(pair_rate=0.0), 1.0)
    assert rec.emission_times.size == 0
    assert len(rec.local_detections) == 0
    assert rec.transmitted_tags.size == 0


def test_poisson_count_band():
    # mean 1e6, 4-sigma band per the Poisson mean/variance oracle
    rec = generate_pairs(cfg(pair_rate=1e6), 1.0)
    n = rec.emission_times.size
    assert abs(n - 1e6) < 4e3
    assert len(rec.local_detections) == n  # unit efficiencies, no dead time
    assert np.array_equal(rec.transmitted_tags, rec.emission_times)


def test_binomial_thinning_band():
    rec = generate_pairs(cfg(pair_rate=1e5, channel_efficiency=0.01), 10.0)
    assert abs(rec.transmitted_tags.size - 1e4) < 4 * np.sqrt(1e4)


def test_thinning_chi_square_over_20_runs():
    # transmitted counts across seeds behave as binomial thinning at p=0.02
    duration, rate, p = 2.0, 5e4, 0.02
    counts = []
    for seed in range(20):
        rec = generate_pairs(cfg(pair_rate=rate, channel_efficiency=p, rng_seed=seed), duration)
        counts.append((rec.emission_times.size, rec.transmitted_tags.size))
    chi2 = sum((t - n * p) ** 2 / (n * p * (1 - p)) for n, t in counts)
    assert stats.chi2.sf(chi2, df=20) > 0.001


def test_exact_times_without_jitter_or_loss():
    rec = generate_pairs(cfg(), 1.0)
    assert np.array_equal(rec.transmitted_tags, rec.emission_times)
    assert np.array_equal(rec.local_detections.tags, np.unique(rec.emission_times))


def test_determinism():
    a = generate_pairs(cfg(pair_jitter_sigma=300e-12, channel_efficiency=0.3), 1.0)
    b = generate_pairs(cfg(pair_jitter_sigma=300e-12, channel_efficiency=0.3), 1.0)
    assert np.array_equal(a.local_detections.tags, b.local_detections.tags)
    assert np.array_equal(a.transmitted_tags, b.transmitted_tags)
    assert np.array_equal(a.transmitted_indices, b.transmitted_indices)


def test_dead_time_enforced():
    c = cfg(pair_rate=1e6, detector_dead_time=25e-9, pair_jitter_sigma=200e-12)
    rec = generate_pairs(c, 1.0)
    gaps = np.diff(rec.local_detections.tags)
    assert gaps.min() >= 25_000  # 25 ns in ps


def test_dead_time_filter_greedy():
    tags = np.array([0, 10, 20, 30, 100], dtype=np.int64)
    keep = dead_time_filter(tags, 15)
    # greedy: keep 0, drop 10, keep 20 (>=15 after 0), drop 30, keep 100
    assert tags[keep].tolist() == [0, 20, 100]


def test_dead_time_filter_drops_duplicates():
    tags = np.array([5, 5, 6], dtype=np.int64)
    keep = dead_time_filter(tags, 0)
    assert tags[keep].tolist() == [5, 6]


def test_background_empty():
    assert len(generate_background(0.0, 1.0, seed=1)) == 0


def test_background_count_band():
    stream = generate_background(1e6, 1.0, seed=2)
    assert abs(len(stream) - 1e6) < 4e3
    assert stream.channel is Channel.BOB_RECEIVE


def test_merged_streams_strictly_increasing():
    bg = generate_background(1e5, 1.0, seed=3)
    rec = generate_pairs(cfg(pair_rate=1e5, pair_jitter_sigma=100e-12), 1.0)
    merged = np.unique(np.concatenate([bg.tags, rec.transmitted_tags]))
    assert np.all(np.diff(merged) > 0)


def test_scintillation_mean_preserving():
    # long runs so the per-second log-normal factors average out
    duration = 200.0
    n_base = sum(
        generate_pairs(cfg(pair_rate=2e4, channel_efficiency=0.3, rng_seed=s), duration).transmitted_tags.size
        for s in range(4)
    )
    n_mod = sum(
        generate_pairs(
            cfg(pair_rate=2e4, channel_efficiency=0.3, scintillation_sigma=0.5, rng_seed=s),
            duration,
        ).transmitted_tags.size
        for s in range(4)
    )
    assert n_mod == pytest.approx(n_base, rel=0.06)


def test_validation_errors():
    with pytest.raises(ConfigError):
        cfg(local_efficiency=1.5)
    with pytest.raises(ConfigError):
        cfg(pair_rate=-1)
    with pytest.raises(ConfigError):
        cfg(pair_jitter_sigma=-1e-12)
    with pytest.raises(ConfigError):
        generate_pairs(cfg(), 0.0)

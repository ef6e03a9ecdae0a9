"""Scenario files: the complete description of one simulated experiment run.

A scenario is an INI-style text file with a [scenario] section plus nested
sections for the two sources, the two site clocks, the acquisition and
correlation settings, and (for emulated passes) the orbit and tracking
configuration. Unknown sections or keys are rejected (fail closed); every
value is validated against the owning type's invariants.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .clocks import ClockParams
from .core import ConfigError, PhysicalConstants
from .correlation import CorrelationConfig
from .orbit import OrbitParams
from .source import SourceConfig
from .sync import AcquisitionConfig
from .tracking import CoarseScanConfig

REQUIRED_SECTIONS = ("scenario", "source_alpha", "source_beta", "clock_alice", "clock_bob")
OPTIONAL_SECTIONS = ("acquisition", "correlation", "orbit", "tracking")

_SCENARIO_KEYS = {"label", "duration_s", "seed", "range_m"}
_SOURCE_KEYS = {
    "pair_rate",
    "local_efficiency",
    "channel_efficiency",
    "pair_jitter_sigma_s",
    "detector_dead_time_s",
    "background_rate",
    "dark_rate",
    "scintillation_sigma",
}
_CLOCK_KEYS = {"delta0_ps", "fractional_drift", "drift_rate_of_change", "white_fm_amplitude"}
_ACQ_KEYS = {"t_a_s", "max_missed"}
_CORR_KEYS = {
    "coarse_bin_ps",
    "search_halfwidth_ps",
    "coincidence_window_ps",
    "fine_bin_ps",
    "min_peak_significance",
}
_ORBIT_KEYS = {
    "altitude_m",
    "inclination_deg",
    "qgs_latitude_deg",
    "qgs_longitude_deg",
    "culmination_s",
    "earth_rotation",
    "min_elevation_mask_deg",
}
_TRACKING_KEYS = {
    "a_min_m",
    "a_max_m",
    "a_step_m",
    "theta_min_deg",
    "theta_max_deg",
    "theta_step_deg",
    "scan_seconds",
}


@dataclass(frozen=True)
class Scenario:
    """Validated scenario: either a stationary testbed or an emulated pass."""

    label: str
    duration_s: float
    seed: int
    source_alpha: SourceConfig
    source_beta: SourceConfig
    clock_alice: ClockParams
    clock_bob: ClockParams
    acquisition: AcquisitionConfig
    range_m: float | None = None
    orbit: OrbitParams | None = None
    culmination_s: float | None = None
    min_elevation_mask_rad: float | None = None
    tracking: CoarseScanConfig | None = None

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be > 0")
        if (self.range_m is None) == (self.orbit is None):
            raise ConfigError("scenario needs exactly one of range_m (stationary) or [orbit]")
        if self.range_m is not None and self.range_m <= 0:
            raise ConfigError("range_m must be > 0")

    @property
    def is_orbital(self) -> bool:
        return self.orbit is not None

    @property
    def pass_epoch_ps(self) -> int:
        if not self.is_orbital:
            raise ConfigError("stationary scenario has no pass epoch")
        culmination = self.duration_s / 2.0 if self.culmination_s is None else self.culmination_s
        return int(round(culmination * 1e12))


def _check_keys(section: str, present, allowed) -> None:
    unknown = set(present) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _get(parser, section, key, conv, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"missing required key '{key}' in [{section}]")
        return default
    raw = parser.get(section, key)
    try:
        if conv is bool:
            return parser.getboolean(section, key)
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for '{key}' in [{section}]: {raw!r}") from exc


def _parse_source(parser, section: str, seed: int) -> SourceConfig:
    _check_keys(section, parser.options(section), _SOURCE_KEYS)
    return SourceConfig(
        pair_rate=_get(parser, section, "pair_rate", float, required=True),
        local_efficiency=_get(parser, section, "local_efficiency", float, required=True),
        channel_efficiency=_get(parser, section, "channel_efficiency", float, required=True),
        pair_jitter_sigma=_get(parser, section, "pair_jitter_sigma_s", float, required=True),
        detector_dead_time=_get(parser, section, "detector_dead_time_s", float, default=25e-9),
        background_rate=_get(parser, section, "background_rate", float, default=0.0),
        dark_rate=_get(parser, section, "dark_rate", float, default=0.0),
        scintillation_sigma=_get(parser, section, "scintillation_sigma", float, default=0.0),
        rng_seed=seed,
    )


def _parse_clock(parser, section: str, seed: int) -> ClockParams:
    _check_keys(section, parser.options(section), _CLOCK_KEYS)
    return ClockParams(
        delta0_ps=_get(parser, section, "delta0_ps", lambda v: int(float(v)), default=0),
        fractional_drift=_get(parser, section, "fractional_drift", float, default=0.0),
        drift_rate_of_change=_get(parser, section, "drift_rate_of_change", float, default=0.0),
        white_fm_amplitude=_get(parser, section, "white_fm_amplitude", float, default=0.0),
        seed=seed,
    )


def load_scenario(path, seed_override: int | None = None) -> Scenario:
    """Parse and validate a scenario file.

    ``seed_override`` replaces the file's root seed (the CLI --seed flag);
    per-component generator seeds are derived from the root as
    seed*1000 + fixed offsets.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"scenario parse error: {exc}") from exc

    for section in REQUIRED_SECTIONS:
        if not parser.has_section(section):
            raise ConfigError(f"missing required section [{section}]")
    for section in parser.sections():
        if section not in REQUIRED_SECTIONS + OPTIONAL_SECTIONS:
            raise ConfigError(f"unknown section [{section}]")

    _check_keys("scenario", parser.options("scenario"), _SCENARIO_KEYS)
    label = _get(parser, "scenario", "label", str, default=path.stem)
    duration_s = _get(parser, "scenario", "duration_s", float, required=True)
    seed = _get(parser, "scenario", "seed", lambda v: int(float(v)), default=0)
    if seed_override is not None:
        seed = int(seed_override)
    range_m = _get(parser, "scenario", "range_m", float, default=None)

    source_alpha = _parse_source(parser, "source_alpha", seed * 1000 + 1)
    source_beta = _parse_source(parser, "source_beta", seed * 1000 + 2)
    clock_alice = _parse_clock(parser, "clock_alice", seed * 1000 + 3)
    clock_bob = _parse_clock(parser, "clock_bob", seed * 1000 + 4)

    correlation = CorrelationConfig()
    if parser.has_section("correlation"):
        _check_keys("correlation", parser.options("correlation"), _CORR_KEYS)
        correlation = CorrelationConfig(
            coarse_bin=_get(parser, "correlation", "coarse_bin_ps", lambda v: int(float(v)), default=500),
            search_halfwidth=_get(
                parser, "correlation", "search_halfwidth_ps", lambda v: int(float(v)), default=10_000_000
            ),
            coincidence_window=_get(
                parser, "correlation", "coincidence_window_ps", lambda v: int(float(v)), default=1000
            ),
            fine_bin=_get(parser, "correlation", "fine_bin_ps", lambda v: int(float(v)), default=1),
            min_peak_significance=_get(
                parser, "correlation", "min_peak_significance", float, default=6.0
            ),
        )

    acquisition = AcquisitionConfig(correlation=correlation)
    if parser.has_section("acquisition"):
        _check_keys("acquisition", parser.options("acquisition"), _ACQ_KEYS)
        acquisition = AcquisitionConfig(
            t_a_s=_get(parser, "acquisition", "t_a_s", float, default=1.0),
            correlation=correlation,
            max_missed=_get(parser, "acquisition", "max_missed", lambda v: int(float(v)), default=5),
        )

    orbit = None
    culmination_s = None
    mask_rad = None
    if parser.has_section("orbit"):
        _check_keys("orbit", parser.options("orbit"), _ORBIT_KEYS)
        orbit = OrbitParams.overhead_pass(
            altitude_m=_get(parser, "orbit", "altitude_m", float, required=True),
            inclination_rad=math.radians(_get(parser, "orbit", "inclination_deg", float, required=True)),
            qgs_latitude_rad=math.radians(_get(parser, "orbit", "qgs_latitude_deg", float, required=True)),
            qgs_longitude_rad=math.radians(
                _get(parser, "orbit", "qgs_longitude_deg", float, required=True)
            ),
            constants=PhysicalConstants(),
            include_earth_rotation=_get(parser, "orbit", "earth_rotation", bool, default=True),
        )
        culmination_s = _get(parser, "orbit", "culmination_s", float, default=None)
        mask_deg = _get(parser, "orbit", "min_elevation_mask_deg", float, default=None)
        mask_rad = math.radians(mask_deg) if mask_deg is not None else None

    tracking = None
    if parser.has_section("tracking"):
        _check_keys("tracking", parser.options("tracking"), _TRACKING_KEYS)
        tracking = CoarseScanConfig(
            a_min_m=_get(parser, "tracking", "a_min_m", float, default=650_000.0),
            a_max_m=_get(parser, "tracking", "a_max_m", float, default=750_000.0),
            a_step_m=_get(parser, "tracking", "a_step_m", float, default=133.0),
            theta_min_rad=math.radians(_get(parser, "tracking", "theta_min_deg", float, default=96.0)),
            theta_max_rad=math.radians(_get(parser, "tracking", "theta_max_deg", float, default=100.0)),
            theta_step_rad=math.radians(_get(parser, "tracking", "theta_step_deg", float, default=0.1)),
            scan_seconds=_get(parser, "tracking", "scan_seconds", float, default=1.0),
            correlation=correlation,
        )

    return Scenario(
        label=label,
        duration_s=duration_s,
        seed=seed,
        source_alpha=source_alpha,
        source_beta=source_beta,
        clock_alice=clock_alice,
        clock_bob=clock_bob,
        acquisition=acquisition,
        range_m=range_m,
        orbit=orbit,
        culmination_s=culmination_s,
        min_elevation_mask_rad=mask_rad,
        tracking=tracking,
    )


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    if not name.endswith(".scenario"):
        name = name + ".scenario"
    ref = resources.files("qttsim").joinpath("scenarios", name)
    with resources.as_file(ref) as concrete:
        path = Path(concrete)
    if not path.exists():
        raise ConfigError(f"no bundled scenario named {name!r}")
    return path

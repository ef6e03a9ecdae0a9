"""Circular sun-synchronous orbit emulation and link propagation delays.

The satellite flies a circular orbit of altitude ``a`` and inclination
``theta_i``; its sub-satellite point comes from Napier's rules for the
spherical right triangle spanned by the ascending node, the ground track, and
the meridian, plus a longitude drift from Earth rotation and orbit-plane
precession. The ground-station geometry then gives the geocentric angle, the
law-of-cosines slant range, the elevation, and the one-way light time used to
shift received time tags.

Orbit time t = 0 is the epoch at which the satellite sits at its configured
initial position; scenarios place that position over the ground station so
culmination happens at t = 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ConfigError, PhysicalConstants, PS_PER_SECOND, QttError, as_tag_array, round_ps


class LinkDirection(enum.Enum):
    DOWNLINK = "downlink"  # satellite to ground (direction alpha)
    UPLINK = "uplink"      # ground to satellite (direction beta)


@dataclass(frozen=True)
class OrbitParams:
    """Circular-orbit scenario parameters (SI units, radians)."""

    altitude_m: float
    inclination_rad: float
    qgs_latitude_rad: float
    qgs_longitude_rad: float
    initial_sat_latitude_rad: float
    initial_sat_longitude_rad: float
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    include_earth_rotation: bool = True

    def __post_init__(self):
        if self.altitude_m <= 0:
            raise ConfigError("altitude must be > 0")
        if not 0.0 <= self.inclination_rad <= math.pi:
            raise ConfigError("inclination must be in [0, pi]")
        sin_inc = math.sin(self.inclination_rad)
        if abs(math.sin(self.initial_sat_latitude_rad)) > sin_inc + 1e-15:
            raise ConfigError("initial latitude unreachable at this inclination")

    @property
    def orbital_radius_m(self) -> float:
        return self.constants.earth_radius + self.altitude_m

    @property
    def mean_motion_rad_s(self) -> float:
        r = self.orbital_radius_m
        return math.sqrt(self.constants.gm_earth / r**3)

    @property
    def orbital_speed_m_s(self) -> float:
        return math.sqrt(self.constants.gm_earth / self.orbital_radius_m)

    @property
    def period_s(self) -> float:
        return 2.0 * math.pi / self.mean_motion_rad_s

    def with_elements(self, altitude_m: float, inclination_rad: float) -> "OrbitParams":
        """Same scenario geometry with trial orbital elements (used by fits)."""
        return replace(self, altitude_m=altitude_m, inclination_rad=inclination_rad)

    @classmethod
    def overhead_pass(
        cls,
        altitude_m: float,
        inclination_rad: float,
        qgs_latitude_rad: float,
        qgs_longitude_rad: float,
        constants: PhysicalConstants | None = None,
        include_earth_rotation: bool = True,
    ) -> "OrbitParams":
        """Orbit whose satellite sits directly over the ground station at t=0."""
        return cls(
            altitude_m=altitude_m,
            inclination_rad=inclination_rad,
            qgs_latitude_rad=qgs_latitude_rad,
            qgs_longitude_rad=qgs_longitude_rad,
            initial_sat_latitude_rad=qgs_latitude_rad,
            initial_sat_longitude_rad=qgs_longitude_rad,
            constants=constants or PhysicalConstants(),
            include_earth_rotation=include_earth_rotation,
        )


@dataclass(frozen=True)
class GroundTrackSample:
    """Geometry of the link at one instant of orbit time."""

    t_s: float
    sat_latitude_rad: float
    sat_longitude_rad: float
    central_angle_rad: float
    slant_range_m: float
    elevation_rad: float
    prop_delay_s: float


def _wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(-np.asarray(angle) + np.pi, 2.0 * np.pi)
    return np.pi - wrapped


def sub_satellite_point(orbit: OrbitParams, t_s):
    """Sub-satellite latitude and longitude (radians) at orbit time t_s.

    Latitude: sin(lat) = sin(w0*t + lat_phase) * sin(inc), with lat_phase
    anchoring the configured initial latitude at t = 0. Longitude uses the
    quadrant-correct two-argument arctangent of the same orbit angle, an
    anchoring shift for the initial longitude, and (optionally) the combined
    Earth-rotation / plane-precession drift.
    """
    t = np.asarray(t_s, dtype=np.float64)
    inc = orbit.inclination_rad
    sin_inc = math.sin(inc)
    sin_lat0 = math.sin(orbit.initial_sat_latitude_rad)
    if abs(sin_lat0) > abs(sin_inc):
        raise ConfigError("initial latitude outside arcsine domain for inclination")
    lat_phase = math.asin(sin_lat0 / sin_inc) if sin_inc != 0.0 else 0.0

    angle = orbit.mean_motion_rad_s * t + lat_phase
    lat = np.arcsin(np.clip(np.sin(angle) * sin_inc, -1.0, 1.0))

    lon_orbit = np.arctan2(np.sin(angle) * math.cos(inc), np.cos(angle))
    lon_anchor = math.atan2(math.sin(lat_phase) * math.cos(inc), math.cos(lat_phase))
    lon_shift = orbit.initial_sat_longitude_rad - lon_anchor
    lon = lon_orbit + lon_shift
    if orbit.include_earth_rotation:
        c = orbit.constants
        lon = lon + (c.sun_sync_precession_rate - c.earth_rotation_rate) * t
    return lat, _wrap_angle(lon)


def central_angle_rad(orbit: OrbitParams, t_s):
    """Geocentric angle between ground station and sub-satellite point.

    Spherical law of cosines with colatitudes pi/2 - lat and the longitude
    difference as the included angle.
    """
    lat, lon = sub_satellite_point(orbit, t_s)
    cos_beta = np.sin(lat) * math.sin(orbit.qgs_latitude_rad) + np.cos(lat) * math.cos(
        orbit.qgs_latitude_rad
    ) * np.cos(orbit.qgs_longitude_rad - lon)
    return np.arccos(np.clip(cos_beta, -1.0, 1.0))


def slant_range_m(orbit: OrbitParams, t_s):
    """Ground-station-to-satellite distance d = sqrt(r^2 + R^2 - 2 r R cos(beta))."""
    beta = central_angle_rad(orbit, t_s)
    r = orbit.orbital_radius_m
    R = orbit.constants.earth_radius
    return np.sqrt(r * r + R * R - 2.0 * r * R * np.cos(beta))


def elevation_rad(orbit: OrbitParams, t_s):
    """Elevation of the satellite above the ground-station horizon.

    Solves d * sin(elev) = r * cos(beta) - R.
    """
    beta = central_angle_rad(orbit, t_s)
    r = orbit.orbital_radius_m
    R = orbit.constants.earth_radius
    d = np.sqrt(r * r + R * R - 2.0 * r * R * np.cos(beta))
    return np.arcsin(np.clip((r * np.cos(beta) - R) / d, -1.0, 1.0))


def slant_range(orbit: OrbitParams, t_s: float) -> GroundTrackSample:
    """Full link geometry sample at one orbit time."""
    lat, lon = sub_satellite_point(orbit, t_s)
    beta = central_angle_rad(orbit, t_s)
    r = orbit.orbital_radius_m
    R = orbit.constants.earth_radius
    d = math.sqrt(r * r + R * R - 2.0 * r * R * math.cos(float(beta)))
    elev = math.asin(min(1.0, max(-1.0, (r * math.cos(float(beta)) - R) / d)))
    return GroundTrackSample(
        t_s=float(t_s),
        sat_latitude_rad=float(lat),
        sat_longitude_rad=float(lon),
        central_angle_rad=float(beta),
        slant_range_m=d,
        elevation_rad=elev,
        prop_delay_s=d / orbit.constants.c,
    )


def point_ahead_angle_rad(orbit: OrbitParams, t_s):
    """Angular lead (2 v / c) sin(elev) an uplink beam needs to intercept the satellite."""
    elev = elevation_rad(orbit, t_s)
    return 2.0 * orbit.orbital_speed_m_s / orbit.constants.c * np.sin(elev)


def prop_delay_s(orbit: OrbitParams, t_s, direction: LinkDirection):
    """One-way light time for a photon departing at orbit time t_s.

    Downlink: the satellite emits at t_s, so the delay is d(t_s)/c. Uplink:
    the photon must meet the satellite at its advanced position, so the range
    is evaluated one light-time ahead (single fixed-point step, the full
    first-order velocity aberration behind the point-ahead angle).
    """
    t = np.asarray(t_s, dtype=np.float64)
    c = orbit.constants.c
    delay = slant_range_m(orbit, t) / c
    if direction is LinkDirection.UPLINK:
        delay = slant_range_m(orbit, t + delay) / c
    return delay


# Interpolation grid for bulk delay evaluation; the range acceleration of a
# LEO pass (< 100 m/s^2) keeps the quadratic error under 1 ps at this step.
_DELAY_GRID_STEP_S = 5.0e-3


def prop_delay_sampled_s(orbit: OrbitParams, t_s: np.ndarray, direction: LinkDirection) -> np.ndarray:
    """prop_delay_s evaluated via a fine time grid (fast for large tag arrays)."""
    t = np.asarray(t_s, dtype=np.float64)
    if t.size <= 64:
        return prop_delay_s(orbit, t, direction)
    lo = float(t.min()) - _DELAY_GRID_STEP_S
    hi = float(t.max()) + _DELAY_GRID_STEP_S
    n = int((hi - lo) / _DELAY_GRID_STEP_S) + 2
    if n >= t.size:
        return prop_delay_s(orbit, t, direction)
    grid = np.linspace(lo, hi, n)
    return np.interp(t, grid, prop_delay_s(orbit, grid, direction))


def apply_motion(tags, orbit: OrbitParams, direction: LinkDirection):
    """Shift source-frame tags (orbit-time ps) by the directional propagation delay.

    Output must remain strictly ordered; a violation would need a
    superluminal range rate and indicates bad orbit parameters.
    """
    arr = as_tag_array(tags)
    if arr.size == 0:
        return arr.copy()
    t_s = arr / PS_PER_SECOND
    delay_ps = prop_delay_s(orbit, t_s, direction) * PS_PER_SECOND
    shifted = arr + round_ps(delay_ps)
    if shifted.size > 1 and np.any(np.diff(shifted) < 0):
        raise QttError("propagation shift reordered tags; orbit parameters are unphysical")
    return shifted


def pass_window_s(orbit: OrbitParams, min_elevation_rad: float) -> tuple[float, float]:
    """Orbit-time interval around t=0 during which elevation >= min_elevation.

    Requires the satellite to be above min_elevation at t=0 (overhead-pass
    construction). Each edge is found by bisection.
    """
    if float(elevation_rad(orbit, 0.0)) < min_elevation_rad:
        raise ConfigError("satellite below requested elevation at epoch")
    quarter = orbit.period_s / 4.0

    def edge(sign: float) -> float:
        lo, hi = 0.0, quarter
        if float(elevation_rad(orbit, sign * hi)) >= min_elevation_rad:
            return sign * hi
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if float(elevation_rad(orbit, sign * mid)) >= min_elevation_rad:
                lo = mid
            else:
                hi = mid
        return sign * lo

    return edge(-1.0), edge(+1.0)

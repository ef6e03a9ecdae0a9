"""Shared domain types, units, and physical constants.

All timestamps in the toolkit are 64-bit signed integer picosecond counts.
Integer arithmetic keeps tag streams exact over hour-long scenarios; floats
appear only in derived physics (delays, phases) and are rounded back to
picoseconds at well-defined points.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

PS_PER_SECOND = 10**12

# Conversions are exact (round-trip safe) up to this magnitude; beyond it a
# float64 second value can no longer carry picosecond resolution.
EXACT_CONVERSION_SECONDS = 4000.0

# Arithmetic guard: +/- 1e6 s of picoseconds stays far inside int64.
MAX_ABS_SECONDS = 1.0e6


class QttError(Exception):
    """Base class for toolkit errors."""


class ConfigError(QttError):
    """Invalid configuration value or malformed scenario input."""


class TagFormatError(QttError):
    """Corrupt or unsupported tag file."""


class ScanFailedError(QttError):
    """Coarse orbit scan found no statistically significant cell."""


class SyncLostError(QttError):
    """Too many consecutive acquisitions without a correlation lock."""

    def __init__(self, acq_index: int, message: str | None = None):
        self.acq_index = acq_index
        super().__init__(message or f"synchronization lost at acquisition {acq_index}")


class FitError(QttError):
    """Orbit fit is underdetermined or numerically degenerate."""


class Channel(enum.IntEnum):
    """Detector channel identifier (wire-format ids 0..3)."""

    ALICE_LOCAL = 0
    ALICE_RECEIVE = 1
    BOB_LOCAL = 2
    BOB_RECEIVE = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Channel":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ConfigError(f"unknown channel label {label!r}") from None


ALL_CHANNELS = (
    Channel.ALICE_LOCAL,
    Channel.ALICE_RECEIVE,
    Channel.BOB_LOCAL,
    Channel.BOB_RECEIVE,
)


def picos_from_seconds(seconds):
    """Convert real seconds to integer picoseconds.

    Rounds to the nearest picosecond with ties away from zero; this is the
    single rounding rule used everywhere a real-valued model time becomes a
    tag. The integral part is converted exactly, so the result is accurate to
    the resolution carried by the float input itself (sub-ps below
    ``EXACT_CONVERSION_SECONDS``).

    Raises OverflowError outside +/- MAX_ABS_SECONDS.
    """
    arr = np.asarray(seconds, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(np.abs(arr) >= MAX_ABS_SECONDS):
        raise OverflowError("time out of representable range (+/- 1e6 s)")
    mag = np.atleast_1d(np.abs(arr))
    whole = np.floor(mag)
    frac_ps = (mag - whole) * PS_PER_SECOND  # frac in [0, 1): exact subtraction
    ps = whole.astype(np.int64) * PS_PER_SECOND + _round_half_away(frac_ps)
    ps = np.where(np.atleast_1d(arr) < 0, -ps, ps)
    if np.ndim(seconds) == 0:
        return int(ps[0])
    return ps


def seconds_from_picos(picos):
    """Convert integer picoseconds to float seconds (inverse of picos_from_seconds)."""
    arr = np.asarray(picos, dtype=np.int64)
    out = arr / PS_PER_SECOND
    if np.ndim(picos) == 0:
        return float(out)
    return out


def _round_half_away(x) -> np.ndarray:
    """Nearest-integer rounding with ties away from zero (returns int64 array)."""
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.abs(arr)
    out += 0.5
    np.floor(out, out)
    np.copysign(out, arr, out)
    return out.astype(np.int64)


def round_ps(x):
    """Round float picoseconds to int64, ties away from zero."""
    arr = _round_half_away(x)
    if np.ndim(x) == 0:
        return int(arr[0])
    return arr


def div_round_nearest(numerator: int, denominator: int) -> int:
    """Exact integer division rounded to nearest, ties away from zero."""
    if denominator < 0:
        numerator, denominator = -numerator, -denominator
    q, r = divmod(abs(numerator), denominator)
    if 2 * r >= denominator:
        q += 1
    return q if numerator >= 0 else -q


@dataclass(frozen=True)
class PhysicalConstants:
    """Geodetic and kinematic constants (SI units).

    Defaults are the SI speed of light, the WGS-84 gravitational parameter,
    the mean Earth radius, the sidereal rotation rate, and the one-cycle-per-
    tropical-year precession rate of a sun-synchronous orbit plane.
    """

    c: float = 299_792_458.0
    gm_earth: float = 3.986004418e14
    earth_radius: float = 6_371_000.0
    earth_rotation_rate: float = 2.0 * math.pi / 86164.0905
    sun_sync_precession_rate: float = 2.0 * math.pi / (365.2422 * 86400.0)


def as_tag_array(tags) -> np.ndarray:
    """Coerce a TagStream or array-like into an int64 picosecond array."""
    if isinstance(tags, TagStream):
        return tags.tags
    arr = np.asarray(tags)
    if arr.dtype != np.int64:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ConfigError("tags must be integer picoseconds")
        arr = arr.astype(np.int64)
    return arr


def ensure_strictly_increasing(tags: np.ndarray) -> None:
    if tags.size > 1 and not np.all(np.diff(tags) > 0):
        raise ConfigError("tags must be strictly increasing")


def merge_tags(*arrays) -> np.ndarray:
    """Merge sorted tag arrays into one sorted array, duplicates removed."""
    stacked = np.concatenate([as_tag_array(a) for a in arrays]) if arrays else np.empty(0, np.int64)
    return np.unique(stacked)


@dataclass(frozen=True)
class TagStream:
    """Ordered detection timestamps on one named channel.

    Tags are strictly increasing int64 picoseconds; duplicates on a channel
    are forbidden (generators enforce this via dead time or a merge rule).
    """

    channel: Channel
    tags: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        arr = as_tag_array(self.tags)
        ensure_strictly_increasing(arr)
        try:
            channel = Channel(self.channel)
        except ValueError:
            raise ConfigError(f"unknown channel id {self.channel!r}") from None
        object.__setattr__(self, "tags", arr)
        object.__setattr__(self, "channel", channel)

    def __len__(self) -> int:
        return int(self.tags.size)

    @property
    def span_ps(self) -> int:
        if len(self) < 2:
            return 0
        return int(self.tags[-1] - self.tags[0])

    def shifted(self, delta_ps: int) -> "TagStream":
        return TagStream(self.channel, self.tags + int(delta_ps))

    def window(self, start_ps: int, stop_ps: int) -> np.ndarray:
        """Tags in [start_ps, stop_ps) as a read-only view."""
        lo = int(np.searchsorted(self.tags, start_ps, side="left"))
        hi = int(np.searchsorted(self.tags, stop_ps, side="left"))
        return self.tags[lo:hi]


@dataclass(frozen=True)
class StreamSet:
    """The four detector streams of one two-way exchange."""

    alice_local: TagStream
    alice_receive: TagStream
    bob_local: TagStream
    bob_receive: TagStream

    def __post_init__(self):
        expected = {
            "alice_local": Channel.ALICE_LOCAL,
            "alice_receive": Channel.ALICE_RECEIVE,
            "bob_local": Channel.BOB_LOCAL,
            "bob_receive": Channel.BOB_RECEIVE,
        }
        for name, channel in expected.items():
            stream = getattr(self, name)
            if stream.channel != channel:
                raise ConfigError(f"stream {name} carries channel {stream.channel.label}")

    def __iter__(self):
        yield self.alice_local
        yield self.alice_receive
        yield self.bob_local
        yield self.bob_receive

    @classmethod
    def from_streams(cls, streams) -> "StreamSet":
        by_channel = {s.channel: s for s in streams}
        if len(by_channel) != 4:
            raise ConfigError("need exactly one stream per channel")
        return cls(
            alice_local=by_channel[Channel.ALICE_LOCAL],
            alice_receive=by_channel[Channel.ALICE_RECEIVE],
            bob_local=by_channel[Channel.BOB_LOCAL],
            bob_receive=by_channel[Channel.BOB_RECEIVE],
        )

    def swapped_sites(self) -> "StreamSet":
        """Relabel Alice as Bob and vice versa (for symmetry checks)."""
        return StreamSet(
            alice_local=TagStream(Channel.ALICE_LOCAL, self.bob_local.tags),
            alice_receive=TagStream(Channel.ALICE_RECEIVE, self.bob_receive.tags),
            bob_local=TagStream(Channel.BOB_LOCAL, self.alice_local.tags),
            bob_receive=TagStream(Channel.BOB_RECEIVE, self.alice_receive.tags),
        )

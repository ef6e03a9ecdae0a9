"""Tag-stream and result persistence.

Binary tag format: a 16-byte header (magic ``QTTTAGS1``, little-endian u32
version, u32 record count) followed by 16-byte records: little-endian signed
64-bit picosecond timestamp, one channel-id byte, and 7 reserved zero bytes.
Reads fail closed on a bad magic, unknown version, truncated payload, or
nonzero reserved bytes. A CSV alternative (header ``channel,picoseconds``)
parses to identical streams.

All writers are atomic (write to a temp file, then rename).
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .core import ALL_CHANNELS, Channel, StreamSet, TagFormatError, TagStream
from .simulate import DirectionTruth, SimulationTruth
from .sync import SyncRecord

MAGIC = b"QTTTAGS1"
VERSION = 1
_HEADER = struct.Struct("<8sII")
_RECORD_DTYPE = np.dtype([("ps", "<i8"), ("channel", "u1"), ("reserved", "u1", 7)])


@contextmanager
def atomic_write(path, mode="w", **kwargs):
    """Write to a temp file in the destination directory, rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kwargs) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_tags(path, streams: StreamSet) -> None:
    """Write all four streams to one binary tag file."""
    total = sum(len(s) for s in streams)
    records = np.zeros(total, dtype=_RECORD_DTYPE)
    pos = 0
    for stream in streams:
        n = len(stream)
        records["ps"][pos : pos + n] = stream.tags
        records["channel"][pos : pos + n] = int(stream.channel)
        pos += n
    with atomic_write(path, "wb") as handle:
        handle.write(_HEADER.pack(MAGIC, VERSION, total))
        handle.write(records.tobytes())


def read_tags(path) -> StreamSet:
    """Read a binary tag file back into the four streams (fail closed)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TagFormatError("truncated header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TagFormatError("bad magic")
    if version != VERSION:
        raise TagFormatError(f"unsupported version {version}")
    payload = raw[_HEADER.size :]
    if len(payload) != count * _RECORD_DTYPE.itemsize:
        raise TagFormatError("payload length does not match record count")
    records = np.frombuffer(payload, dtype=_RECORD_DTYPE)
    if records.size and np.any(records["reserved"] != 0):
        raise TagFormatError("nonzero reserved bytes")
    streams = []
    for channel in ALL_CHANNELS:
        tags = records["ps"][records["channel"] == int(channel)]
        try:
            streams.append(TagStream(channel, np.ascontiguousarray(tags)))
        except Exception as exc:
            raise TagFormatError(f"channel {channel.label}: {exc}") from exc
    unknown = set(np.unique(records["channel"]).tolist()) - {int(c) for c in ALL_CHANNELS}
    if unknown:
        raise TagFormatError(f"unknown channel id(s) {sorted(unknown)}")
    return StreamSet.from_streams(streams)


def write_tags_csv(path, streams: StreamSet) -> None:
    with atomic_write(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["channel", "picoseconds"])
        for stream in streams:
            label = stream.channel.label
            for value in stream.tags.tolist():
                writer.writerow([label, value])


def read_tags_csv(path) -> StreamSet:
    tags: dict[Channel, list[int]] = {channel: [] for channel in ALL_CHANNELS}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["channel", "picoseconds"]:
            raise TagFormatError("bad CSV header, expected 'channel,picoseconds'")
        for row in reader:
            if len(row) != 2:
                raise TagFormatError(f"malformed row: {row!r}")
            try:
                channel = Channel.from_label(row[0])
                tags[channel].append(int(row[1]))
            except Exception as exc:
                raise TagFormatError(f"malformed row {row!r}: {exc}") from exc
    streams = []
    for channel in ALL_CHANNELS:
        try:
            streams.append(TagStream(channel, np.array(tags[channel], dtype=np.int64)))
        except Exception as exc:
            raise TagFormatError(f"channel {channel.label}: {exc}") from exc
    return StreamSet.from_streams(streams)


RECORD_COLUMNS = [
    "acq_index",
    "t_mid_ps",
    "tau_alpha_ps",
    "tau_beta_ps",
    "delta_ps",
    "t_prop_ps",
    "drift_alpha",
    "drift_beta",
    "found_alpha",
    "found_beta",
]


def write_records_csv(path, records: list[SyncRecord]) -> None:
    with atomic_write(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.acq_index,
                    r.t_mid_ps,
                    r.tau_alpha_ps,
                    r.tau_beta_ps,
                    r.delta_ps,
                    r.t_prop_ps,
                    f"{r.drift_alpha:.6e}",
                    f"{r.drift_beta:.6e}",
                    int(r.found_alpha),
                    int(r.found_beta),
                ]
            )


def read_records_csv(path) -> list[SyncRecord]:
    records = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != RECORD_COLUMNS:
            raise TagFormatError("unexpected records CSV header")
        for row in reader:
            records.append(
                SyncRecord(
                    acq_index=int(row[0]),
                    t_mid_ps=int(row[1]),
                    tau_alpha_ps=int(row[2]),
                    tau_beta_ps=int(row[3]),
                    delta_ps=int(row[4]),
                    t_prop_ps=int(row[5]),
                    drift_alpha=float(row[6]),
                    drift_beta=float(row[7]),
                    found_alpha=bool(int(row[8])),
                    found_beta=bool(int(row[9])),
                )
            )
    return records


def write_truth(directory, truth: SimulationTruth) -> None:
    """Truth sidecar: meta JSON, offset history CSV, and true-pair CSVs."""
    directory = Path(directory)
    meta = {
        "clock_alice": _clock_dict(truth.clock_alice),
        "clock_bob": _clock_dict(truth.clock_bob),
        "drift_difference_bob_minus_alice": truth.clock_bob.fractional_drift
        - truth.clock_alice.fractional_drift,
    }
    with atomic_write(directory / "truth.json") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")
    with atomic_write(directory / "truth_delta.csv", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t_ps", "delta_bob_minus_alice_ps"])
        for t, d in zip(truth.t_grid_ps.tolist(), truth.delta_bob_minus_alice_ps.tolist()):
            writer.writerow([t, d])
    for name, pairs in (("down", truth.pairs_down), ("up", truth.pairs_up)):
        with atomic_write(directory / f"truth_pairs_{name}.csv", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["local_ps", "receive_ps"])
            for l, r in zip(pairs.local_tags.tolist(), pairs.receive_tags.tolist()):
                writer.writerow([l, r])


def read_truth(directory) -> dict:
    """Truth sidecar loader for test harnesses (raw dict form)."""
    directory = Path(directory)
    meta = json.loads((directory / "truth.json").read_text())
    delta = np.genfromtxt(directory / "truth_delta.csv", delimiter=",", skip_header=1, dtype=np.int64)
    delta = delta.reshape(-1, 2)
    out = {
        "meta": meta,
        "t_ps": delta[:, 0],
        "delta_ps": delta[:, 1],
    }
    for name in ("down", "up"):
        arr = np.genfromtxt(
            directory / f"truth_pairs_{name}.csv", delimiter=",", skip_header=1, dtype=np.int64
        ).reshape(-1, 2)
        out[f"pairs_{name}"] = DirectionTruth(local_tags=arr[:, 0], receive_tags=arr[:, 1])
    return out


def _clock_dict(clk) -> dict:
    return {
        "delta0_ps": clk.delta0_ps,
        "fractional_drift": clk.fractional_drift,
        "drift_rate_of_change": clk.drift_rate_of_change,
        "white_fm_amplitude": clk.white_fm_amplitude,
        "seed": clk.seed,
    }

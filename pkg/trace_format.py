#!/usr/bin/env python3
"""
Binary trace files: a self-describing header followed by little-endian float64 records
[t, x, y, z, p_x, p_y, p_z, alpha, beta, gamma, pi_alpha, pi_beta, pi_gamma].

Layout: MAGIC (8 bytes) | format version (uint16 LE) | header length (uint32 LE) | JSON header | records
"""

import csv
import json
import logging
import struct
from pathlib import Path

import numpy as np

from errors import TraceFormatError
from kinematics import wrap_angles

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
MAGIC = b"LEVITRC\x00"
FORMAT_VERSION = 1
RECORD_WIDTH = 13
_PREAMBLE = struct.Struct("<HI")

COLUMNS = ("t", "x", "y", "z", "p_x", "p_y", "p_z", "alpha", "beta", "gamma", "pi_alpha", "pi_beta", "pi_gamma")


def write_trace(path, times, states, header: dict):
    """Write one trajectory; `header` must carry config_hash, seed, dt and decimation."""
    missing = {"config_hash", "seed", "dt", "decimation"} - set(header)
    if missing:
        raise ValueError(f"trace header is missing {sorted(missing)}")
    header = dict(header, version=header.get("version", TOOL_VERSION), records=int(len(times)))
    payload = json.dumps(header, sort_keys=True, default=float).encode("utf-8")
    records = np.column_stack([np.asarray(times, dtype="<f8"), np.asarray(states, dtype="<f8")])
    if records.shape[1] != RECORD_WIDTH:
        raise ValueError(f"expected 12 state columns, got {records.shape[1] - 1}")

    path = Path(path)
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(_PREAMBLE.pack(FORMAT_VERSION, len(payload)))
        handle.write(payload)
        handle.write(records.astype("<f8").tobytes())
    logger.debug(f"Wrote {len(times)} records to {path}")


def read_header(handle, path="<stream>") -> dict:
    magic = handle.read(len(MAGIC))
    if magic != MAGIC:
        raise TraceFormatError(f"{path}: not a trace file (bad magic {magic!r})")
    preamble = handle.read(_PREAMBLE.size)
    if len(preamble) != _PREAMBLE.size:
        raise TraceFormatError(f"{path}: truncated header")
    format_version, length = _PREAMBLE.unpack(preamble)
    if format_version != FORMAT_VERSION:
        raise TraceFormatError(f"{path}: trace format {format_version}, this build reads {FORMAT_VERSION}")
    try:
        return json.loads(handle.read(length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"{path}: corrupt header ({exc})") from exc


def read_trace(path, expected_version: str = TOOL_VERSION):
    """Return (times, states, header). Traces written by another tool version are refused."""
    with open(path, "rb") as handle:
        header = read_header(handle, path)
        if expected_version is not None and header.get("version") != expected_version:
            raise TraceFormatError(
                f"{path}: written by version {header.get('version')}, expected {expected_version}"
            )
        raw = handle.read()
    if len(raw) % (8 * RECORD_WIDTH):
        raise TraceFormatError(f"{path}: payload of {len(raw)} bytes is not a whole number of records")
    records = np.frombuffer(raw, dtype="<f8").reshape(-1, RECORD_WIDTH)
    if "records" in header and header["records"] != len(records):
        raise TraceFormatError(f"{path}: header announces {header['records']} records, found {len(records)}")
    return records[:, 0].copy(), records[:, 1:].copy(), header


def export_csv(path, times, states, header: dict):
    """Text copy of a trace for spreadsheets; alpha and gamma are wrapped into (-pi, pi]."""
    states = np.array(states, dtype=float)
    states[:, 6:9] = wrap_angles(states[:, 6:9])
    with open(path, "w", newline="") as handle:
        for key in sorted(header):
            handle.write(f"# {key}: {header[key]}\n")
        writer = csv.writer(handle)
        writer.writerow(COLUMNS)
        for t, row in zip(times, states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

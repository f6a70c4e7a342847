import csv
import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import TraceFormatError
from trace_format import COLUMNS, MAGIC, TOOL_VERSION, export_csv, read_trace, write_trace

HEADER = {"config_hash": "0123456789abcdef", "seed": 4, "dt": 1.5e-7, "decimation": 2, "index": 0}


def sample_trace(n=50):
    rng = np.random.default_rng(41)
    return np.arange(n) * 3e-7, rng.normal(size=(n, 12))


def test_trace_round_trip_is_bit_exact(tmp_path):
    times, states = sample_trace()
    path = tmp_path / "trace_0000.bin"
    write_trace(path, times, states, HEADER)
    read_times, read_states, header = read_trace(path)
    assert np.array_equal(read_times, times)
    assert np.array_equal(read_states, states)
    assert header["seed"] == 4 and header["config_hash"] == "0123456789abcdef"
    assert header["records"] == 50 and header["version"] == TOOL_VERSION


def test_identical_inputs_give_identical_files(tmp_path):
    times, states = sample_trace()
    write_trace(tmp_path / "a.bin", times, states, HEADER)
    write_trace(tmp_path / "b.bin", times, states, dict(reversed(list(HEADER.items()))))
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_header_must_carry_provenance(tmp_path):
    times, states = sample_trace()
    with pytest.raises(ValueError, match="seed"):
        write_trace(tmp_path / "t.bin", times, states, {"config_hash": "x", "dt": 1e-7, "decimation": 1})


def test_bad_magic_is_refused(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTATRACE" + bytes(64))
    with pytest.raises(TraceFormatError, match="magic"):
        read_trace(path)


def test_format_version_mismatch_is_refused(tmp_path):
    times, states = sample_trace()
    path = tmp_path / "t.bin"
    write_trace(path, times, states, HEADER)
    raw = bytearray(path.read_bytes())
    raw[len(MAGIC):len(MAGIC) + 2] = struct.pack("<H", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(TraceFormatError, match="format 99"):
        read_trace(path)


def test_tool_version_mismatch_is_refused(tmp_path):
    times, states = sample_trace()
    path = tmp_path / "t.bin"
    write_trace(path, times, states, dict(HEADER, version="0.9.0"))
    with pytest.raises(TraceFormatError, match="0.9.0"):
        read_trace(path)
    assert read_trace(path, expected_version=None)[2]["version"] == "0.9.0"


def test_truncated_payload_is_refused(tmp_path):
    times, states = sample_trace()
    path = tmp_path / "t.bin"
    write_trace(path, times, states, HEADER)
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(TraceFormatError, match="whole number"):
        read_trace(path)
    # dropping whole records is caught by the announced count
    write_trace(path, times, states, HEADER)
    path.write_bytes(path.read_bytes()[:-8 * 13])
    with pytest.raises(TraceFormatError, match="announces"):
        read_trace(path)


def test_wrong_state_width_is_rejected(tmp_path):
    times, states = sample_trace()
    with pytest.raises(ValueError):
        write_trace(tmp_path / "t.bin", times, states[:, :6], HEADER)


def test_csv_export(tmp_path):
    times, states = sample_trace(5)
    path = tmp_path / "t.csv"
    export_csv(path, times, states, HEADER)
    lines = path.read_text().splitlines()
    comments = [line for line in lines if line.startswith("#")]
    assert "# seed: 4" in comments
    rows = list(csv.reader(line for line in lines if not line.startswith("#")))
    assert tuple(rows[0]) == COLUMNS
    assert len(rows) == 6
    assert float(rows[3][8]) == states[2, 7]


def test_csv_export_wraps_alpha_and_gamma_only(tmp_path):
    times, states = sample_trace(3)
    states[:, 6] = 3.0 * np.pi + 0.1
    states[:, 7] = 4.0
    states[:, 8] = -3.5 * np.pi
    original = states.copy()
    path = tmp_path / "t.csv"
    export_csv(path, times, states, HEADER)
    rows = list(csv.reader(line for line in path.read_text().splitlines() if not line.startswith("#")))
    alpha, beta, gamma = (COLUMNS.index(label) for label in ("alpha", "beta", "gamma"))
    for row in rows[1:]:
        assert_allclose(float(row[alpha]), -np.pi + 0.1, rtol=1e-12)
        assert float(row[beta]) == 4.0
        assert_allclose(float(row[gamma]), 0.5 * np.pi, rtol=1e-12)
    # the binary-side array is not touched
    assert np.array_equal(states, original)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

import struct

import numpy as np
import pytest

from masi import fileformat
from masi.errors import CompatibilityError, CorruptionError, DataError
from masi.qtc import _fnv1a64


def test_fnv1a_reference_values():
    assert _fnv1a64(b"") == 0xCBF29CE484222325
    assert _fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert _fnv1a64(b"foobar") == 0x85944171F73967E8


def test_round_trip_of_every_section_type():
    sections = {
        "config": {"a": 1, "b": [1.5, "x"]},
        "raw": b"\x00\x01payload",
        "f": np.linspace(0, 1, 7).reshape(7, 1),
        "i": np.arange(-3, 3, dtype=np.int64),
        "b": np.array([[True, False]]),
        "s": np.array([-1, 10], dtype=np.int8),
        "scalar": np.array(2.5),
    }
    out = fileformat.decode(fileformat.encode("thing", sections), "thing")
    assert list(out) == list(sections)
    assert out["config"] == sections["config"] and out["raw"] == sections["raw"]
    for k in ("f", "i", "s", "scalar"):
        assert out[k].dtype == sections[k].dtype
        np.testing.assert_array_equal(out[k], sections[k])
    np.testing.assert_array_equal(out["b"].astype(bool), sections["b"])


def test_layout_is_little_endian_with_trailing_digest():
    data = fileformat.encode("k", {"x": np.array([1.0])})
    assert data.startswith(b"MASI1") and struct.unpack_from("<H", data, 5)[0] == 1
    assert struct.unpack("<Q", data[-8:])[0] == _fnv1a64(data[:-8])
    assert data[-16:-8] == struct.pack("<d", 1.0)


def test_encoding_is_deterministic():
    s = {"config": {"b": 1, "a": 2}, "x": np.arange(4.0)}
    assert fileformat.encode("k", s) == fileformat.encode("k", dict(s))


def test_corruption_is_detected():
    data = fileformat.encode("k", {"x": np.arange(10.0)})
    with pytest.raises(CorruptionError):
        fileformat.decode(data[:-1])
    with pytest.raises(CorruptionError):
        fileformat.decode(b"NOPE" + data[4:])
    bad = bytearray(data)
    bad[20] ^= 1
    with pytest.raises(CorruptionError):
        fileformat.decode(bytes(bad))


def test_kind_mismatch():
    with pytest.raises(CompatibilityError):
        fileformat.decode(fileformat.encode("dataset", {}), "checkpoint")


def test_unsupported_dtype():
    with pytest.raises(DataError):
        fileformat.encode("k", {"x": np.array(["a"])})


def test_file_helpers(tmp_path):
    fileformat.write(tmp_path / "f", "kind", {"x": np.ones(2)})
    assert fileformat.peek_kind(tmp_path / "f") == "kind"
    np.testing.assert_array_equal(fileformat.read(tmp_path / "f", "kind")["x"], np.ones(2))
    with pytest.raises(DataError):
        fileformat.read(tmp_path / "missing")
    with pytest.raises(DataError):
        fileformat.write(tmp_path / "no" / "dir" / "f", "kind", {})

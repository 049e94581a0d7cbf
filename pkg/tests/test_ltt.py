import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lotenet.errors import FormatError
from lotenet.tensor_core import load_ltt, read_ltt, save_ltt, write_ltt


def test_layout_is_exact():
    buf = io.BytesIO()
    write_ltt(buf, np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    raw = buf.getvalue()
    assert raw[:4] == b"LTT1"
    assert struct.unpack("<3I", raw[4:16]) == (2, 2, 3)
    assert struct.unpack("<6f", raw[16:]) == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    assert len(raw) == 16 + 24


def test_scalar_record():
    buf = io.BytesIO()
    write_ltt(buf, np.float32(2.5))
    assert buf.getvalue() == b"LTT1" + struct.pack("<I", 0) + struct.pack("<f", 2.5)
    buf.seek(0)
    out = read_ltt(buf)
    assert out.shape == () and out == np.float32(2.5)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_is_lossless(arr):
    buf = io.BytesIO()
    write_ltt(buf, arr)
    buf.seek(0)
    out = read_ltt(buf)
    assert out.dtype == np.float32 and out.shape == arr.shape
    assert out.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_consecutive_records():
    buf = io.BytesIO()
    write_ltt(buf, np.ones((2, 2)))
    write_ltt(buf, np.arange(3.0))
    buf.seek(0)
    assert read_ltt(buf).shape == (2, 2)
    np.testing.assert_array_equal(read_ltt(buf), [0, 1, 2])


def test_bad_magic_truncation_and_trailing(tmp_path):
    path = tmp_path / "t.ltt"
    save_ltt(path, np.ones((3, 3)))
    raw = path.read_bytes()

    path.write_bytes(b"LTT2" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_ltt(path)
    path.write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="truncated"):
        load_ltt(path)
    path.write_bytes(raw + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_ltt(path)
    with pytest.raises(FormatError):
        load_ltt(tmp_path / "missing.ltt")

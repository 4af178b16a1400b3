from __future__ import annotations

import io
import struct

import numpy as np
import pytest

from dpp import wire
from dpp.errors import ProtocolError
from dpp.types import DataType


class FakeSocket:
    """Minimal recv() shim over a byte string, dribbling small reads."""

    def __init__(self, data: bytes, step: int = 7):
        self.buf = io.BytesIO(data)
        self.step = step

    def recv(self, n: int) -> bytes:
        return self.buf.read(min(n, self.step))


def test_handshake_round_trip():
    blob = wire.encode_handshake("abc123")
    assert blob[:4] == b"DPP1"
    assert wire.read_handshake(FakeSocket(blob)) == "abc123"


def test_reply_round_trip():
    ok = wire.encode_reply(True, "ready")
    bad = wire.encode_reply(False, "unknown run")
    assert wire.read_reply(FakeSocket(ok)) == (True, "ready")
    assert wire.read_reply(FakeSocket(bad)) == (False, "unknown run")


def test_data_frame_round_trip():
    payload = np.arange(6, dtype=np.float32).tobytes()
    blob = wire.encode_data_frame("0.z", 3, 3, payload)
    frame = wire.read_frame(FakeSocket(blob))
    assert frame.kind == wire.DATA
    assert (frame.stream, frame.index, frame.count) == ("0.z", 3, 3)
    assert frame.payload == payload


def test_data_frame_layout_is_little_endian():
    blob = wire.encode_data_frame("s", 1, 2, b"\x01\x02")
    # u8 type, u16 len, name, u64 index, u32 count, u32 payload len
    assert blob[0] == 0
    assert struct.unpack("<H", blob[1:3])[0] == 1
    assert blob[3:4] == b"s"
    assert struct.unpack("<Q", blob[4:12])[0] == 1
    assert struct.unpack("<I", blob[12:16])[0] == 2
    assert struct.unpack("<I", blob[16:20])[0] == 2


def test_end_and_error_frames():
    end = wire.read_frame(FakeSocket(wire.encode_end_frame("2.z")))
    assert (end.kind, end.stream) == (wire.END, "2.z")
    err = wire.read_frame(FakeSocket(wire.encode_error_frame("boom")))
    assert (err.kind, err.message) == (wire.ERROR, "boom")


def test_unknown_frame_type():
    with pytest.raises(ProtocolError, match="unknown frame type"):
        wire.read_frame(FakeSocket(b"\x09"))


def test_truncation_detected():
    blob = wire.encode_data_frame("0.z", 0, 4, b"\x00" * 16)
    with pytest.raises(ProtocolError, match="closed mid-message"):
        wire.read_frame(FakeSocket(blob[:10]))


def test_bad_handshake_magic():
    with pytest.raises(ProtocolError, match="bad handshake magic"):
        wire.read_handshake(FakeSocket(b"NOPE\x00\x00"))


# -- stream files -----------------------------------------------------------------

def test_stream_file_round_trip(tmp_path):
    sf = wire.StreamFile.from_values("float2", np.arange(8, dtype=np.float32))
    assert sf.count == 4
    path = tmp_path / "s.dps"
    sf.save(path)
    back = wire.StreamFile.load(path)
    assert back.data == DataType("float", 2)
    assert np.array_equal(back.values, sf.values)
    assert back.to_bytes() == sf.to_bytes()


def test_stream_file_header_layout():
    sf = wire.StreamFile.from_values("uchar4", np.arange(8, dtype=np.uint8))
    blob = sf.to_bytes()
    assert blob[:4] == b"DPS1"
    (nlen,) = struct.unpack("<H", blob[4:6])
    assert blob[6:6 + nlen] == b"uchar4"
    (count,) = struct.unpack("<Q", blob[6 + nlen:14 + nlen])
    assert count == 2
    assert blob[14 + nlen:] == bytes(range(8))


def test_stream_file_rejects_bad_body():
    sf = wire.StreamFile.from_values("int", np.arange(4, dtype=np.int32))
    blob = sf.to_bytes()
    with pytest.raises(ProtocolError, match="body is"):
        wire.StreamFile.from_bytes(blob[:-2])


def test_stream_file_type_must_divide():
    with pytest.raises(ValueError, match="whole number"):
        wire.StreamFile(DataType("float", 2), np.zeros(3, np.float32))

"""Binary wire formats: data-plane frames and stream files.

All integers are little-endian; scalar payloads are flat little-endian
values (IEEE-754 binary32 for ``float``).

Data plane (one TCP connection per run)::

    handshake   "DPP1" + u16 run-id length + run-id bytes
    reply       "DPOK" | "DPER", + u16 length + UTF-8 message
    frame       u8 type; 0 DATA | 1 END | 2 ERROR
    DATA        u16 name length + name + u64 chunk index
                + u32 element count + u32 payload length + payload
    END         u16 name length + name
    ERROR       u16 length + UTF-8 message

Stream files (``.dps``)::

    "DPS1" + u16 type-name length + type name + u64 element count + body
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ProtocolError
from .types import DataType, parse_type_name

__all__ = [
    "HANDSHAKE_MAGIC", "REPLY_OK", "REPLY_ERROR",
    "DATA", "END", "ERROR", "Frame",
    "encode_handshake", "encode_reply", "encode_data_frame",
    "encode_end_frame", "encode_error_frame",
    "read_handshake", "read_reply", "read_frame", "recv_exact",
    "StreamFile",
]

HANDSHAKE_MAGIC = b"DPP1"
REPLY_OK = b"DPOK"
REPLY_ERROR = b"DPER"
STREAM_MAGIC = b"DPS1"

DATA, END, ERROR = 0, 1, 2

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_DATA_HEAD = struct.Struct("<QII")  # chunk index, element count, payload length


@dataclass(frozen=True)
class Frame:
    kind: int
    stream: str = ""
    index: int = 0
    count: int = 0
    payload: bytes = b""
    message: str = ""


def _name_bytes(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProtocolError(f"name too long ({len(raw)} bytes)")
    return _U16.pack(len(raw)) + raw


def encode_handshake(run_id: str) -> bytes:
    return HANDSHAKE_MAGIC + _name_bytes(run_id)


def encode_reply(ok: bool, message: str = "") -> bytes:
    return (REPLY_OK if ok else REPLY_ERROR) + _name_bytes(message)


def encode_data_frame(stream: str, index: int, count: int,
                      payload: bytes) -> bytes:
    return (_U8.pack(DATA) + _name_bytes(stream)
            + _DATA_HEAD.pack(index, count, len(payload)) + payload)


def encode_end_frame(stream: str) -> bytes:
    return _U8.pack(END) + _name_bytes(stream)


def encode_error_frame(message: str) -> bytes:
    return _U8.pack(ERROR) + _name_bytes(message)


def recv_exact(sock, n: int) -> bytes:
    """Read exactly ``n`` bytes or raise :class:`ProtocolError`."""
    parts = []
    remaining = n
    while remaining:
        data = sock.recv(min(remaining, 1 << 20))
        if not data:
            raise ProtocolError(
                f"connection closed mid-message ({n - remaining}/{n} bytes)")
        parts.append(data)
        remaining -= len(data)
    return b"".join(parts)


def _read_name(sock) -> str:
    (length,) = _U16.unpack(recv_exact(sock, 2))
    return recv_exact(sock, length).decode("utf-8")


def read_handshake(sock) -> str:
    magic = recv_exact(sock, 4)
    if magic != HANDSHAKE_MAGIC:
        raise ProtocolError(f"bad handshake magic {magic!r}")
    return _read_name(sock)


def read_reply(sock) -> tuple[bool, str]:
    magic = recv_exact(sock, 4)
    if magic not in (REPLY_OK, REPLY_ERROR):
        raise ProtocolError(f"bad handshake reply {magic!r}")
    return magic == REPLY_OK, _read_name(sock)


def read_frame(sock) -> Frame:
    (kind,) = _U8.unpack(recv_exact(sock, 1))
    if kind == DATA:
        stream = _read_name(sock)
        index, count, length = _DATA_HEAD.unpack(recv_exact(sock, 16))
        return Frame(DATA, stream=stream, index=index, count=count,
                     payload=recv_exact(sock, length))
    if kind == END:
        return Frame(END, stream=_read_name(sock))
    if kind == ERROR:
        return Frame(ERROR, message=_read_name(sock))
    raise ProtocolError(f"unknown frame type {kind}")


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamFile:
    """A typed flat scalar stream, as stored on disk and fed to runs."""

    data: DataType
    values: np.ndarray  # flat scalars, length = count * width

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise ValueError("stream values must be a flat scalar array")
        if self.values.dtype != self.data.dtype:
            raise ValueError(
                f"stream dtype {self.values.dtype} does not match {self.data}")
        if len(self.values) % self.data.width:
            raise ValueError(
                f"{len(self.values)} scalars is not a whole number of "
                f"{self.data} elements")

    @property
    def count(self) -> int:
        return len(self.values) // self.data.width

    @classmethod
    def from_values(cls, type_name: str, values) -> "StreamFile":
        data = parse_type_name(type_name)
        return cls(data, np.ascontiguousarray(values, data.dtype).ravel())

    def to_bytes(self) -> bytes:
        body = self.values.astype(self.values.dtype.newbyteorder("<"),
                                  copy=False).tobytes()
        return (STREAM_MAGIC + _name_bytes(self.data.name)
                + struct.pack("<Q", self.count) + body)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "StreamFile":
        if blob[:4] != STREAM_MAGIC:
            raise ProtocolError(f"bad stream file magic {blob[:4]!r}")
        (nlen,) = _U16.unpack(blob[4:6])
        name = blob[6:6 + nlen].decode("utf-8")
        data = parse_type_name(name)
        (count,) = struct.unpack("<Q", blob[6 + nlen:14 + nlen])
        body = blob[14 + nlen:]
        expect = count * data.nbytes
        if len(body) != expect:
            raise ProtocolError(
                f"stream file body is {len(body)} bytes, expected {expect}")
        values = np.frombuffer(body, dtype=data.dtype.newbyteorder("<"))
        return cls(data, values.astype(data.dtype, copy=False))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "StreamFile":
        return cls.from_bytes(Path(path).read_bytes())

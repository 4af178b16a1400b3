"""Scalar and vector data types shared by programs, kernels and streams.

The platform supports the nine OpenCL-1.0 scalar types below (``double`` and
``half`` are deliberately absent) and vectors of width 2, 4, 8 or 16 over
them.  A type's wire name is the base name plus an optional width suffix,
e.g. ``"float"``, ``"float2"``, ``"uchar4"``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SCALAR_NAMES",
    "VECTOR_WIDTHS",
    "DataType",
    "Direction",
    "IOPoint",
    "is_identifier",
    "parse_type_name",
]

# name -> (byte size, signed, numpy dtype)
_SCALARS: dict[str, tuple[int, bool, np.dtype]] = {
    "char": (1, True, np.dtype(np.int8)),
    "uchar": (1, False, np.dtype(np.uint8)),
    "short": (2, True, np.dtype(np.int16)),
    "ushort": (2, False, np.dtype(np.uint16)),
    "int": (4, True, np.dtype(np.int32)),
    "uint": (4, False, np.dtype(np.uint32)),
    "long": (8, True, np.dtype(np.int64)),
    "ulong": (8, False, np.dtype(np.uint64)),
    "float": (4, True, np.dtype(np.float32)),
}

SCALAR_NAMES = tuple(_SCALARS)
VECTOR_WIDTHS = (1, 2, 4, 8, 16)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_TYPE_RE = re.compile(r"(char|uchar|short|ushort|int|uint|long|ulong|float)(2|4|8|16)?\Z")


def is_identifier(name: str) -> bool:
    return bool(_IDENT_RE.match(name))


@dataclass(frozen=True)
class DataType:
    """A scalar type or a fixed-width vector over one."""

    base: str
    width: int = 1

    def __post_init__(self) -> None:
        if self.base not in _SCALARS:
            raise ValueError(f"unknown scalar type {self.base!r}")
        if self.width not in VECTOR_WIDTHS:
            raise ValueError(f"unsupported vector width {self.width}")

    @property
    def name(self) -> str:
        return self.base if self.width == 1 else f"{self.base}{self.width}"

    @property
    def is_float(self) -> bool:
        return self.base == "float"

    @property
    def is_integer(self) -> bool:
        return self.base != "float"

    @property
    def is_signed(self) -> bool:
        return _SCALARS[self.base][1]

    @property
    def is_vector(self) -> bool:
        return self.width > 1

    @property
    def scalar_size(self) -> int:
        """Byte size of one base scalar."""
        return _SCALARS[self.base][0]

    @property
    def nbytes(self) -> int:
        """Byte size of one element (scalar size times width)."""
        return self.scalar_size * self.width

    @property
    def dtype(self) -> np.dtype:
        """The numpy dtype of the base scalar (always little-endian here)."""
        return _SCALARS[self.base][2]

    def with_width(self, width: int) -> "DataType":
        return DataType(self.base, width)

    @property
    def scalar(self) -> "DataType":
        return self if self.width == 1 else DataType(self.base, 1)

    def __str__(self) -> str:
        return self.name


def parse_type_name(name: str) -> DataType:
    """Parse a wire-format type name such as ``"float2"`` or ``"uchar"``."""
    m = _TYPE_RE.match(name)
    if not m:
        raise ValueError(f"unknown data type name {name!r}")
    return DataType(m.group(1), int(m.group(2)) if m.group(2) else 1)


class Direction(enum.Enum):
    INPUT = "InputPoint"
    OUTPUT = "OutputPoint"

    @classmethod
    def from_wire(cls, text: str) -> "Direction":
        for d in cls:
            if d.value == text:
                return d
        raise ValueError(f"unknown point direction {text!r}")


@dataclass(frozen=True)
class IOPoint:
    """A named, typed input or output point attached to a node."""

    name: str
    data: DataType
    direction: Direction

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise ValueError(f"invalid point name {self.name!r}")

    @property
    def is_input(self) -> bool:
        return self.direction is Direction.INPUT

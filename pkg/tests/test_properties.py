"""Property tests for the structural invariants."""

from __future__ import annotations

import json

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_table2_doc
from dpp.model import parse_program, program_id, serialize_program
from dpp.wire import StreamFile
from dpp.types import parse_type_name

TYPE_NAMES = ["char", "uchar", "short", "ushort", "int", "uint",
              "long", "ulong", "float", "float2", "uchar4", "int8", "float16"]


def permute(doc: dict, order: list[int]) -> bytes:
    """Reorder JSON maps without changing content."""
    kernels = list(doc["kernels"].items())
    kernels = [kernels[i % len(kernels)] for i in order] or kernels
    seen = []
    shuffled = {}
    for name, spec in kernels:
        if name not in shuffled:
            io = list(spec["io"].items())
            io = {n: s for n, s in reversed(io)}
            shuffled[name] = {"io": io, "body": spec["body"]}
    for name, spec in doc["kernels"].items():
        shuffled.setdefault(name, spec)
    return json.dumps({"arrows": doc["arrows"], "kernels": shuffled,
                       "nodes": doc["nodes"]}).encode()


@given(st.permutations(range(3)))
def test_serialization_is_content_addressed(order):
    base = make_table2_doc()
    canonical = serialize_program(parse_program(json.dumps(base).encode()))
    assert serialize_program(parse_program(permute(base, list(order)))) == canonical


@given(st.permutations(range(3)))
def test_program_id_ignores_document_ordering(order):
    base = make_table2_doc()
    a = program_id(parse_program(json.dumps(base).encode()))
    b = program_id(parse_program(permute(base, list(order))))
    assert a == b


@settings(max_examples=40)
@given(st.sampled_from(TYPE_NAMES), st.integers(0, 64))
def test_stream_file_round_trips_any_type(type_name, count):
    data = parse_type_name(type_name)
    rng = np.random.default_rng(count)
    if data.is_float:
        values = rng.standard_normal(count * data.width).astype(np.float32)
    else:
        info = np.iinfo(data.dtype)
        values = rng.integers(info.min, info.max, count * data.width,
                              dtype=data.dtype, endpoint=True)
    sf = StreamFile(data, values)
    back = StreamFile.from_bytes(sf.to_bytes())
    assert back.data == data
    assert back.count == count
    assert back.values.tobytes() == values.tobytes()


@settings(max_examples=30)
@given(st.text(alphabet="abcxyz_09", min_size=1, max_size=12),
       st.integers(0, 2 ** 40), st.integers(0, 1000))
def test_data_frame_round_trips(stream, index, count):
    from dpp import wire
    import io

    class Sock:
        def __init__(self, data):
            self.b = io.BytesIO(data)

        def recv(self, n):
            return self.b.read(min(n, 5))

    payload = bytes(count % 251 for _ in range(count % 64))
    blob = wire.encode_data_frame(stream, index, count, payload)
    frame = wire.read_frame(Sock(blob))
    assert (frame.stream, frame.index, frame.count, frame.payload) == \
        (stream, index, count, payload)

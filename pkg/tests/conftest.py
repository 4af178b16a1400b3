"""Shared program fixtures.

``table2_doc`` is the canonical three-instance fan/rot/adder graph (with the
rot body in its executable float form); ``fixture_corpus`` collects every
runnable program the round-trip and transport tests sweep over.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from dpp.model import Program, parse_program


def make_table2_doc(rot_body: str = "int i=get_global_id(0);\ny[i]=x[i]*65536.0f;\n",
                    adder_body: str = "int i = get_global_id(0);\nz[i]=x[i]+y[i];\n") -> dict:
    return {
        "kernels": {
            "adder": {
                "body": adder_body,
                "io": {"x": {"data": "float", "type": "InputPoint"},
                       "y": {"data": "float", "type": "InputPoint"},
                       "z": {"data": "float", "type": "OutputPoint"}}},
            "fan": {
                "body": "int i=get_global_id(0);\nx[i]=z[i].x;\ny[i]=z[i].y;\n",
                "io": {"x": {"data": "float", "type": "OutputPoint"},
                       "y": {"data": "float", "type": "OutputPoint"},
                       "z": {"data": "float2", "type": "InputPoint"}}},
            "rot": {
                "body": rot_body,
                "io": {"x": {"data": "float", "type": "InputPoint"},
                       "y": {"data": "float", "type": "OutputPoint"}}}},
        "nodes": [[0, {"kernel": "fan"}], [1, {"kernel": "rot"}],
                  [2, {"kernel": "adder"}]],
        "arrows": [{"output": [0, "x"], "input": [2, "x"]},
                   {"output": [1, "y"], "input": [2, "y"]},
                   {"output": [0, "y"], "input": [1, "x"]}],
    }


def one_node_doc(body: str, io: dict) -> dict:
    return {"kernels": {"k": {"body": body, "io": io}},
            "nodes": [[0, {"kernel": "k"}]], "arrows": []}


IDENTITY_DOC = one_node_doc(
    "int i=get_global_id(0);\ny[i]=x[i];\n",
    {"x": {"data": "float", "type": "InputPoint"},
     "y": {"data": "float", "type": "OutputPoint"}})

ROT_INT_DOC = one_node_doc(
    "int i=get_global_id(0);\ny[i]=x[i]<<16;\n",
    {"x": {"data": "int", "type": "InputPoint"},
     "y": {"data": "int", "type": "OutputPoint"}})

WIDTH_CHAIN_DOC = {
    "kernels": {
        "pairs": {"body": "int i=get_global_id(0);\ny[i]=x[i]*2.0f;\n",
                  "io": {"x": {"data": "float2", "type": "InputPoint"},
                         "y": {"data": "float2", "type": "OutputPoint"}}},
        "quads": {"body": "int i=get_global_id(0);\nq[i]=p[i]+(float4)(1.0f,1.0f,1.0f,1.0f);\n",
                  "io": {"p": {"data": "float4", "type": "InputPoint"},
                         "q": {"data": "float4", "type": "OutputPoint"}}}},
    "nodes": [[0, {"kernel": "pairs"}], [1, {"kernel": "quads"}]],
    "arrows": [{"output": [0, "y"], "input": [1, "p"]}],
}

CLAMP_DOC = one_node_doc(
    "int i=get_global_id(0);\n"
    "o[i] = v[i] > 100.0f ? 100.0f : (v[i] < 0.0f ? 0.0f : v[i]);\n",
    {"v": {"data": "float", "type": "InputPoint"},
     "o": {"data": "float", "type": "OutputPoint"}})


def _doc_bytes(doc: dict) -> bytes:
    return json.dumps(doc).encode("utf-8")


@pytest.fixture
def table2_doc() -> bytes:
    return _doc_bytes(make_table2_doc())


@pytest.fixture
def table2_program(table2_doc) -> Program:
    return parse_program(table2_doc)


def fixture_corpus() -> list[tuple[str, bytes]]:
    """Every runnable fixture: (name, document bytes)."""
    from dpp.apps.fft import leaf_program
    from dpp.apps.imgc import (chroma_down_program, gradient_program,
                               vq_program, ycbcr_program)
    from dpp.model import serialize_program

    docs = [
        ("table2", _doc_bytes(make_table2_doc())),
        ("identity", _doc_bytes(IDENTITY_DOC)),
        ("rot_int", _doc_bytes(ROT_INT_DOC)),
        ("width_chain", _doc_bytes(WIDTH_CHAIN_DOC)),
        ("clamp", _doc_bytes(CLAMP_DOC)),
    ]
    docs += [(f"dft{2 ** k}", serialize_program(leaf_program(k)))
             for k in (1, 2, 3)]
    docs += [("ycbcr", serialize_program(ycbcr_program())),
             ("boxdown", serialize_program(chroma_down_program())),
             ("gradient16", serialize_program(gradient_program(16, 16))),
             ("vq8", serialize_program(vq_program(8)))]
    return docs


def random_input_for(program: Program, elements: int,
                     seed: int = 0) -> dict[str, "np.ndarray"]:
    """Seeded flat input arrays for every free input stream."""
    from dpp.model import free_points
    from dpp.types import Direction

    rng = np.random.default_rng(seed)
    out = {}
    for fp in free_points(program):
        if fp.direction is not Direction.INPUT:
            continue
        n = elements * fp.data.width
        if fp.data.is_float:
            out[fp.stream] = rng.standard_normal(n).astype(np.float32) * 8
        else:
            info = np.iinfo(fp.data.dtype)
            lo, hi = max(info.min, -1000), min(info.max, 1000)
            out[fp.stream] = rng.integers(lo, hi + 1, n).astype(fp.data.dtype)
    return out

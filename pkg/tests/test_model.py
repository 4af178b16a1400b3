from __future__ import annotations

import itertools
import json

import pytest

from conftest import fixture_corpus, make_table2_doc, one_node_doc
from dpp.errors import ProgramFormatError
from dpp.model import (free_points, parse_program, program_id,
                       serialize_program, topological_order, validate)
from dpp.types import Direction


def test_table2_parses_to_expected_shape(table2_program):
    p = table2_program
    assert set(p.kernels) == {"adder", "fan", "rot"}
    assert [inst.id for inst in p.nodes] == [0, 1, 2]
    assert len(p.arrows) == 3


def test_empty_graph_is_parseable_but_not_executable():
    doc = {"kernels": {"k": one_node_doc("", {})["kernels"]["k"]},
           "nodes": [], "arrows": []}
    doc["kernels"]["k"] = {
        "body": "int i=get_global_id(0);\ny[i]=x[i];\n",
        "io": {"x": {"data": "float", "type": "InputPoint"},
               "y": {"data": "float", "type": "OutputPoint"}}}
    program = parse_program(json.dumps(doc).encode())
    assert program.nodes == ()
    report = validate(program)
    kinds = {v.kind for v in report.violations}
    assert kinds == {"no-free-input", "no-free-output"}


def test_unknown_instance_in_arrow_rejected(table2_doc):
    doc = json.loads(table2_doc)
    doc["arrows"][0]["input"] = [9, "x"]
    with pytest.raises(ProgramFormatError, match="unknown instance 9"):
        parse_program(json.dumps(doc).encode())


@pytest.mark.parametrize("mutate,fragment", [
    (lambda d: d.pop("arrows"), "missing key 'arrows'"),
    (lambda d: d.update(extra=1), "unknown key 'extra'"),
    (lambda d: d["nodes"].append([0, {"kernel": "fan"}]), "duplicate instance id 0"),
    (lambda d: d["nodes"].append([5, {"kernel": "nope"}]), "unknown kernel 'nope'"),
    (lambda d: d["kernels"]["adder"]["io"]["x"].update(data="float3"),
     "unknown data type"),
    (lambda d: d["arrows"].append({"output": [0, "z"], "input": [1, "x"]}),
     "not an OutputPoint"),
    (lambda d: d["arrows"].append({"output": [1, "y"], "input": [1, "x"]}),
     "same instance"),
    (lambda d: d["arrows"][0].update(output=[0, "nope"]), "unknown point"),
    (lambda d: d["nodes"].append([-1, {"kernel": "fan"}]), "negative"),
])
def test_parse_rejections(table2_doc, mutate, fragment):
    doc = json.loads(table2_doc)
    mutate(doc)
    with pytest.raises(ProgramFormatError, match=fragment):
        parse_program(json.dumps(doc).encode())


def test_malformed_json():
    with pytest.raises(ProgramFormatError, match="malformed JSON"):
        parse_program(b"{not json")


def test_table2_validates_clean(table2_program):
    assert validate(table2_program).ok


def test_smallest_cycle_reported():
    doc = {
        "kernels": {"k": {
            "body": "int i=get_global_id(0);\ny[i]=x[i];\n",
            "io": {"x": {"data": "float", "type": "InputPoint"},
                   "y": {"data": "float", "type": "OutputPoint"}}}},
        "nodes": [[0, {"kernel": "k"}], [1, {"kernel": "k"}]],
        "arrows": [{"output": [0, "y"], "input": [1, "x"]},
                   {"output": [1, "y"], "input": [0, "x"]}]}
    report = validate(parse_program(json.dumps(doc).encode()))
    cycles = [v for v in report.violations if v.kind == "cycle"]
    assert len(cycles) == 1
    assert "0" in cycles[0].message and "1" in cycles[0].message


def test_base_type_mismatch_on_arrow():
    doc = {
        "kernels": {
            "f": {"body": "int i=get_global_id(0);\ny[i]=x[i];\n",
                  "io": {"x": {"data": "float", "type": "InputPoint"},
                         "y": {"data": "float", "type": "OutputPoint"}}},
            "g": {"body": "int i=get_global_id(0);\ny[i]=x[i];\n",
                  "io": {"x": {"data": "int", "type": "InputPoint"},
                         "y": {"data": "int", "type": "OutputPoint"}}}},
        "nodes": [[0, {"kernel": "f"}], [1, {"kernel": "g"}]],
        "arrows": [{"output": [0, "y"], "input": [1, "x"]}]}
    report = validate(parse_program(json.dumps(doc).encode()))
    assert any(v.kind == "arrow-type-mismatch"
               and "base scalar type mismatch" in v.message
               for v in report.violations)


def test_duplicate_endpoint_reported(table2_doc):
    doc = json.loads(table2_doc)
    doc["arrows"].append({"output": [0, "x"], "input": [1, "x"]})
    report = validate(parse_program(json.dumps(doc).encode()))
    assert any(v.kind == "duplicate-endpoint" for v in report.violations)


def test_kernel_violation_carries_diagnostic():
    doc = json.loads(json.dumps(make_table2_doc(
        rot_body="int i=get_global_id(0);\ny[i]=x[i]<<16;\n")))
    report = validate(parse_program(json.dumps(doc).encode()))
    kernel_violations = [v for v in report.violations if v.kind == "kernel"]
    assert len(kernel_violations) == 1
    assert "shift requires integer operands" in kernel_violations[0].message


def test_node_without_output_detected():
    doc = {"kernels": {"sink": {
        "body": "int i=get_global_id(0);\nint t = x[i];\n",
        "io": {"x": {"data": "int", "type": "InputPoint"}}}},
        "nodes": [[0, {"kernel": "sink"}]], "arrows": []}
    report = validate(parse_program(json.dumps(doc).encode()))
    assert any(v.kind == "node-io" and "no output point" in v.message
               for v in report.violations)


# -- serialization -------------------------------------------------------------

def test_round_trip_is_byte_stable(table2_doc):
    program = parse_program(table2_doc)
    blob = serialize_program(program)
    again = parse_program(blob)
    assert again == program
    assert serialize_program(again) == blob


def test_canonical_bytes_ignore_map_order(table2_doc):
    doc = json.loads(table2_doc)
    shuffled = {
        "arrows": doc["arrows"],
        "kernels": dict(reversed(list(doc["kernels"].items()))),
        "nodes": doc["nodes"]}
    a = serialize_program(parse_program(json.dumps(doc).encode()))
    b = serialize_program(parse_program(json.dumps(shuffled).encode()))
    assert a == b


def test_canonical_form_has_sorted_keys_no_whitespace(table2_doc):
    blob = serialize_program(parse_program(table2_doc))
    text = blob.decode()
    assert ": " not in text and ", " not in text
    parsed = json.loads(text)
    assert list(parsed) == ["arrows", "kernels", "nodes"]


@pytest.mark.parametrize("name,doc", fixture_corpus(),
                         ids=[n for n, _ in fixture_corpus()])
def test_corpus_round_trip(name, doc):
    program = parse_program(doc)
    blob = serialize_program(program)
    assert parse_program(blob) == program
    assert serialize_program(parse_program(blob)) == blob


def test_corpus_ids_unique_and_stable():
    ids = {}
    for name, doc in fixture_corpus():
        digest = program_id(parse_program(doc))
        assert len(digest) == 64 and set(digest) <= set("0123456789abcdef")
        assert digest not in ids.values()
        ids[name] = digest
    again = {name: program_id(parse_program(doc))
             for name, doc in fixture_corpus()}
    assert again == ids


# Pinned golden value: any change to canonical serialization must be deliberate.
TABLE2_ID = "fe7c14426649a2ffca378754dca3637c587c376f6c5db57167585ce9e286bf47"


def test_table2_id_is_pinned(table2_program):
    assert program_id(table2_program) == TABLE2_ID


def test_id_changes_with_kernel_body():
    base = program_id(parse_program(json.dumps(make_table2_doc()).encode()))
    tweaked = make_table2_doc(
        rot_body="int i=get_global_id(0);\ny[i]=x[i]*65537.0f;\n")
    assert program_id(parse_program(json.dumps(tweaked).encode())) != base


def test_id_survives_round_trip(table2_program):
    again = parse_program(serialize_program(table2_program))
    assert program_id(again) == program_id(table2_program)


# -- ordering and free points ----------------------------------------------------

def test_table2_topological_order(table2_program):
    assert topological_order(table2_program) == [0, 1, 2]


def test_single_instance_order():
    doc = one_node_doc("int i=get_global_id(0);\ny[i]=x[i];\n",
                       {"x": {"data": "float", "type": "InputPoint"},
                        "y": {"data": "float", "type": "OutputPoint"}})
    doc["nodes"] = [[7, {"kernel": "k"}]]
    assert topological_order(parse_program(json.dumps(doc).encode())) == [7]


def test_disconnected_instances_tie_break():
    doc = one_node_doc("int i=get_global_id(0);\ny[i]=x[i];\n",
                       {"x": {"data": "float", "type": "InputPoint"},
                        "y": {"data": "float", "type": "OutputPoint"}})
    doc["nodes"] = [[7, {"kernel": "k"}], [3, {"kernel": "k"}]]
    assert topological_order(parse_program(json.dumps(doc).encode())) == [3, 7]


def test_order_respects_every_arrow(table2_program):
    order = topological_order(table2_program)
    position = {iid: at for at, iid in enumerate(order)}
    for arrow in table2_program.arrows:
        assert position[arrow.output[0]] < position[arrow.input[0]]


def test_table2_free_points(table2_program):
    free = free_points(table2_program)
    assert [(fp.stream, fp.direction) for fp in free] == [
        ("0.z", Direction.INPUT), ("2.z", Direction.OUTPUT)]
    assert free[0].data.name == "float2"


def test_saturated_chain_exposes_head_and_tail():
    doc = {
        "kernels": {"k": {
            "body": "int i=get_global_id(0);\ny[i]=x[i];\n",
            "io": {"x": {"data": "float", "type": "InputPoint"},
                   "y": {"data": "float", "type": "OutputPoint"}}}},
        "nodes": [[0, {"kernel": "k"}], [1, {"kernel": "k"}]],
        "arrows": [{"output": [0, "y"], "input": [1, "x"]}]}
    free = free_points(parse_program(json.dumps(doc).encode()))
    assert [fp.stream for fp in free] == ["0.x", "1.y"]


def test_empty_program_has_no_free_points():
    doc = {"kernels": {}, "nodes": [], "arrows": []}
    assert free_points(parse_program(json.dumps(doc).encode())) == []


def test_validate_agrees_with_topological_order():
    # Programs that fail only on free points still order; cyclic ones do not.
    for name, doc in fixture_corpus():
        program = parse_program(doc)
        if validate(program).ok:
            topological_order(program)  # must not raise

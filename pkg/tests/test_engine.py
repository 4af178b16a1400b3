from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import IDENTITY_DOC, WIDTH_CHAIN_DOC, one_node_doc, random_input_for
from dpp.engine import Chunk, chunk_arrays, plan, race_check, run_chunk, run_stream
from dpp.errors import EngineRuntimeError, PlanError
from dpp.model import parse_program


def load(doc) -> "Program":
    return parse_program(json.dumps(doc).encode())


IDENTITY = load(IDENTITY_DOC)


def float_chunk(values, stream="0.x", index=0) -> Chunk:
    arr = np.asarray(values, np.float32)
    return Chunk(index, {stream: arr}, {stream: len(arr)})


# -- planning ------------------------------------------------------------------

def test_table2_all_multipliers_one(table2_program):
    plan_ = plan(table2_program, 4)
    assert all(m == 1 for m in plan_.multipliers.values())
    assert plan_.order == (0, 1, 2)


def test_width_conversion_halves_work_items():
    plan_ = plan(load(WIDTH_CHAIN_DOC), 4)
    assert plan_.multipliers[0] == 1
    assert plan_.multipliers[1] == 0.5


def test_non_integral_chunk_size_rejected():
    with pytest.raises(PlanError, match="non-integral width conversion"):
        plan(load(WIDTH_CHAIN_DOC), 3)


def test_work_item_count_mismatch_detected():
    doc = {
        "kernels": {
            "widen": {"body": "int i=get_global_id(0);\ny[i]=(float2)(x[i],x[i]);\n",
                      "io": {"x": {"data": "float", "type": "InputPoint"},
                             "y": {"data": "float2", "type": "OutputPoint"}}},
            "join": {"body": "int i=get_global_id(0);\nz[i]=a[i]+b[i];\n",
                     "io": {"a": {"data": "float", "type": "InputPoint"},
                            "b": {"data": "float", "type": "InputPoint"},
                            "z": {"data": "float", "type": "OutputPoint"}}}},
        "nodes": [[0, {"kernel": "widen"}], [1, {"kernel": "join"}]],
        "arrows": [{"output": [0, "y"], "input": [1, "a"]}]}
    # point a sees 2x elements, free point b sees 1x
    with pytest.raises(PlanError, match="work-item count mismatch at instance 1"):
        plan(load(doc), 4)


def test_invalid_program_rejected_at_plan_time():
    doc = one_node_doc("int i=get_global_id(0);\ny[i]=x[i]<<16;\n",
                       {"x": {"data": "float", "type": "InputPoint"},
                        "y": {"data": "float", "type": "OutputPoint"}})
    with pytest.raises(PlanError, match="not executable"):
        plan(load(doc), 4)


# -- run_chunk -------------------------------------------------------------------

def test_table2_chunk_oracle(table2_program):
    plan_ = plan(table2_program, 4)
    zin = np.array([1, 2, 3, 4, 5, 6], np.float32)
    out = run_chunk(plan_, Chunk(0, {"0.z": zin}, {"0.z": 3}))
    assert np.array_equal(out.buffers["2.z"], [131073, 262147, 393221])
    assert out.counts == {"2.z": 3}


def test_identity_is_bit_exact():
    plan_ = plan(IDENTITY, 8)
    data = np.array([0.1, -0.0, np.inf, 3.3e38, 1e-44], np.float32)
    out = run_chunk(plan_, float_chunk(data))
    assert out.buffers["0.y"].tobytes() == data.tobytes()


def test_width_conversion_flat_reinterpretation():
    plan_ = plan(load(WIDTH_CHAIN_DOC), 4)
    data = np.arange(8, dtype=np.float32)  # 4 float2 elements
    out = run_chunk(plan_, Chunk(0, {"0.x": data}, {"0.x": 4}))
    assert np.array_equal(out.buffers["1.q"], data * 2 + 1)
    assert out.counts["1.q"] == 2


def test_parallel_bands_bit_identical(table2_program):
    plan_ = plan(table2_program, 512)
    zin = np.random.default_rng(0).standard_normal(1024).astype(np.float32)
    chunk = Chunk(0, {"0.z": zin}, {"0.z": 512})
    serial = run_chunk(plan_, chunk, parallelism=1)
    banded = run_chunk(plan_, chunk, parallelism=4)
    assert serial.buffers["2.z"].tobytes() == banded.buffers["2.z"].tobytes()


def test_runtime_error_annotated(table2_program):
    doc = one_node_doc("int i=get_global_id(0);\ny[i]=x[i+1];\n",
                       {"x": {"data": "float", "type": "InputPoint"},
                        "y": {"data": "float", "type": "OutputPoint"}})
    plan_ = plan(load(doc), 4)
    with pytest.raises(EngineRuntimeError) as err:
        run_chunk(plan_, float_chunk([1, 2], index=5))
    assert err.value.instance == 0
    assert err.value.chunk == 5
    assert err.value.work_item == 1


def test_wrong_dtype_stream_rejected():
    plan_ = plan(IDENTITY, 4)
    bad = Chunk(0, {"0.x": np.zeros(4, np.float64)}, {"0.x": 4})
    with pytest.raises(EngineRuntimeError, match="carries float64"):
        run_chunk(plan_, bad)


def test_missing_stream_rejected():
    plan_ = plan(IDENTITY, 4)
    with pytest.raises(EngineRuntimeError, match="missing input stream '0.x'"):
        run_chunk(plan_, Chunk(0, {}, {}))


def test_short_chunk_must_stay_integral():
    plan_ = plan(load(WIDTH_CHAIN_DOC), 4)
    with pytest.raises(EngineRuntimeError, match="not integral"):
        run_chunk(plan_, Chunk(0, {"0.x": np.zeros(6, np.float32)},
                               {"0.x": 3}))


# -- run_stream -------------------------------------------------------------------

def test_ten_chunks_order_preserved():
    plan_ = plan(IDENTITY, 16)
    data = np.arange(160, dtype=np.float32)
    result = run_stream(plan_, chunk_arrays(plan_, {"0.x": data}))
    assert [c.index for c in result.chunks] == list(range(10))
    out = np.concatenate([c.buffers["0.y"] for c in result.chunks])
    assert np.array_equal(out, data)
    assert result.total_work_items == 160
    assert len(result.timings) == 10


def test_empty_stream():
    plan_ = plan(IDENTITY, 16)
    result = run_stream(plan_, chunk_arrays(plan_, {"0.x": np.zeros(0, np.float32)}))
    assert result.chunks == []
    assert result.total_work_items == 0


def test_chunk_invariance_for_pointwise_graph(table2_program):
    streams = random_input_for(table2_program, 3000, seed=11)
    outputs = []
    for w in (64, 4096, 3000):
        plan_ = plan(table2_program, w)
        result = run_stream(plan_, chunk_arrays(plan_, dict(streams)))
        outputs.append(np.concatenate(
            [c.buffers["2.z"] for c in result.chunks]).tobytes())
    assert outputs[0] == outputs[1] == outputs[2]


@pytest.mark.parametrize("pool", ["thread", "process"])
def test_workers_bit_identical(table2_program, pool):
    plan_ = plan(table2_program, 64)
    streams = random_input_for(table2_program, 1000, seed=12)
    serial = run_stream(plan_, chunk_arrays(plan_, dict(streams)))
    parallel = run_stream(plan_, chunk_arrays(plan_, dict(streams)),
                          workers=3, pool=pool)
    a = np.concatenate([c.buffers["2.z"] for c in serial.chunks])
    b = np.concatenate([c.buffers["2.z"] for c in parallel.chunks])
    assert a.tobytes() == b.tobytes()
    assert [c.index for c in parallel.chunks] == [c.index for c in serial.chunks]


def test_conservation_for_width_preserving_graph(table2_program):
    plan_ = plan(table2_program, 128)
    streams = random_input_for(table2_program, 777, seed=13)
    result = run_stream(plan_, chunk_arrays(plan_, dict(streams)))
    in_scalars = len(streams["0.z"])
    out_scalars = sum(len(c.buffers["2.z"]) for c in result.chunks)
    assert out_scalars == in_scalars // 2  # float2 in, float out


def test_writer_receives_chunks_in_order():
    plan_ = plan(IDENTITY, 8)
    seen = []
    run_stream(plan_, chunk_arrays(plan_, {"0.x": np.arange(50, np.float32(1)).astype(np.float32)}),
               writer=lambda c: seen.append(c.index), workers=2)
    assert seen == sorted(seen)


def test_non_final_short_chunk_rejected():
    plan_ = plan(IDENTITY, 8)
    chunks = [float_chunk(np.zeros(3, np.float32), index=0),
              float_chunk(np.zeros(8, np.float32), index=1)]
    with pytest.raises(EngineRuntimeError, match="not the final chunk"):
        run_stream(plan_, iter(chunks))


def test_out_of_order_reader_rejected():
    plan_ = plan(IDENTITY, 8)
    chunks = [float_chunk(np.zeros(8, np.float32), index=1)]
    with pytest.raises(EngineRuntimeError, match="out of order"):
        run_stream(plan_, iter(chunks))


def test_failure_names_the_chunk():
    doc = one_node_doc(
        "int i=get_global_id(0);\ny[i] = 1 / x[i];\n",
        {"x": {"data": "int", "type": "InputPoint"},
         "y": {"data": "int", "type": "OutputPoint"}})
    plan_ = plan(load(doc), 4)
    data = np.ones(12, np.int32)
    data[9] = 0  # chunk 2
    chunks = chunk_arrays(plan_, {"0.x": data})
    with pytest.raises(EngineRuntimeError) as err:
        run_stream(plan_, chunks)
    assert err.value.chunk == 2


# -- race checking ----------------------------------------------------------------

def test_adder_graph_race_free(table2_program):
    plan_ = plan(table2_program, 8)
    streams = random_input_for(table2_program, 8, seed=14)
    chunk = Chunk(0, streams, {"0.z": 8})
    assert race_check(plan_, chunk) == []


def test_single_cell_write_races():
    doc = one_node_doc("int i=get_global_id(0);\ny[0]=x[i];\n",
                       {"x": {"data": "float", "type": "InputPoint"},
                        "y": {"data": "float", "type": "OutputPoint"}})
    plan_ = plan(load(doc), 2)
    races = race_check(plan_, float_chunk([1.0, 2.0]))
    assert len(races) == 1
    assert races[0].point == "y"
    assert races[0].scalar_index == 0
    assert races[0].work_items == (0, 1)


def test_component_writes_do_not_false_alarm():
    doc = one_node_doc(
        "int i=get_global_id(0);\ny[i].x = x[i];\ny[i].y = x[i];\n",
        {"x": {"data": "float", "type": "InputPoint"},
         "y": {"data": "float2", "type": "OutputPoint"}})
    plan_ = plan(load(doc), 4)
    assert race_check(plan_, float_chunk([1, 2, 3, 4])) == []


def test_dft8_leaf_race_free():
    from dpp.apps.fft import leaf_program
    prog = leaf_program(3)
    plan_ = plan(prog, 16)
    data = np.random.default_rng(15).standard_normal(16 * 16).astype(np.float32)
    chunk = Chunk(0, {"0.x": data}, {"0.x": 16})
    assert race_check(plan_, chunk) == []

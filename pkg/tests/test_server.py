from __future__ import annotations

import base64
import json
import socket

import numpy as np
import pytest
import requests

from conftest import make_table2_doc
from dpp import wire
from dpp.server import PlatformServer, ServerConfig

TABLE2 = json.dumps(make_table2_doc()).encode()


@pytest.fixture
def server():
    with PlatformServer(ServerConfig()) as srv:
        yield srv


def test_status_snapshot(server):
    before = requests.get(f"{server.url}/v1/status").json()
    assert before["stored_programs"] == 0
    assert before["workers"] >= 1
    requests.post(f"{server.url}/v1/programs", data=TABLE2)
    after = requests.get(f"{server.url}/v1/status").json()
    assert after["stored_programs"] == 1


def test_upload_idempotent(server):
    first = requests.post(f"{server.url}/v1/programs", data=TABLE2)
    assert first.status_code == 201
    digest = first.json()["program_id"]
    assert len(digest) == 64
    second = requests.post(f"{server.url}/v1/programs", data=TABLE2)
    assert second.status_code == 200
    assert second.json()["program_id"] == digest


def test_upload_cyclic_program_rejected(server):
    doc = json.loads(TABLE2)
    doc["arrows"].append({"output": [2, "z"], "input": [1, "x"]})
    # also free 1.x by removing the fan->rot arrow
    doc["arrows"].pop(2)
    resp = requests.post(f"{server.url}/v1/programs", data=json.dumps(doc))
    assert resp.status_code == 400
    violations = resp.json()["violations"]
    assert any(v["kind"] == "cycle" for v in violations)


def test_upload_malformed_document(server):
    resp = requests.post(f"{server.url}/v1/programs", data=b"{broken")
    assert resp.status_code == 400
    assert "malformed JSON" in resp.json()["error"]


def test_content_addressed_get(server):
    import hashlib
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    stored = requests.get(f"{server.url}/v1/programs/{digest}")
    assert stored.status_code == 200
    assert hashlib.sha256(stored.content).hexdigest() == digest


def test_get_unknown_program(server):
    resp = requests.get(f"{server.url}/v1/programs/{'0' * 64}")
    assert resp.status_code == 404


def test_create_run_unknown_program(server):
    resp = requests.post(f"{server.url}/v1/programs/{'1' * 64}/runs", json={})
    assert resp.status_code == 404


def test_run_limit_gives_409():
    with PlatformServer(ServerConfig(max_runs=3)) as srv:
        digest = requests.post(f"{srv.url}/v1/programs",
                               data=TABLE2).json()["program_id"]
        for _ in range(3):
            assert requests.post(f"{srv.url}/v1/programs/{digest}/runs",
                                 json={}).status_code == 201
        resp = requests.post(f"{srv.url}/v1/programs/{digest}/runs", json={})
        assert resp.status_code == 409


def test_run_lifecycle_and_data_plane(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    created = requests.post(f"{server.url}/v1/programs/{digest}/runs",
                            json={"chunk_size": 2})
    assert created.status_code == 201
    info = created.json()
    run_id = info["run_id"]

    status = requests.get(f"{server.url}/v1/runs/{run_id}").json()
    assert status["state"] == "waiting"
    assert (status["chunks_in"], status["chunks_out"]) == (0, 0)

    conn = socket.create_connection(("127.0.0.1", info["data_port"]), timeout=10)
    conn.sendall(wire.encode_handshake(run_id))
    ok, _ = wire.read_reply(conn)
    assert ok

    zin = np.array([1, 2, 3, 4, 5, 6], np.float32)  # 3 float2 elements
    conn.sendall(wire.encode_data_frame("0.z", 0, 2, zin[:4].tobytes()))
    conn.sendall(wire.encode_data_frame("0.z", 1, 1, zin[4:].tobytes()))
    conn.sendall(wire.encode_end_frame("0.z"))

    frames = [wire.read_frame(conn) for _ in range(3)]
    conn.close()
    assert [f.kind for f in frames] == [wire.DATA, wire.DATA, wire.END]
    out = np.concatenate([np.frombuffer(f.payload, np.float32)
                          for f in frames[:2]])
    assert np.array_equal(out, [131073, 262147, 393221])

    status = requests.get(f"{server.url}/v1/runs/{run_id}").json()
    assert status["state"] == "done"
    assert status["chunks_in"] == 2
    assert status["chunks_out"] == 2
    assert status["work_items"] == 9  # 3 instances x 3 elements


def test_handshake_for_unknown_run(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    info = requests.post(f"{server.url}/v1/programs/{digest}/runs",
                         json={}).json()
    conn = socket.create_connection(("127.0.0.1", info["data_port"]), timeout=10)
    conn.sendall(wire.encode_handshake("f" * 32))
    ok, message = wire.read_reply(conn)
    assert not ok
    assert "unknown run" in message
    conn.close()


def test_empty_stream_immediate_end(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    info = requests.post(f"{server.url}/v1/programs/{digest}/runs",
                         json={}).json()
    conn = socket.create_connection(("127.0.0.1", info["data_port"]), timeout=10)
    conn.sendall(wire.encode_handshake(info["run_id"]))
    assert wire.read_reply(conn)[0]
    conn.sendall(wire.encode_end_frame("0.z"))
    frame = wire.read_frame(conn)
    assert frame.kind == wire.END and frame.stream == "2.z"
    conn.close()
    status = requests.get(f"{server.url}/v1/runs/{info['run_id']}").json()
    assert status["state"] == "done"
    assert status["work_items"] == 0


def test_socket_close_mid_stream_fails_session(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    info = requests.post(f"{server.url}/v1/programs/{digest}/runs",
                         json={}).json()
    conn = socket.create_connection(("127.0.0.1", info["data_port"]), timeout=10)
    conn.sendall(wire.encode_handshake(info["run_id"]))
    assert wire.read_reply(conn)[0]
    conn.sendall(wire.encode_data_frame("0.z", 0, 1,
                                        np.zeros(2, np.float32).tobytes()))
    conn.close()
    deadline = __import__("time").time() + 5
    while __import__("time").time() < deadline:
        status = requests.get(f"{server.url}/v1/runs/{info['run_id']}").json()
        if status["state"] == "failed":
            break
        __import__("time").sleep(0.05)
    assert status["state"] == "failed"
    assert "error" in status


def test_protocol_violation_answered_with_error_frame(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    info = requests.post(f"{server.url}/v1/programs/{digest}/runs",
                         json={}).json()
    conn = socket.create_connection(("127.0.0.1", info["data_port"]), timeout=10)
    conn.sendall(wire.encode_handshake(info["run_id"]))
    assert wire.read_reply(conn)[0]
    conn.sendall(wire.encode_data_frame("9.q", 0, 1,
                                        np.zeros(2, np.float32).tobytes()))
    frame = wire.read_frame(conn)
    assert frame.kind == wire.ERROR
    assert "unknown stream" in frame.message
    conn.close()


def test_cancel_run(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    info = requests.post(f"{server.url}/v1/programs/{digest}/runs",
                         json={}).json()
    resp = requests.delete(f"{server.url}/v1/runs/{info['run_id']}")
    assert resp.status_code == 200
    assert resp.json()["state"] == "failed"
    assert requests.delete(f"{server.url}/v1/runs/{'e' * 32}").status_code == 404


def test_store_survives_restart(tmp_path):
    config = ServerConfig(store_dir=tmp_path / "store")
    with PlatformServer(config) as srv:
        digest = requests.post(f"{srv.url}/v1/programs",
                               data=TABLE2).json()["program_id"]
    with PlatformServer(ServerConfig(store_dir=tmp_path / "store")) as srv:
        resp = requests.get(f"{srv.url}/v1/programs/{digest}")
        assert resp.status_code == 200
        status = requests.get(f"{srv.url}/v1/status").json()
        assert status["stored_programs"] == 1


def test_inline_run(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    zin = np.array([1, 2, 3, 4], np.float32)
    resp = requests.post(
        f"{server.url}/v1/programs/{digest}/runs:inline",
        json={"inputs": {"0.z": base64.b64encode(zin.tobytes()).decode()}})
    assert resp.status_code == 200
    out = np.frombuffer(base64.b64decode(resp.json()["outputs"]["2.z"]),
                        np.float32)
    assert np.array_equal(out, [131073, 262147])


def test_inline_run_caps_input_size(server):
    digest = requests.post(f"{server.url}/v1/programs",
                           data=TABLE2).json()["program_id"]
    big = base64.b64encode(b"\x00" * (5 << 20)).decode()
    resp = requests.post(f"{server.url}/v1/programs/{digest}/runs:inline",
                         json={"inputs": {"0.z": big}})
    assert resp.status_code == 413


def test_data_port_range_respected():
    config = ServerConfig(data_port_range=(29510, 29519))
    with PlatformServer(config) as srv:
        digest = requests.post(f"{srv.url}/v1/programs",
                               data=TABLE2).json()["program_id"]
        info = requests.post(f"{srv.url}/v1/programs/{digest}/runs",
                             json={}).json()
        assert 29510 <= info["data_port"] <= 29519

"""Client library: run programs in-process or against a remote server.

Both backends share one contract: ``run(backend, program, inputs)`` takes a
:class:`~dpp.wire.StreamFile` per free input point (keyed by stream name,
``"<instance>.<point>"``) and returns one per free output point.  The remote
path skips the upload when the server already stores the program id, then
follows the run protocol: create run over HTTP, stream chunks over TCP.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass
from urllib.parse import urlparse

import numpy as np
import requests

from .engine import DEFAULT_CHUNK_SIZE, chunk_arrays, plan, run_stream
from .errors import ClientError, DppError, ProtocolError
from .model import Program, program_id, serialize_program
from .types import Direction
from . import wire

__all__ = ["LocalBackend", "RemoteBackend", "run"]


@dataclass(frozen=True)
class LocalBackend:
    """In-process execution on the engine."""

    parallelism: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE
    pool: str = "thread"  # "thread" or "process" when parallelism > 1


@dataclass(frozen=True)
class RemoteBackend:
    """Execution against a platform server."""

    base_url: str
    chunk_size: int = DEFAULT_CHUNK_SIZE
    connect_timeout: float = 10.0
    stream_timeout: float = 120.0


def _checked_inputs(program: Program,
                    inputs: dict[str, wire.StreamFile]) -> dict[str, np.ndarray]:
    from .model import free_points

    free_in = [fp for fp in free_points(program)
               if fp.direction is Direction.INPUT]
    wanted = {fp.stream: fp for fp in free_in}
    missing = wanted.keys() - inputs.keys()
    if missing:
        raise ClientError(f"missing input stream {sorted(missing)[0]!r} "
                          f"(free input point)")
    extra = inputs.keys() - wanted.keys()
    if extra:
        raise ClientError(f"{sorted(extra)[0]!r} is not a free input point")
    counts = set()
    arrays: dict[str, np.ndarray] = {}
    for name, fp in wanted.items():
        sf = inputs[name]
        if sf.data != fp.data:
            raise ClientError(f"stream {name!r} carries {sf.data}, the free "
                              f"point wants {fp.data}")
        counts.add(sf.count)
        arrays[name] = sf.values
    if len(counts) > 1:
        raise ClientError(f"input streams disagree on element count: "
                          f"{sorted(counts)}")
    return arrays


def run(backend: LocalBackend | RemoteBackend, program: Program,
        inputs: dict[str, wire.StreamFile]) -> dict[str, wire.StreamFile]:
    """Execute ``program`` over whole input streams; blocking."""
    arrays = _checked_inputs(program, inputs)
    if isinstance(backend, LocalBackend):
        return _run_local(backend, program, arrays)
    return _run_remote(backend, program, arrays)


def _run_local(backend: LocalBackend, program: Program,
               arrays: dict[str, np.ndarray]) -> dict[str, wire.StreamFile]:
    plan_ = plan(program, backend.chunk_size)
    parts: dict[str, list[np.ndarray]] = {fp.stream: []
                                          for fp in plan_.free_outputs}

    def collect(chunk):
        for name, buf in chunk.buffers.items():
            parts[name].append(buf)

    run_stream(plan_, chunk_arrays(plan_, arrays), writer=collect,
               workers=backend.parallelism, pool=backend.pool)
    return {
        fp.stream: wire.StreamFile(
            fp.data,
            np.concatenate(parts[fp.stream]) if parts[fp.stream]
            else np.zeros(0, fp.data.dtype))
        for fp in plan_.free_outputs
    }


# ---------------------------------------------------------------------------
# remote path

def _http(method: str, url: str, backend: RemoteBackend, **kw):
    try:
        resp = requests.request(method, url, timeout=backend.connect_timeout,
                                **kw)
    except requests.exceptions.RequestException as exc:
        raise ClientError(f"cannot reach server: {exc}", retriable=True) from exc
    if resp.status_code >= 500:
        raise ClientError(f"server error {resp.status_code}: {resp.text}",
                          retriable=True)
    return resp


def ensure_uploaded(backend: RemoteBackend, program: Program) -> str:
    """Upload unless the server already stores this program id."""
    digest = program_id(program)
    head = _http("GET", f"{backend.base_url}/v1/programs/{digest}", backend)
    if head.status_code == 200:
        return digest
    resp = _http("POST", f"{backend.base_url}/v1/programs", backend,
                 data=serialize_program(program),
                 headers={"Content-Type": "application/json"})
    if resp.status_code not in (200, 201):
        raise ClientError(f"upload rejected ({resp.status_code}): {resp.text}")
    got = resp.json().get("program_id")
    if got != digest:
        raise ClientError(f"server stored id {got}, expected {digest}")
    return digest


def _run_remote(backend: RemoteBackend, program: Program,
                arrays: dict[str, np.ndarray]) -> dict[str, wire.StreamFile]:
    from .model import free_points

    digest = ensure_uploaded(backend, program)
    resp = _http("POST", f"{backend.base_url}/v1/programs/{digest}/runs",
                 backend, json={"chunk_size": backend.chunk_size})
    if resp.status_code != 201:
        raise ClientError(f"create-run rejected ({resp.status_code}): "
                          f"{resp.text}")
    info = resp.json()
    host = info.get("data_host") or urlparse(backend.base_url).hostname
    port = info["data_port"]
    run_id = info["run_id"]

    free = free_points(program)
    free_in = [fp for fp in free if fp.direction is Direction.INPUT]
    free_out = [fp for fp in free if fp.direction is Direction.OUTPUT]
    counts = {len(arr) // fp.data.width for fp, arr in
              ((fp, arrays[fp.stream]) for fp in free_in)}
    total = counts.pop() if counts else 0

    try:
        conn = socket.create_connection((host, port),
                                        timeout=backend.connect_timeout)
    except OSError as exc:
        raise ClientError(f"cannot open data plane {host}:{port}: {exc}",
                          retriable=True) from exc

    send_error: list[Exception] = []
    try:
        conn.settimeout(backend.stream_timeout)
        conn.sendall(wire.encode_handshake(run_id))
        ok, message = wire.read_reply(conn)
        if not ok:
            raise ClientError(f"handshake refused: {message}")

        sender = threading.Thread(
            target=_send_inputs,
            args=(conn, free_in, arrays, total, backend.chunk_size, send_error),
            daemon=True, name="dpp-send")
        sender.start()

        outputs = _collect_outputs(conn, free_out)
        sender.join(timeout=backend.stream_timeout)
        if send_error:
            raise send_error[0]
        return outputs
    except (OSError, ProtocolError) as exc:
        if send_error:
            exc = send_error[0]
        raise ClientError(f"data plane failed: {exc}", retriable=True) from exc
    finally:
        try:
            conn.close()
        except OSError:
            pass


def _send_inputs(conn, free_in, arrays, total, chunk_size, errors) -> None:
    try:
        n_chunks = (total + chunk_size - 1) // chunk_size
        for index in range(n_chunks):
            lo = index * chunk_size
            hi = min(lo + chunk_size, total)
            for fp in sorted(free_in, key=lambda f: f.stream):
                arr = arrays[fp.stream][lo * fp.data.width:hi * fp.data.width]
                payload = arr.astype(arr.dtype.newbyteorder("<"),
                                     copy=False).tobytes()
                conn.sendall(wire.encode_data_frame(fp.stream, index,
                                                    hi - lo, payload))
        for fp in sorted(free_in, key=lambda f: f.stream):
            conn.sendall(wire.encode_end_frame(fp.stream))
    except Exception as exc:  # noqa: BLE001 - reported by the main thread
        errors.append(exc)
        try:
            conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass


def _collect_outputs(conn, free_out) -> dict[str, wire.StreamFile]:
    by_stream = {fp.stream: fp for fp in free_out}
    parts: dict[str, list[np.ndarray]] = {fp.stream: [] for fp in free_out}
    next_index = {fp.stream: 0 for fp in free_out}
    ended: set[str] = set()
    while ended != by_stream.keys():
        frame = wire.read_frame(conn)
        if frame.kind == wire.ERROR:
            raise ClientError(f"run failed: {frame.message}")
        if frame.kind == wire.END:
            if frame.stream not in by_stream or frame.stream in ended:
                raise ProtocolError(f"unexpected END for {frame.stream!r}")
            ended.add(frame.stream)
            continue
        fp = by_stream.get(frame.stream)
        if fp is None or frame.stream in ended:
            raise ProtocolError(f"unexpected DATA for {frame.stream!r}")
        if frame.index != next_index[frame.stream]:
            raise ProtocolError(
                f"stream {frame.stream!r}: chunk {frame.index} out of order")
        next_index[frame.stream] += 1
        if len(frame.payload) != frame.count * fp.data.nbytes:
            raise ProtocolError(
                f"stream {frame.stream!r}: payload length mismatch")
        parts[frame.stream].append(np.frombuffer(
            frame.payload, dtype=fp.data.dtype.newbyteorder("<")).astype(
            fp.data.dtype, copy=False))
    return {
        fp.stream: wire.StreamFile(
            fp.data,
            np.concatenate(parts[fp.stream]) if parts[fp.stream]
            else np.zeros(0, fp.data.dtype))
        for fp in free_out
    }

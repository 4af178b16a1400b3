"""The platform server: REST-ish control plane plus a TCP data plane.

Control endpoints (JSON over HTTP/1.1):

* ``GET  /v1/status`` — platform snapshot.
* ``POST /v1/programs`` — upload a program document; content-addressed,
  201 on first store, 200 on re-upload, 400 with the validation report.
* ``GET  /v1/programs/{id}`` — the stored canonical document.
* ``POST /v1/programs/{id}/runs`` — create a run; returns the data port.
* ``GET  /v1/runs/{id}`` — run progress snapshot.
* ``DELETE /v1/runs/{id}`` — cancel.
* ``POST /v1/programs/{id}/runs:inline`` — convenience for small runs:
  base64 streams in, base64 streams out (editor use; inputs capped at 4 MiB).

Each run owns one ephemeral TCP port speaking the frame protocol in
:mod:`dpp.wire`; input frames for chunk ``i`` must all arrive before any
frame of chunk ``i+1``.
"""

from __future__ import annotations

import base64
import json
import queue
import re
import socket
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import __version__
from .engine import Chunk, DEFAULT_CHUNK_SIZE, ExecutionPlan, plan, run_stream
from .errors import DppError, PlanError, ProgramFormatError, ProtocolError
from .model import Program, parse_program, program_id, serialize_program, validate
from . import wire

__all__ = ["ServerConfig", "PlatformServer", "serve"]

_HEX_ID = re.compile(r"[0-9a-f]{64}\Z")
_INLINE_INPUT_LIMIT = 4 << 20


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 0
    data_port_range: tuple[int, int] | None = None
    store_dir: str | Path | None = None
    workers: int = 1
    max_runs: int = 16
    accept_timeout: float = 30.0
    socket_timeout: float = 300.0


class ProgramStore:
    """Content-addressed program documents, one ``<digest>.json`` per program."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, bytes] = {}
        self._lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def put(self, program: Program) -> tuple[str, bool]:
        """Store a program; returns (id, created)."""
        digest = program_id(program)
        data = serialize_program(program)
        with self._lock:
            if self.get(digest) is not None:
                return digest, False
            if self.root is None:
                self._memory[digest] = data
            else:
                tmp = self.root / f".{digest}.tmp"
                tmp.write_bytes(data)
                tmp.rename(self.root / f"{digest}.json")
        return digest, True

    def get(self, digest: str) -> bytes | None:
        if not _HEX_ID.match(digest):
            return None
        if self.root is None:
            return self._memory.get(digest)
        path = self.root / f"{digest}.json"
        return path.read_bytes() if path.exists() else None

    def __len__(self) -> int:
        if self.root is None:
            return len(self._memory)
        return sum(1 for _ in self.root.glob("*.json"))


@dataclass
class RunSession:
    run_id: str
    program_digest: str
    plan: ExecutionPlan
    data_port: int
    state: str = "waiting"  # waiting -> running -> done | failed
    chunks_in: int = 0
    chunks_out: int = 0
    work_items: int = 0
    error: str | None = None
    _listener: socket.socket | None = None
    _conn: socket.socket | None = None
    _thread: threading.Thread | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def active(self) -> bool:
        return self.state in ("waiting", "running")

    def snapshot(self) -> dict:
        out = {"run_id": self.run_id, "program_id": self.program_digest,
               "state": self.state, "chunks_in": self.chunks_in,
               "chunks_out": self.chunks_out, "work_items": self.work_items}
        if self.error is not None:
            out["error"] = self.error
        return out

    def fail(self, message: str) -> None:
        with self._lock:
            if self.active:
                self.state = "failed"
                self.error = message

    def cancel(self) -> None:
        self.fail("canceled")
        for sock in (self._conn, self._listener):
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass


class PlatformServer:
    """Owns the program store, the run registry and both network planes."""

    def __init__(self, config: ServerConfig | None = None):
        self.config = config or ServerConfig()
        self.store = ProgramStore(self.config.store_dir)
        self.runs: dict[str, RunSession] = {}
        self._lock = threading.Lock()
        self._http = _make_http_server(self)
        self._http_thread: threading.Thread | None = None

    # -- lifecycle -----------------------------------------------------------
    @property
    def port(self) -> int:
        return self._http.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.port}"

    def start(self) -> "PlatformServer":
        self._http_thread = threading.Thread(
            target=self._http.serve_forever, name="dpp-http", daemon=True)
        self._http_thread.start()
        return self

    def serve_forever(self) -> None:
        self._http.serve_forever()

    def shutdown(self) -> None:
        with self._lock:
            sessions = list(self.runs.values())
        for session in sessions:
            session.cancel()
        self._http.shutdown()
        self._http.server_close()
        if self._http_thread is not None:
            self._http_thread.join(timeout=5)

    def __enter__(self) -> "PlatformServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()

    # -- control-plane operations ---------------------------------------------
    def status(self) -> dict:
        with self._lock:
            active = sum(1 for s in self.runs.values() if s.active)
        return {"version": __version__, "workers": self.config.workers,
                "active_runs": active, "stored_programs": len(self.store)}

    def upload_program(self, body: bytes) -> tuple[int, dict]:
        try:
            program = parse_program(body)
        except ProgramFormatError as exc:
            return 400, {"error": str(exc)}
        report = validate(program)
        if not report.ok:
            return 400, {"error": "program failed validation",
                         "violations": report.to_json()}
        digest, created = self.store.put(program)
        return (201 if created else 200), {"program_id": digest}

    def create_run(self, digest: str, options: dict) -> tuple[int, dict]:
        data = self.store.get(digest)
        if data is None:
            return 404, {"error": f"unknown program {digest!r}"}
        chunk_size = options.get("chunk_size", DEFAULT_CHUNK_SIZE)
        if not isinstance(chunk_size, int) or chunk_size < 1:
            return 400, {"error": "chunk_size must be a positive integer"}
        with self._lock:
            if sum(1 for s in self.runs.values() if s.active) >= self.config.max_runs:
                return 409, {"error": f"too many open runs "
                                      f"(limit {self.config.max_runs})"}
            try:
                plan_ = plan(parse_program(data), chunk_size)
            except (PlanError, ProgramFormatError) as exc:
                return 400, {"error": str(exc)}
            try:
                listener = self._bind_data_port()
            except OSError as exc:
                return 409, {"error": f"no data port available: {exc}"}
            session = RunSession(
                run_id=uuid.uuid4().hex, program_digest=digest, plan=plan_,
                data_port=listener.getsockname()[1], _listener=listener)
            self.runs[session.run_id] = session
        thread = threading.Thread(target=self._data_session, args=(session,),
                                  name=f"dpp-run-{session.run_id[:8]}",
                                  daemon=True)
        session._thread = thread
        thread.start()
        return 201, {"run_id": session.run_id, "data_port": session.data_port,
                     "data_host": self.config.host}

    def run_status(self, run_id: str) -> tuple[int, dict]:
        with self._lock:
            session = self.runs.get(run_id)
        if session is None:
            return 404, {"error": f"unknown run {run_id!r}"}
        return 200, session.snapshot()

    def cancel_run(self, run_id: str) -> tuple[int, dict]:
        with self._lock:
            session = self.runs.get(run_id)
        if session is None:
            return 404, {"error": f"unknown run {run_id!r}"}
        session.cancel()
        return 200, session.snapshot()

    def inline_run(self, digest: str, options: dict) -> tuple[int, dict]:
        data = self.store.get(digest)
        if data is None:
            return 404, {"error": f"unknown program {digest!r}"}
        inputs = options.get("inputs")
        if not isinstance(inputs, dict):
            return 400, {"error": "inputs must be an object of base64 streams"}
        chunk_size = options.get("chunk_size", DEFAULT_CHUNK_SIZE)
        try:
            plan_ = plan(parse_program(data), chunk_size)
        except (PlanError, ProgramFormatError) as exc:
            return 400, {"error": str(exc)}
        streams: dict[str, np.ndarray] = {}
        total = 0
        by_stream = {fp.stream: fp for fp in plan_.free_inputs}
        for name, b64 in inputs.items():
            if name not in by_stream:
                return 400, {"error": f"unknown input stream {name!r}"}
            try:
                raw = base64.b64decode(b64, validate=True)
            except (ValueError, TypeError):
                return 400, {"error": f"stream {name!r} is not valid base64"}
            total += len(raw)
            if total > _INLINE_INPUT_LIMIT:
                return 413, {"error": "inline inputs exceed 4 MiB"}
            fp = by_stream[name]
            if len(raw) % fp.data.nbytes:
                return 400, {"error": f"stream {name!r}: {len(raw)} bytes is "
                                      f"not a whole number of {fp.data} elements"}
            streams[name] = np.frombuffer(
                raw, dtype=fp.data.dtype.newbyteorder("<")).astype(
                fp.data.dtype, copy=False)
        missing = by_stream.keys() - streams.keys()
        if missing:
            return 400, {"error": f"missing input stream {sorted(missing)[0]!r}"}
        from .engine import chunk_arrays
        collected: dict[str, list[np.ndarray]] = {
            fp.stream: [] for fp in plan_.free_outputs}
        try:
            result = run_stream(plan_, chunk_arrays(plan_, streams),
                                writer=lambda chunk: [
                                    collected[name].append(buf)
                                    for name, buf in chunk.buffers.items()])
        except DppError as exc:
            return 400, {"error": str(exc)}
        outputs = {}
        for fp in plan_.free_outputs:
            parts = collected[fp.stream]
            flat = np.concatenate(parts) if parts else \
                np.zeros(0, fp.data.dtype)
            outputs[fp.stream] = base64.b64encode(
                flat.astype(flat.dtype.newbyteorder("<"), copy=False)
                .tobytes()).decode("ascii")
        return 200, {"outputs": outputs,
                     "work_items": result.total_work_items}

    # -- data plane ------------------------------------------------------------
    def _bind_data_port(self) -> socket.socket:
        if self.config.data_port_range is None:
            listener = socket.create_server((self.config.host, 0))
            listener.settimeout(self.config.accept_timeout)
            return listener
        lo, hi = self.config.data_port_range
        for port in range(lo, hi + 1):
            try:
                listener = socket.create_server((self.config.host, port))
            except OSError:
                continue
            listener.settimeout(self.config.accept_timeout)
            return listener
        raise OSError(f"port range {lo}:{hi} exhausted")

    def _data_session(self, session: RunSession) -> None:
        conn: socket.socket | None = None
        try:
            try:
                conn, _addr = session._listener.accept()
            except (socket.timeout, OSError):
                session.fail("no client connected")
                return
            session._conn = conn
            conn.settimeout(self.config.socket_timeout)
            try:
                run_id = wire.read_handshake(conn)
            except ProtocolError as exc:
                conn.sendall(wire.encode_reply(False, str(exc)))
                session.fail(f"bad handshake: {exc}")
                return
            if run_id != session.run_id:
                conn.sendall(wire.encode_reply(False,
                                               f"unknown run {run_id!r}"))
                session.fail(f"handshake for wrong run {run_id!r}")
                return
            conn.sendall(wire.encode_reply(True, "ready"))
            with session._lock:
                if session.state != "waiting":
                    return
                session.state = "running"
            self._pump(session, conn)
        except (ProtocolError, OSError, DppError) as exc:
            session.fail(str(exc))
            if conn is not None:
                try:
                    conn.sendall(wire.encode_error_frame(str(exc)))
                except OSError:
                    pass
        finally:
            for sock in (conn, session._listener):
                if sock is not None:
                    try:
                        sock.close()
                    except OSError:
                        pass

    def _pump(self, session: RunSession, conn: socket.socket) -> None:
        plan_ = session.plan
        incoming: queue.Queue = queue.Queue(maxsize=max(2, 2 * self.config.workers))
        reader_error: list[Exception] = []

        def read_loop() -> None:
            try:
                for chunk in _assemble_chunks(session, plan_, conn):
                    incoming.put(chunk)
            except Exception as exc:  # noqa: BLE001 - forwarded to main thread
                reader_error.append(exc)
            finally:
                incoming.put(None)

        reader = threading.Thread(target=read_loop, daemon=True,
                                  name=f"dpp-read-{session.run_id[:8]}")
        reader.start()

        def chunks():
            while True:
                item = incoming.get()
                if item is None:
                    if reader_error:
                        raise reader_error[0]
                    return
                yield item

        def send_chunk(chunk: Chunk) -> None:
            for name in sorted(chunk.buffers):
                buf = chunk.buffers[name]
                payload = buf.astype(buf.dtype.newbyteorder("<"),
                                     copy=False).tobytes()
                conn.sendall(wire.encode_data_frame(
                    name, chunk.index, chunk.counts[name], payload))
            session.chunks_out += 1

        result = run_stream(plan_, chunks(), writer=send_chunk,
                            workers=self.config.workers, pool="thread")
        session.work_items = result.total_work_items
        for fp in plan_.free_outputs:
            conn.sendall(wire.encode_end_frame(fp.stream))
        reader.join(timeout=5)
        with session._lock:
            if session.state == "running":
                session.state = "done"


def _assemble_chunks(session: RunSession, plan_: ExecutionPlan, conn):
    """Yield complete input chunks from the frame stream.

    All of chunk ``i``'s frames (one DATA per free input stream) must arrive
    before any frame of chunk ``i+1``; END must come once per stream.
    """
    expect = {fp.stream: fp for fp in plan_.free_inputs}
    ended: set[str] = set()
    index = 0
    pending: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    while True:
        frame = wire.read_frame(conn)
        if frame.kind == wire.ERROR:
            raise ProtocolError(f"client error: {frame.message}")
        if frame.kind == wire.END:
            if frame.stream not in expect:
                raise ProtocolError(f"END for unknown stream {frame.stream!r}")
            if frame.stream in ended:
                raise ProtocolError(f"duplicate END for {frame.stream!r}")
            if pending:
                raise ProtocolError(
                    f"END for {frame.stream!r} with chunk {index} incomplete")
            ended.add(frame.stream)
            if ended == expect.keys():
                return
            continue
        # DATA
        if frame.stream not in expect:
            raise ProtocolError(f"DATA for unknown stream {frame.stream!r}")
        if frame.stream in ended:
            raise ProtocolError(f"DATA after END for {frame.stream!r}")
        if frame.index != index:
            raise ProtocolError(
                f"stream {frame.stream!r} sent chunk {frame.index}, "
                f"expected {index}")
        if frame.stream in pending:
            raise ProtocolError(
                f"duplicate DATA for {frame.stream!r} in chunk {index}")
        fp = expect[frame.stream]
        if len(frame.payload) != frame.count * fp.data.nbytes:
            raise ProtocolError(
                f"stream {frame.stream!r}: payload is {len(frame.payload)} "
                f"bytes for {frame.count} {fp.data} elements")
        pending[frame.stream] = np.frombuffer(
            frame.payload, dtype=fp.data.dtype.newbyteorder("<")).astype(
            fp.data.dtype, copy=False)
        counts[frame.stream] = frame.count
        if pending.keys() == expect.keys():
            session.chunks_in += 1
            yield Chunk(index, pending, counts)
            pending, counts = {}, {}
            index += 1


# ---------------------------------------------------------------------------
# HTTP plumbing

_ROUTES = [
    ("GET", re.compile(r"/v1/status\Z"), "_h_status"),
    ("POST", re.compile(r"/v1/programs\Z"), "_h_upload"),
    ("GET", re.compile(r"/v1/programs/(?P<digest>[0-9a-f]{64})\Z"), "_h_get_program"),
    ("POST", re.compile(r"/v1/programs/(?P<digest>[0-9a-f]{64})/runs\Z"), "_h_create_run"),
    ("POST", re.compile(r"/v1/programs/(?P<digest>[0-9a-f]{64})/runs:inline\Z"), "_h_inline"),
    ("GET", re.compile(r"/v1/runs/(?P<run_id>[0-9a-f]{32})\Z"), "_h_run_status"),
    ("DELETE", re.compile(r"/v1/runs/(?P<run_id>[0-9a-f]{32})\Z"), "_h_cancel"),
]


def _make_http_server(platform: PlatformServer) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = f"dpp/{__version__}"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, status: int, body: bytes,
                        content_type: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _body(self) -> bytes:
            length = int(self.headers.get("Content-Length", "0"))
            return self.rfile.read(length) if length else b""

        def _json_body(self) -> dict | None:
            raw = self._body()
            if not raw:
                return {}
            try:
                parsed = json.loads(raw)
            except json.JSONDecodeError:
                return None
            return parsed if isinstance(parsed, dict) else None

        def _dispatch(self, method: str) -> None:
            for verb, pattern, name in _ROUTES:
                if verb != method:
                    continue
                match = pattern.match(self.path)
                if match:
                    getattr(self, name)(**match.groupdict())
                    return
            self._send_json(404, {"error": f"no route for {method} {self.path}"})

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        def do_DELETE(self):
            self._dispatch("DELETE")

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods",
                             "GET, POST, DELETE, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        # -- handlers ------------------------------------------------------
        def _h_status(self):
            self._send_json(200, platform.status())

        def _h_upload(self):
            status, payload = platform.upload_program(self._body())
            self._send_json(status, payload)

        def _h_get_program(self, digest: str):
            data = platform.store.get(digest)
            if data is None:
                self._send_json(404, {"error": f"unknown program {digest!r}"})
            else:
                self._send_bytes(200, data, "application/json")

        def _h_create_run(self, digest: str):
            body = self._json_body()
            if body is None:
                self._send_json(400, {"error": "body must be a JSON object"})
                return
            status, payload = platform.create_run(digest, body)
            self._send_json(status, payload)

        def _h_inline(self, digest: str):
            body = self._json_body()
            if body is None:
                self._send_json(400, {"error": "body must be a JSON object"})
                return
            status, payload = platform.inline_run(digest, body)
            self._send_json(status, payload)

        def _h_run_status(self, run_id: str):
            status, payload = platform.run_status(run_id)
            self._send_json(status, payload)

        def _h_cancel(self, run_id: str):
            status, payload = platform.cancel_run(run_id)
            self._send_json(status, payload)

    return ThreadingHTTPServer((platform.config.host, platform.config.port),
                               Handler)


def serve(config: ServerConfig | None = None) -> PlatformServer:
    """Create and start a server; callers own shutdown."""
    return PlatformServer(config).start()

"""Command-line front end.

Exit codes are a stable scripting contract: 0 success, 1 validation error,
2 I/O error, 3 protocol or runtime error.  ``DPP_SERVER`` provides the
default ``--server`` URL.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .client import LocalBackend, RemoteBackend, run
from .engine import DEFAULT_CHUNK_SIZE
from .errors import ClientError, DppError, ProgramFormatError
from .model import parse_program, program_id, validate
from .types import Direction
from .wire import StreamFile

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_RUNTIME = 3


class _CliFailure(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _load_program(path: str):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise _CliFailure(EXIT_IO, f"cannot read {path}: {exc}") from exc
    try:
        return parse_program(raw)
    except ProgramFormatError as exc:
        raise _CliFailure(EXIT_VALIDATION, f"{path}: {exc}") from exc


def _parse_mapping(pairs: list[str], flag: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise _CliFailure(EXIT_IO, f"{flag} expects STREAM=FILE, got {pair!r}")
        stream, path = pair.split("=", 1)
        out[stream] = path
    return out


def _backend(args) -> LocalBackend | RemoteBackend:
    chunk = getattr(args, "chunk", None) or DEFAULT_CHUNK_SIZE
    server = getattr(args, "server", None)
    if server:
        return RemoteBackend(server.rstrip("/"), chunk_size=chunk)
    par = getattr(args, "par", None) or 1
    return LocalBackend(parallelism=par, chunk_size=chunk,
                        pool=getattr(args, "pool", "thread"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args) -> int:
    program = _load_program(args.program)
    report = validate(program)
    if report.ok:
        print("ok")
        return EXIT_OK
    print(report)
    return EXIT_VALIDATION


def cmd_id(args) -> int:
    print(program_id(_load_program(args.program)))
    return EXIT_OK


def cmd_run(args) -> int:
    program = _load_program(args.program)
    report = validate(program)
    if not report.ok:
        print(report, file=sys.stderr)
        return EXIT_VALIDATION
    in_map = _parse_mapping(args.inputs, "--in")
    out_map = _parse_mapping(args.outputs, "--out")

    inputs = {}
    for stream, path in in_map.items():
        try:
            inputs[stream] = StreamFile.load(path)
        except (OSError, DppError, ValueError) as exc:
            raise _CliFailure(EXIT_IO, f"cannot load stream {path}: {exc}")

    from .model import free_points
    free_out = {fp.stream for fp in free_points(program)
                if fp.direction is Direction.OUTPUT}
    missing = free_out - out_map.keys()
    if missing:
        raise _CliFailure(
            EXIT_VALIDATION,
            f"no --out mapping for free output {sorted(missing)[0]!r}")
    extra = out_map.keys() - free_out
    if extra:
        raise _CliFailure(
            EXIT_VALIDATION, f"{sorted(extra)[0]!r} is not a free output point")

    try:
        outputs = run(_backend(args), program, inputs)
    except ClientError as exc:
        raise _CliFailure(EXIT_RUNTIME, str(exc))
    for stream, path in out_map.items():
        try:
            outputs[stream].save(path)
        except OSError as exc:
            raise _CliFailure(EXIT_IO, f"cannot write {path}: {exc}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import PlatformServer, ServerConfig

    port_range = None
    if args.data_port_range:
        try:
            lo, hi = args.data_port_range.split(":")
            port_range = (int(lo), int(hi))
        except ValueError:
            raise _CliFailure(EXIT_IO, "--data-port-range expects LO:HI")
    config = ServerConfig(host=args.host, port=args.port,
                          data_port_range=port_range,
                          store_dir=args.store_dir, workers=args.workers)
    server = PlatformServer(config)
    print(f"listening on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_info(args) -> int:
    import requests

    if not args.server:
        raise _CliFailure(EXIT_IO, "--server (or DPP_SERVER) is required")
    try:
        resp = requests.get(f"{args.server.rstrip('/')}/v1/status", timeout=10)
        resp.raise_for_status()
    except requests.exceptions.RequestException as exc:
        raise _CliFailure(EXIT_RUNTIME, f"cannot reach server: {exc}")
    for key, value in resp.json().items():
        print(f"{key}: {value}")
    return EXIT_OK


def cmd_fft(args) -> int:
    from .apps.fft import FftPlan, fft

    try:
        stream = StreamFile.load(args.infile)
    except (OSError, DppError, ValueError) as exc:
        raise _CliFailure(EXIT_IO, f"cannot load {args.infile}: {exc}")
    if stream.data.name != "float2":
        raise _CliFailure(EXIT_IO, f"fft expects a float2 stream, got "
                                   f"{stream.data.name}")
    signal = stream.values.view(np.complex64)
    if len(signal) != args.n:
        raise _CliFailure(EXIT_IO, f"stream has {len(signal)} samples, "
                                   f"--n is {args.n}")
    try:
        result = fft(signal, FftPlan(args.n, args.k), _backend(args))
    except (ValueError, DppError) as exc:
        raise _CliFailure(EXIT_RUNTIME, str(exc))
    StreamFile.from_values("float2",
                           result.view(np.float32)).save(args.outfile)
    return EXIT_OK


def cmd_fft_bench(args) -> int:
    from .apps.fft import fft_bench, parse_sizes

    try:
        sizes = parse_sizes(args.sizes)
        ks = [int(k) for k in args.k.split(",")]
    except ValueError as exc:
        raise _CliFailure(EXIT_IO, f"bad benchmark spec: {exc}")
    rows = fft_bench(sizes, ks, backend=_backend(args), repeats=args.repeats)
    print("bytes,k,seconds,backend")
    for row in rows:
        print(row.csv())
    return EXIT_OK


def cmd_imgc(args) -> int:
    from .apps import imgc

    if args.action == "compress":
        try:
            image = imgc.read_ppm(Path(args.infile))
        except (OSError, ValueError) as exc:
            raise _CliFailure(EXIT_IO, f"cannot read {args.infile}: {exc}")
        try:
            compressed = imgc.compress(image, args.codebook, args.seed,
                                       backend=_backend(args))
        except (ValueError, DppError) as exc:
            raise _CliFailure(EXIT_RUNTIME, str(exc))
        compressed.save(args.outfile)
        ratio = len(compressed.to_bytes()) / image.nbytes
        print(f"{args.outfile}: {ratio:.4f} of raw")
        return EXIT_OK
    try:
        compressed = imgc.CompressedImage.load(args.infile)
    except (OSError, ValueError) as exc:
        raise _CliFailure(EXIT_IO, f"cannot read {args.infile}: {exc}")
    imgc.write_ppm(imgc.decompress(compressed), args.outfile)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpp", description="data-parallel dataflow platform")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    env_server = os.environ.get("DPP_SERVER")

    p = sub.add_parser("validate", help="check a program document")
    p.add_argument("program")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("id", help="print the program id")
    p.add_argument("program")
    p.set_defaults(func=cmd_id)

    p = sub.add_parser("run", help="run a program over stream files")
    p.add_argument("program")
    p.add_argument("--in", dest="inputs", action="append", metavar="STREAM=FILE")
    p.add_argument("--out", dest="outputs", action="append", metavar="STREAM=FILE")
    p.add_argument("--server", default=env_server)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--par", type=int, default=1)
    p.add_argument("--pool", choices=("thread", "process"), default="thread")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="start a platform server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8337)
    p.add_argument("--data-port-range", default=None, metavar="LO:HI")
    p.add_argument("--store-dir", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("info", help="print server status")
    p.add_argument("--server", default=env_server)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("fft", help="transform a float2 stream file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--server", default=env_server)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--par", type=int, default=1)
    p.set_defaults(func=cmd_fft)

    p = sub.add_parser("fft-bench", help="stream-size scaling benchmark (CSV)")
    p.add_argument("--sizes", default="20K..10M")
    p.add_argument("--k", default="1,2,3")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--server", default=env_server)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--par", type=int, default=1)
    p.add_argument("--pool", choices=("thread", "process"), default="thread")
    p.set_defaults(func=cmd_fft_bench)

    p = sub.add_parser("imgc", help="block-VQ image codec")
    p.add_argument("action", choices=("compress", "decompress"))
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--codebook", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--server", default=env_server)
    p.set_defaults(func=cmd_imgc)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DppError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

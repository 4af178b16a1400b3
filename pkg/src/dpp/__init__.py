"""dpp — a data-parallel dataflow platform.

Programs are directed acyclic graphs whose vertexes run small C-style
kernels over typed streams; the engine splits streams into chunks of
work-items, executes instances in topological order and re-joins outputs in
order.  Programs run in-process or against a server speaking JSON over HTTP
for control and a binary frame protocol over TCP for data.
"""

__version__ = "0.1.0"

from .types import DataType, Direction, IOPoint, parse_type_name
from .model import (
    Arrow, FreePoint, Instance, Node, Program, ValidationReport, Violation,
    free_points, parse_program, program_id, serialize_program,
    topological_order, validate,
)
from .engine import (
    Chunk, DEFAULT_CHUNK_SIZE, ExecutionPlan, Race, RunResult,
    chunk_arrays, plan, race_check, run_chunk, run_stream,
)
from .wire import StreamFile
from .client import LocalBackend, RemoteBackend, run

__all__ = [
    "DataType", "Direction", "IOPoint", "parse_type_name",
    "Node", "Instance", "Arrow", "Program", "FreePoint",
    "Violation", "ValidationReport",
    "parse_program", "serialize_program", "validate",
    "topological_order", "program_id", "free_points",
    "ExecutionPlan", "Chunk", "RunResult", "Race",
    "plan", "run_chunk", "run_stream", "race_check", "chunk_arrays",
    "DEFAULT_CHUNK_SIZE",
    "StreamFile",
    "LocalBackend", "RemoteBackend", "run",
    "__version__",
]

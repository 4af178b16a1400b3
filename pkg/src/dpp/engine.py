"""Execution engine: runs validated programs over chunked streams.

A plan fixes the topological order and, per instance, the work-item
multiplier induced by arrow width conversions (a ``float2`` output feeding a
``float4`` input halves the consumer's work-item count).  ``run_chunk``
executes one chunk; ``run_stream`` pipelines many chunks with optional
worker parallelism, always emitting outputs in input order.  Intermediate
buffers are handed from producer to consumers by reference — never copied.
"""

from __future__ import annotations

import pickle
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, \
    ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import EngineRuntimeError, KernelRuntimeError, PlanError
from .kernel.interp import DEFAULT_BUDGET, WriteRecord, run_lanes
from .kernel.typecheck import TypedKernel, compile_kernel
from .model import FreePoint, Program, free_points, topological_order, validate
from .types import Direction

__all__ = [
    "DEFAULT_CHUNK_SIZE", "ExecutionPlan", "Chunk", "RunResult", "Race",
    "plan", "run_chunk", "run_stream", "race_check", "chunk_arrays",
]

DEFAULT_CHUNK_SIZE = 4096


@dataclass(frozen=True)
class ExecutionPlan:
    program: Program
    order: tuple[int, ...]
    multipliers: dict[int, Fraction]  # work-items per free-input element
    kernels: dict[str, TypedKernel]
    # input point -> ("free", stream name) or ("arrow", producer id, point)
    bindings: dict[tuple[int, str], tuple]
    free_inputs: tuple[FreePoint, ...]
    free_outputs: tuple[FreePoint, ...]
    chunk_size: int
    budget: int = DEFAULT_BUDGET

    @property
    def items_per_element(self) -> Fraction:
        """Total work-items executed per free-input element."""
        return sum(self.multipliers.values(), Fraction(0))


@dataclass
class Chunk:
    """One block of stream data: flat scalar buffers keyed by stream name."""

    index: int
    buffers: dict[str, np.ndarray]
    counts: dict[str, int]


@dataclass
class RunResult:
    chunks: list[Chunk] = field(default_factory=list)
    timings: list[float] = field(default_factory=list)
    total_work_items: int = 0


@dataclass(frozen=True)
class Race:
    """Two work-items of one instance wrote the same output scalar."""

    instance: int
    point: str
    scalar_index: int
    work_items: tuple[int, int]


def plan(program: Program, chunk_size: int = DEFAULT_CHUNK_SIZE,
         *, budget: int = DEFAULT_BUDGET) -> ExecutionPlan:
    """Validate and prepare a program for execution at ``chunk_size``."""
    if chunk_size < 1:
        raise PlanError(f"chunk size must be >= 1, got {chunk_size}")
    report = validate(program)
    if not report.ok:
        raise PlanError(f"program is not executable:\n{report}")

    kernels = {name: compile_kernel(node.body, node.points)
               for name, node in program.kernels.items()}
    order = tuple(topological_order(program))
    producers = {arrow.input: arrow.output for arrow in program.arrows}

    bindings: dict[tuple[int, str], tuple] = {}
    multipliers: dict[int, Fraction] = {}
    for iid in order:
        inst = program.instance(iid)
        node = program.kernels[inst.kernel]
        candidates: list[tuple[str, Fraction]] = []
        for point in node.io:
            if not point.is_input:
                continue
            key = (iid, point.name)
            if key in producers:
                src = producers[key]
                src_width = program.point_of(*src).data.width
                m = multipliers[src[0]] * src_width / point.data.width
                bindings[key] = ("arrow", src[0], src[1])
            else:
                m = Fraction(1)
                bindings[key] = ("free", f"{iid}.{point.name}")
            candidates.append((point.name, m))
        first = candidates[0][1]
        for pname, m in candidates[1:]:
            if m != first:
                raise PlanError(
                    f"work-item count mismatch at instance {iid}: point "
                    f"{candidates[0][0]!r} implies x{first}, {pname!r} "
                    f"implies x{m}")
        if (first * chunk_size).denominator != 1:
            raise PlanError(
                f"non-integral width conversion: instance {iid} runs "
                f"{first} work-items per element, not integral at chunk "
                f"size {chunk_size}")
        multipliers[iid] = first

    free = free_points(program)
    return ExecutionPlan(
        program=program, order=order, multipliers=multipliers,
        kernels=kernels, bindings=bindings,
        free_inputs=tuple(p for p in free if p.direction is Direction.INPUT),
        free_outputs=tuple(p for p in free if p.direction is Direction.OUTPUT),
        chunk_size=chunk_size, budget=budget)


def _chunk_element_count(plan_: ExecutionPlan, chunk: Chunk) -> int:
    counts = set()
    for fp in plan_.free_inputs:
        if fp.stream not in chunk.buffers:
            raise EngineRuntimeError(
                f"missing input stream {fp.stream!r}", chunk=chunk.index)
        buf = chunk.buffers[fp.stream]
        count = chunk.counts.get(fp.stream, len(buf) // fp.data.width)
        if buf.dtype != fp.data.dtype:
            raise EngineRuntimeError(
                f"stream {fp.stream!r} carries {buf.dtype}, expected "
                f"{fp.data.dtype} ({fp.data})", chunk=chunk.index)
        if len(buf) != count * fp.data.width:
            raise EngineRuntimeError(
                f"stream {fp.stream!r}: buffer holds {len(buf)} scalars, "
                f"expected {count * fp.data.width}", chunk=chunk.index)
        counts.add(count)
    unknown = chunk.buffers.keys() - {fp.stream for fp in plan_.free_inputs}
    if unknown:
        raise EngineRuntimeError(
            f"unexpected input stream {sorted(unknown)[0]!r}", chunk=chunk.index)
    if len(counts) > 1:
        raise EngineRuntimeError(
            f"input streams disagree on element count: {sorted(counts)}",
            chunk=chunk.index)
    return counts.pop() if counts else 0


def _instance_items(plan_: ExecutionPlan, iid: int, elements: int,
                    chunk_index: int) -> int:
    items = plan_.multipliers[iid] * elements
    if items.denominator != 1:
        raise EngineRuntimeError(
            f"width conversion not integral for instance {iid} at "
            f"{elements} elements", chunk=chunk_index)
    return int(items)


def run_chunk(plan_: ExecutionPlan, chunk: Chunk, parallelism: int = 1,
              *, _record: dict[int, list[WriteRecord]] | None = None) -> Chunk:
    """Execute every instance over one chunk; returns the output chunk."""
    elements = _chunk_element_count(plan_, chunk)
    produced: dict[tuple[int, str], np.ndarray] = {}

    for iid in plan_.order:
        inst = plan_.program.instance(iid)
        kernel = plan_.kernels[inst.kernel]
        items = _instance_items(plan_, iid, elements, chunk.index)
        inputs: dict[str, np.ndarray] = {}
        for point in kernel.inputs:
            kind = plan_.bindings[(iid, point.name)]
            if kind[0] == "free":
                inputs[point.name] = chunk.buffers[kind[1]]
            else:
                inputs[point.name] = produced[(kind[1], kind[2])]
        outputs = {point.name: np.zeros(items * point.data.width,
                                        point.data.dtype)
                   for point in kernel.outputs}
        record = None
        if _record is not None:
            record = _record.setdefault(iid, [])
        try:
            _run_instance(kernel, items, inputs, outputs,
                          parallelism, plan_.budget, record)
        except KernelRuntimeError as exc:
            raise EngineRuntimeError(
                str(exc), instance=iid, work_item=exc.work_item,
                chunk=chunk.index) from exc
        for name, buf in outputs.items():
            produced[(iid, name)] = buf

    out_buffers: dict[str, np.ndarray] = {}
    out_counts: dict[str, int] = {}
    for fp in plan_.free_outputs:
        out_buffers[fp.stream] = produced[(fp.instance, fp.point)]
        out_counts[fp.stream] = _instance_items(plan_, fp.instance, elements,
                                                chunk.index)
    return Chunk(chunk.index, out_buffers, out_counts)


def _run_instance(kernel, items, inputs, outputs, parallelism, budget,
                  record) -> None:
    if items == 0:
        return
    if parallelism <= 1 or items < 2 * parallelism or record is not None:
        run_lanes(kernel, np.arange(items, dtype=np.int32), items,
                  inputs, outputs, budget=budget, record=record)
        return
    bounds = np.linspace(0, items, parallelism + 1, dtype=np.int64)
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [
            pool.submit(run_lanes, kernel,
                        np.arange(lo, hi, dtype=np.int32), items,
                        inputs, outputs, budget=budget)
            for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo
        ]
        for future in futures:
            future.result()


# ---------------------------------------------------------------------------
# streaming

_WORKER_PLAN: ExecutionPlan | None = None


def _pool_init(plan_bytes: bytes) -> None:
    global _WORKER_PLAN
    _WORKER_PLAN = pickle.loads(plan_bytes)


def _pool_task(index: int, buffers, counts):
    start = time.perf_counter()
    out = run_chunk(_WORKER_PLAN, Chunk(index, buffers, counts))
    return out, time.perf_counter() - start


def run_stream(plan_: ExecutionPlan, chunks: Iterable[Chunk],
               writer: Callable[[Chunk], None] | None = None,
               *, workers: int = 1, max_in_flight: int | None = None,
               pool: str = "thread") -> RunResult:
    """Run a whole stream chunk by chunk, emitting outputs in input order.

    ``writer`` receives each output chunk as soon as ordering allows; when
    omitted, chunks are collected on the returned :class:`RunResult`.  With
    ``workers > 1`` up to ``max_in_flight`` chunks (default two per worker)
    are processed concurrently on a ``"thread"`` or ``"process"`` pool.
    """
    result = RunResult()
    per_element = plan_.items_per_element

    def emit(chunk: Chunk, elapsed: float, elements: int) -> None:
        result.timings.append(elapsed)
        result.total_work_items += int(per_element * elements)
        if writer is not None:
            writer(chunk)
        else:
            result.chunks.append(chunk)

    if workers <= 1:
        for index, chunk, elements in _checked(plan_, chunks):
            start = time.perf_counter()
            out = run_chunk(plan_, chunk)
            emit(out, time.perf_counter() - start, elements)
        return result

    if max_in_flight is None:
        max_in_flight = 2 * workers
    if pool == "process":
        import multiprocessing
        executor = ProcessPoolExecutor(
            max_workers=workers,
            mp_context=multiprocessing.get_context("fork"),
            initializer=_pool_init, initargs=(pickle.dumps(plan_),))
    elif pool == "thread":
        executor = ThreadPoolExecutor(max_workers=workers)
    else:
        raise ValueError(f"unknown pool kind {pool!r}")

    with executor:
        source = iter(_checked(plan_, chunks))
        pending: dict[int, object] = {}
        elements_of: dict[int, int] = {}
        done: dict[int, tuple[Chunk, float]] = {}
        next_emit = 0
        exhausted = False
        while True:
            while not exhausted and len(pending) < max_in_flight:
                try:
                    index, chunk, elements = next(source)
                except StopIteration:
                    exhausted = True
                    break
                elements_of[index] = elements
                if pool == "process":
                    fut = executor.submit(_pool_task, index, chunk.buffers,
                                          chunk.counts)
                else:
                    fut = executor.submit(_timed_chunk, plan_, chunk)
                pending[index] = fut
            if not pending and exhausted:
                break
            wait(list(pending.values()), return_when=FIRST_COMPLETED)
            for index in sorted(list(pending)):
                fut = pending[index]
                if fut.done():
                    del pending[index]
                    done[index] = fut.result()  # re-raises chunk failures
            while next_emit in done:
                out, elapsed = done.pop(next_emit)
                emit(out, elapsed, elements_of.pop(next_emit))
                next_emit += 1
    return result


def _timed_chunk(plan_: ExecutionPlan, chunk: Chunk) -> tuple[Chunk, float]:
    start = time.perf_counter()
    out = run_chunk(plan_, chunk)
    return out, time.perf_counter() - start


def _checked(plan_: ExecutionPlan,
             chunks: Iterable[Chunk]) -> Iterator[tuple[int, Chunk, int]]:
    """Enforce reader ordering: dense indices, short chunk only last."""
    expected = 0
    short_seen: int | None = None
    for chunk in chunks:
        if chunk.index != expected:
            raise EngineRuntimeError(
                f"chunk {chunk.index} arrived out of order "
                f"(expected {expected})", chunk=chunk.index)
        if short_seen is not None:
            raise EngineRuntimeError(
                f"short chunk {short_seen} was not the final chunk",
                chunk=chunk.index)
        elements = _chunk_element_count(plan_, chunk)
        if elements > plan_.chunk_size:
            raise EngineRuntimeError(
                f"chunk carries {elements} elements, plan chunk size is "
                f"{plan_.chunk_size}", chunk=chunk.index)
        if elements < plan_.chunk_size:
            short_seen = chunk.index
        yield chunk.index, chunk, elements
        expected += 1


def race_check(plan_: ExecutionPlan, chunk: Chunk) -> list[Race]:
    """Report output scalars written by two different work-items.

    Write targets cannot depend on execution order (output buffers are
    write-only), so a recording lockstep pass observes the same write-sets
    as a sequential one.
    """
    records: dict[int, list[WriteRecord]] = {}
    run_chunk(plan_, chunk, _record=records)
    races: list[Race] = []
    for iid, recs in sorted(records.items()):
        by_point: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
        for rec in recs:
            if rec.span == 1:
                pairs = (rec.scalar_index.astype(np.int64), rec.gids)
            else:
                span = np.arange(rec.span, dtype=np.int64)
                idx = (rec.scalar_index.astype(np.int64)[:, None] + span).ravel()
                gids = np.repeat(rec.gids, rec.span)
                pairs = (idx, gids)
            by_point.setdefault(rec.point, []).append(pairs)
        for point, pair_list in sorted(by_point.items()):
            idx = np.concatenate([p[0] for p in pair_list])
            gids = np.concatenate([p[1] for p in pair_list])
            order = np.lexsort((gids, idx))
            idx, gids = idx[order], gids[order]
            clash = (idx[1:] == idx[:-1]) & (gids[1:] != gids[:-1])
            for at in np.nonzero(clash)[0]:
                races.append(Race(iid, point, int(idx[at]),
                                  (int(gids[at]), int(gids[at + 1]))))
    return races


def chunk_arrays(plan_: ExecutionPlan,
                 streams: dict[str, np.ndarray]) -> Iterator[Chunk]:
    """Cut whole input streams into plan-sized chunks.

    Every stream must be a flat scalar array for its free input point, and
    all streams must carry the same element count.
    """
    counts = set()
    for fp in plan_.free_inputs:
        if fp.stream not in streams:
            raise EngineRuntimeError(f"missing input stream {fp.stream!r}")
        counts.add(len(streams[fp.stream]) // fp.data.width)
    extra = streams.keys() - {fp.stream for fp in plan_.free_inputs}
    if extra:
        raise EngineRuntimeError(f"unexpected input stream {sorted(extra)[0]!r}")
    if len(counts) > 1:
        raise EngineRuntimeError(
            f"input streams disagree on element count: {sorted(counts)}")
    total = counts.pop() if counts else 0
    w = plan_.chunk_size
    for index in range((total + w - 1) // w):
        lo, hi = index * w, min((index + 1) * w, total)
        buffers = {
            fp.stream: streams[fp.stream][lo * fp.data.width:hi * fp.data.width]
            for fp in plan_.free_inputs
        }
        yield Chunk(index, buffers, {fp.stream: hi - lo
                                     for fp in plan_.free_inputs})

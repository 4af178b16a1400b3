"""Kernel evaluation.

The evaluator executes a batch of work-items in lockstep over numpy arrays:
a scalar value is held as shape ``(n,)`` (one slot per work-item, or a 0-d
array when uniform across the batch) and a vector of width ``w`` as
``(n, w)`` (or ``(w,)`` when uniform).  Branches and loops run under an
active-lane mask, so divergent control flow behaves exactly as if each
work-item ran alone.  All float arithmetic, intermediates included, is IEEE
binary32; integers wrap two's-complement at their annotated width, and
division truncates toward zero as in C.

The only runtime faults are out-of-range buffer access and integer
division/modulo by zero; both report the first offending work-item.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import KernelRuntimeError
from ..types import DataType
from . import ast
from .typecheck import TypedKernel

__all__ = ["WorkItemContext", "evaluate", "run_lanes", "WriteRecord"]

_INT32 = np.dtype(np.int32)


@dataclass
class WorkItemContext:
    """Buffers and identity for evaluating a single work-item.

    Buffer arrays are flat scalars; the length of point ``p`` must equal
    ``global_size * width(p)``.
    """

    global_id: int
    global_size: int
    inputs: dict[str, np.ndarray]
    outputs: dict[str, np.ndarray]


@dataclass
class WriteRecord:
    """One scatter performed by a batch: which work-items wrote where."""

    point: str
    gids: np.ndarray  # (k,) global ids that performed the write
    scalar_index: np.ndarray  # (k,) first flat scalar index written per gid
    span: int  # number of consecutive scalars written per gid


class _Frame:
    __slots__ = ("gids", "n", "global_size", "inputs", "outputs", "locals",
                 "budget", "record")

    def __init__(self, gids, global_size, inputs, outputs, budget, record):
        self.gids = gids
        self.n = len(gids)
        self.global_size = global_size
        self.inputs = inputs
        self.outputs = outputs
        self.locals: dict[str, object] = {}
        self.budget = budget
        self.record = record


def _truthy(val) -> np.ndarray:
    return val != 0


def _and_mask(active, cond):
    return cond if active is None else active & cond


def _cast(val, dtype: np.dtype):
    if getattr(val, "dtype", None) != dtype:
        return np.asarray(val).astype(dtype)
    return val


def _align(val, vtype: DataType, rwidth: int):
    """Reshape a scalar operand so it broadcasts against (n, w) vectors."""
    if rwidth > 1 and vtype.width == 1 and getattr(val, "ndim", 0) == 1:
        return val[:, None]
    return val


def _materialize(frame: _Frame, val, dtype: DataType):
    """Ensure a full per-lane array of the value's natural shape."""
    val = _cast(val, dtype.dtype)
    shape = (frame.n,) if dtype.width == 1 else (frame.n, dtype.width)
    if getattr(val, "shape", None) == shape:
        return val
    return np.broadcast_to(val, shape).copy()


def _first_lane(frame: _Frame, bad) -> int:
    bad = np.broadcast_to(bad, (frame.n,))
    return int(frame.gids[int(np.argmax(bad))])


class _Eval:
    """Statement/expression walker for one lockstep batch."""

    def __init__(self, kernel: TypedKernel, frame: _Frame):
        self.kernel = kernel
        self.frame = frame
        self.scopes: list[list[str]] = [[]]

    # ------------------------------------------------------------------
    def run(self) -> None:
        self.exec_stmts(self.kernel.body, None)

    def exec_stmts(self, stmts, active) -> None:
        for stmt in stmts:
            self.exec_stmt(stmt, active)

    def exec_stmt(self, stmt, active) -> None:
        frame = self.frame
        frame.budget -= 1
        if frame.budget < 0:
            raise KernelRuntimeError("instruction budget exceeded")
        if isinstance(stmt, ast.Assign):
            self.assign(stmt, active)
        elif isinstance(stmt, ast.Decl):
            dt = stmt.dtype
            if stmt.init is not None:
                val = _cast(self.eval(stmt.init, active), dt.dtype)
            elif dt.width == 1:
                val = dt.dtype.type(0)
            else:
                val = np.zeros(dt.width, dt.dtype)
            if active is not None:
                mask = active[:, None] if dt.width > 1 else active
                val = np.where(mask, val, np.zeros((), dt.dtype))
            frame.locals[stmt.name] = val
            self.scopes[-1].append(stmt.name)
        elif isinstance(stmt, ast.If):
            cond = _truthy(self.eval(stmt.cond, active))
            then_mask = _and_mask(active, cond)
            if np.all(then_mask):
                self.scoped(stmt.then, active)
            elif np.any(then_mask):
                self.scoped(stmt.then, then_mask)
            if stmt.other is not None:
                other_mask = _and_mask(active, ~cond)
                if np.all(other_mask):
                    self.scoped(stmt.other, active)
                elif np.any(other_mask):
                    self.scoped(stmt.other, other_mask)
        elif isinstance(stmt, ast.For):
            self.scopes.append([])
            try:
                if stmt.init is not None:
                    self.exec_stmt(stmt.init, active)
                live = active
                while True:
                    cond = _truthy(self.eval(stmt.cond, live))
                    live = _and_mask(live, cond)
                    if not np.any(live):
                        break
                    if np.all(live):
                        live = None  # all lanes march together
                    self.scoped(stmt.body, live)
                    self.exec_stmt(stmt.update, live)
            finally:
                self.pop_scope()
        elif isinstance(stmt, ast.Block):
            self.scopes.append([])
            try:
                self.exec_stmts(stmt.stmts, active)
            finally:
                self.pop_scope()
        else:  # pragma: no cover
            raise AssertionError(f"unhandled statement {stmt!r}")

    def scoped(self, stmt, active) -> None:
        self.scopes.append([])
        try:
            self.exec_stmt(stmt, active)
        finally:
            self.pop_scope()

    def pop_scope(self) -> None:
        for name in self.scopes.pop():
            del self.frame.locals[name]

    # ------------------------------------------------------------------
    def assign(self, stmt: ast.Assign, active) -> None:
        frame = self.frame
        target = stmt.target
        if target.name in self.kernel.io:
            point = self.kernel.io[target.name]
            idx = self.eval(target.index, active)
            val = self.eval(stmt.value, active)
            self.scatter(point, idx, target.comp, val, active, stmt)
            return
        dt = self.kernel.locals[target.name]
        val = self.eval(stmt.value, active)
        if target.comp is None:
            val = _cast(val, dt.dtype)
            if active is None:
                frame.locals[target.name] = val
            else:
                mask = active[:, None] if dt.width > 1 else active
                frame.locals[target.name] = np.where(
                    mask, val, frame.locals[target.name])
        else:
            val = _cast(val, dt.dtype)
            old = _materialize(frame, frame.locals[target.name], dt)
            new = old.copy()
            if active is None:
                new[:, target.comp] = val
            else:
                new[active, target.comp] = np.broadcast_to(val, (frame.n,))[active]
            frame.locals[target.name] = new

    def scatter(self, point, idx, comp, val, active, stmt) -> None:
        frame = self.frame
        buf = frame.outputs[point.name]
        width = point.data.width
        count = len(buf) // width
        idxl = np.asarray(idx).astype(np.int64)
        bad = (idxl < 0) | (idxl >= count)
        if active is not None:
            bad = _and_mask(active, bad)
        if np.any(bad):
            lane = _first_lane(frame, bad)
            value = int(np.broadcast_to(idxl, (frame.n,))[
                int(np.argmax(np.broadcast_to(bad, (frame.n,))))])
            raise KernelRuntimeError(
                f"index {value} out of range for point {point.name!r} "
                f"(0..{count - 1})", work_item=lane)
        pos = np.broadcast_to(idxl, (frame.n,))
        if comp is None:
            val = _materialize(frame, val, point.data)
        else:
            val = np.broadcast_to(_cast(val, point.data.dtype), (frame.n,))
        if active is None:
            sel = slice(None)
            gids = frame.gids
        else:
            sel = active
            gids = frame.gids[active]
        if frame.record is not None:
            first = pos[sel] * width + (0 if comp is None else comp)
            span = width if comp is None else 1
            frame.record.append(WriteRecord(point.name, gids, first, span))
        if width == 1:
            buf[pos[sel]] = val[sel]
        elif comp is None:
            buf.reshape(count, width)[pos[sel]] = val[sel]
        else:
            buf[pos[sel] * width + comp] = val[sel]

    def gather(self, node: ast.Index, active, comp: int | None = None):
        frame = self.frame
        point = self.kernel.io[node.name]
        buf = frame.inputs[node.name]
        width = point.data.width
        count = len(buf) // width
        idx = self.eval(node.index, active)
        idxl = np.asarray(idx).astype(np.int64)
        bad = (idxl < 0) | (idxl >= count)
        if active is not None:
            bad = _and_mask(active, bad)
        if np.any(bad):
            lane = _first_lane(frame, bad)
            value = int(np.broadcast_to(idxl, (frame.n,))[
                int(np.argmax(np.broadcast_to(bad, (frame.n,))))])
            raise KernelRuntimeError(
                f"index {value} out of range for point {node.name!r} "
                f"(0..{count - 1})", work_item=lane)
        if active is not None and idxl.ndim:
            idxl = np.where(active, idxl, 0)
        if comp is not None:
            return buf[idxl * width + comp]
        if width == 1:
            return buf[idxl]
        return buf.reshape(count, width)[idxl]

    # ------------------------------------------------------------------
    def eval(self, node: ast.Expr, active):
        handler = _HANDLERS[type(node)]
        return handler(self, node, active)

    def _ident(self, node: ast.Ident, active):
        name = node.name
        frame = self.frame
        if name in frame.locals:
            return frame.locals[name]
        return _CONSTANTS[name]

    def _comp(self, node: ast.Comp, active):
        if isinstance(node.base, ast.Index):
            return self.gather(node.base, active, comp=node.comp)
        base = self.eval(node.base, active)
        return base[..., node.comp]

    def _unary(self, node: ast.Unary, active):
        val = self.eval(node.operand, active)
        if node.op == "-":
            return _cast(-_cast(val, node.type.dtype), node.type.dtype)
        if node.op == "~":
            return ~_cast(val, node.type.dtype)
        return _truthy(val).astype(_INT32) ^ 1  # '!'

    def _binary(self, node: ast.Binary, active):
        op = node.op
        if op == "&&":
            left = _truthy(self.eval(node.left, active))
            right_active = _and_mask(active, left)
            if not np.any(right_active):
                return np.zeros((), _INT32) if left.ndim == 0 else \
                    np.zeros(self.frame.n, _INT32)
            right = _truthy(self.eval(node.right, right_active))
            return (left & right).astype(_INT32)
        if op == "||":
            left = _truthy(self.eval(node.left, active))
            right_active = _and_mask(active, ~left)
            if not np.any(right_active):
                return np.asarray(left).astype(_INT32)
            right = _truthy(self.eval(node.right, right_active))
            return (left | right).astype(_INT32)

        if op in _COMPARE:
            wide = node.wide
            left = _cast(self.eval(node.left, active), wide.dtype)
            right = _cast(self.eval(node.right, active), wide.dtype)
            return _COMPARE[op](left, right).astype(_INT32)

        rtype = node.type
        left = self.eval(node.left, active)
        right = self.eval(node.right, active)
        left = _align(left, node.left.type, rtype.width)
        right = _align(right, node.right.type, rtype.width)
        if op in ("<<", ">>"):
            bits = rtype.scalar_size * 8
            shift = (np.asarray(right).astype(np.int64) & (bits - 1)).astype(
                rtype.dtype)
            lhs = _cast(left, rtype.dtype)
            return np.left_shift(lhs, shift) if op == "<<" else \
                np.right_shift(lhs, shift)
        left = _cast(left, rtype.dtype)
        right = _cast(right, rtype.dtype)
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if op == "/":
            if rtype.is_float:
                return left / right
            return self._int_div(node, left, right, active, want_mod=False)
        if op == "%":
            return self._int_div(node, left, right, active, want_mod=True)
        if op == "&":
            return left & right
        if op == "|":
            return left | right
        return left ^ right  # '^'

    def _int_div(self, node, left, right, active, *, want_mod):
        frame = self.frame
        zero = np.asarray(right == 0)
        if zero.any():
            lane_zero = zero if zero.ndim < 2 else zero.any(axis=-1)
            faulting = lane_zero if active is None else _and_mask(active, lane_zero)
            if np.any(faulting):
                raise KernelRuntimeError(
                    "integer modulo by zero" if want_mod
                    else "integer division by zero",
                    work_item=_first_lane(frame, faulting))
            right = np.where(zero, np.asarray(right).dtype.type(1), right)
        quot = np.floor_divide(left, right)
        rem = left - quot * right
        if node.type.is_signed:
            fix = (rem != 0) & ((left < 0) != (right < 0))
            if np.any(fix):
                quot = quot + fix.astype(quot.dtype)
                rem = left - quot * right
        return rem if want_mod else quot

    def _ternary(self, node: ast.Ternary, active):
        cond = _truthy(self.eval(node.cond, active))
        rtype = node.type
        then_active = _and_mask(active, cond)
        other_active = _and_mask(active, ~cond)
        if np.any(then_active):
            then = self.eval(node.then, then_active)
            then = _cast(_align(then, node.then.type, rtype.width), rtype.dtype)
        else:
            then = np.zeros((), rtype.dtype)
        if np.any(other_active):
            other = self.eval(node.other, other_active)
            other = _cast(_align(other, node.other.type, rtype.width), rtype.dtype)
        else:
            other = np.zeros((), rtype.dtype)
        mask = cond
        if rtype.width > 1 and getattr(cond, "ndim", 0) == 1:
            mask = cond[:, None]
        return np.where(mask, then, other)

    def _call(self, node: ast.Call, active):
        name = node.name
        frame = self.frame
        if name == "get_global_id":
            return frame.gids
        if name == "get_global_size":
            return np.int32(frame.global_size)
        args = [self.eval(a, active) for a in node.args]
        if name == "dot":
            prod = args[0] * args[1]
            return prod.sum(axis=-1, dtype=np.float32)
        if len(args) == 2:
            a = _cast(_align(args[0], node.args[0].type, node.type.width),
                      node.type.dtype)
            b = _cast(_align(args[1], node.args[1].type, node.type.width),
                      node.type.dtype)
            if name == "pow":
                return np.power(a, b)
            if name == "fmin" or name == "min":
                return np.minimum(a, b)
            return np.maximum(a, b)  # fmax / max
        return _FLOAT_FUNCS[name](args[0])

    def _ctor(self, node: ast.Ctor, active):
        dt = node.ctype
        args = [_cast(self.eval(a, active), dt.dtype) for a in node.args]
        if dt.width == 1:
            return args[0]
        if any(getattr(a, "ndim", 0) for a in args):
            args = [np.broadcast_to(a, (self.frame.n,)) for a in args]
        return np.stack(args, axis=-1)


_COMPARE = {
    "==": np.equal, "!=": np.not_equal,
    "<": np.less, "<=": np.less_equal,
    ">": np.greater, ">=": np.greater_equal,
}

_FLOAT_FUNCS = {
    "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt, "fabs": np.abs,
    "floor": np.floor, "exp": np.exp, "log": np.log, "abs": np.abs,
}

_CONSTANTS = {"M_PI_F": np.float32(np.pi)}

_HANDLERS = {
    ast.IntLit: lambda s, n, a: n.type.dtype.type(n.value),
    ast.FloatLit: lambda s, n, a: np.float32(n.value),
    ast.Ident: _Eval._ident,
    ast.Index: lambda s, n, a: s.gather(n, a),
    ast.Comp: _Eval._comp,
    ast.Unary: _Eval._unary,
    ast.Binary: _Eval._binary,
    ast.Ternary: _Eval._ternary,
    ast.Call: _Eval._call,
    ast.Ctor: _Eval._ctor,
}

DEFAULT_BUDGET = 10_000_000


def run_lanes(kernel: TypedKernel, gids: np.ndarray, global_size: int,
              inputs: dict[str, np.ndarray], outputs: dict[str, np.ndarray],
              *, budget: int = DEFAULT_BUDGET,
              record: list[WriteRecord] | None = None) -> None:
    """Execute ``kernel`` for every work-item in ``gids`` (lockstep batch).

    ``inputs``/``outputs`` are flat scalar buffers keyed by point name and
    sized ``global_size * width``.  Writes land in ``outputs`` in place.
    """
    frame = _Frame(np.asarray(gids, _INT32), global_size, inputs, outputs,
                   budget, record)
    # IEEE semantics without chatter: float faults produce inf/nan, integer
    # wraparound is silent; the two real faults raise explicitly above.
    with np.errstate(all="ignore"):
        _Eval(kernel, frame).run()


def evaluate(kernel: TypedKernel, ctx: WorkItemContext,
             *, budget: int = DEFAULT_BUDGET) -> None:
    """Execute one work-item, mutating the context's output buffers."""
    for name, point in kernel.io.items():
        store = ctx.inputs if point.is_input else ctx.outputs
        if name not in store:
            raise KernelRuntimeError(f"missing buffer for point {name!r}")
        expect = ctx.global_size * point.data.width
        if len(store[name]) != expect:
            raise KernelRuntimeError(
                f"buffer for point {name!r} has {len(store[name])} scalars, "
                f"expected {expect}")
    if not 0 <= ctx.global_id < ctx.global_size:
        raise KernelRuntimeError(
            f"work-item {ctx.global_id} outside [0, {ctx.global_size})")
    run_lanes(kernel, np.array([ctx.global_id], _INT32), ctx.global_size,
              ctx.inputs, ctx.outputs, budget=budget)

"""Static type checking for kernel bodies.

The checker annotates every expression with a :class:`~dpp.types.DataType`
and enforces the language rules:

* i/o points are used only as ``name[index]`` (plus an optional trailing
  component); input points are read-only, output points are write-only.
* ``% << >> & | ^ ~`` take integer operands only.
* mixed integer/float arithmetic promotes to float; for two integer types
  the larger wins and, at equal size, unsigned wins (no silent widening to
  ``int`` as C would do — arithmetic stays in the operands' common type).
* a scalar operand broadcasts against a vector one; two vector operands
  must have the same width.
* comparisons and logical operators take scalars and yield ``int`` 0/1.
* assignment (and initialization) accepts the value's type only if it
  promotes losslessly to the target: integer widening that preserves sign,
  any integer to float, or an integer literal whose value fits the target.
  Anything narrower needs an explicit ``(type)(value)`` conversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import KernelTypeError
from ..types import DataType, IOPoint
from . import ast
from .parser import parse_body

__all__ = ["TypedKernel", "typecheck", "compile_kernel", "BUILTIN_CONSTANTS"]

_INT = DataType("int")
_FLOAT = DataType("float")

_BASE_BY_SHAPE = {
    (1, True): "char", (1, False): "uchar",
    (2, True): "short", (2, False): "ushort",
    (4, True): "int", (4, False): "uint",
    (8, True): "long", (8, False): "ulong",
}

BUILTIN_CONSTANTS = {"M_PI_F": _FLOAT}

_FLOAT_UNARY = ("sin", "cos", "sqrt", "fabs", "floor", "exp", "log")
_FLOAT_BINARY = ("pow", "fmin", "fmax")
_INT_FUNCS = ("min", "max", "abs")


@dataclass
class TypedKernel:
    """A parsed, type-checked kernel body with its i/o signature."""

    io: dict[str, IOPoint]
    body: list[ast.Stmt]
    locals: dict[str, DataType] = field(default_factory=dict)

    @property
    def inputs(self) -> list[IOPoint]:
        return [p for p in self.io.values() if p.is_input]

    @property
    def outputs(self) -> list[IOPoint]:
        return [p for p in self.io.values() if not p.is_input]


def _fail(node, message: str) -> None:
    raise KernelTypeError(message, node.line, node.col)


def _promote_base(a: DataType, b: DataType) -> str:
    if a.is_float or b.is_float:
        return "float"
    if a.scalar_size == b.scalar_size:
        signed = a.is_signed and b.is_signed
        return _BASE_BY_SHAPE[(a.scalar_size, signed)]
    big = a if a.scalar_size > b.scalar_size else b
    return big.base


def _promote(node, a: DataType, b: DataType) -> DataType:
    if a.is_vector and b.is_vector and a.width != b.width:
        _fail(node, f"vector width mismatch: {a} vs {b}")
    return DataType(_promote_base(a, b), max(a.width, b.width))


def _literal_fits(expr: ast.Expr, target: DataType) -> bool:
    value = None
    if isinstance(expr, ast.IntLit):
        value = expr.value
    elif (isinstance(expr, ast.Unary) and expr.op == "-"
          and isinstance(expr.operand, ast.IntLit)):
        value = -expr.operand.value
    if value is None or target.width != 1:
        return False
    if target.is_float:
        return True
    info = __import__("numpy").iinfo(target.dtype)
    return info.min <= value <= info.max


def _assignable(value: ast.Expr, src: DataType, dst: DataType) -> bool:
    if src == dst:
        return True
    if src.width != dst.width:
        return False
    if dst.is_float and src.is_integer:
        return True
    if src.is_integer and dst.is_integer:
        if _literal_fits(value, dst):
            return True
        if src.scalar_size < dst.scalar_size and (not src.is_signed or dst.is_signed):
            return True
    return False


class _Checker:
    def __init__(self, io: dict[str, IOPoint]):
        self.io = io
        self.scopes: list[dict[str, DataType]] = [{}]
        self.all_locals: dict[str, DataType] = {}

    # -- scopes -------------------------------------------------------------
    def lookup(self, name: str) -> DataType | None:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def declare(self, node, name: str, dtype: DataType) -> None:
        if name in self.io:
            _fail(node, f"variable {name!r} shadows an i/o point")
        if self.lookup(name) is not None:
            _fail(node, f"redeclaration of {name!r}")
        if name in BUILTIN_CONSTANTS:
            _fail(node, f"{name!r} is a builtin constant")
        self.scopes[-1][name] = dtype
        self.all_locals[name] = dtype

    # -- statements ----------------------------------------------------------
    def check_stmts(self, stmts: list[ast.Stmt]) -> None:
        for stmt in stmts:
            self.check_stmt(stmt)

    def check_stmt(self, stmt: ast.Stmt) -> None:
        if isinstance(stmt, ast.Decl):
            if stmt.init is not None:
                src = self.expr(stmt.init)
                if not _assignable(stmt.init, src, stmt.dtype):
                    _fail(stmt, f"cannot initialize {stmt.dtype} from {src}")
            self.declare(stmt, stmt.name, stmt.dtype)
        elif isinstance(stmt, ast.Assign):
            self.check_assign(stmt)
        elif isinstance(stmt, ast.If):
            self.condition(stmt.cond)
            self.scoped(stmt.then)
            if stmt.other is not None:
                self.scoped(stmt.other)
        elif isinstance(stmt, ast.For):
            self.scopes.append({})
            try:
                if stmt.init is not None:
                    self.check_stmt(stmt.init)
                self.condition(stmt.cond)
                self.check_assign(stmt.update)
                self.scoped(stmt.body)
            finally:
                self.scopes.pop()
        elif isinstance(stmt, ast.Block):
            self.scopes.append({})
            try:
                self.check_stmts(stmt.stmts)
            finally:
                self.scopes.pop()
        else:  # pragma: no cover
            raise AssertionError(f"unhandled statement {stmt!r}")

    def scoped(self, stmt: ast.Stmt) -> None:
        self.scopes.append({})
        try:
            self.check_stmt(stmt)
        finally:
            self.scopes.pop()

    def check_assign(self, stmt: ast.Assign) -> None:
        target = stmt.target
        if target.name in self.io:
            point = self.io[target.name]
            if target.index is None:
                _fail(stmt, f"i/o point {target.name!r} must be written as "
                            f"{target.name}[index]")
            if point.is_input:
                _fail(stmt, f"cannot write to input point {target.name!r}")
            self.index_expr(target.index)
            ttype = point.data
        else:
            ltype = self.lookup(target.name)
            if ltype is None:
                _fail(stmt, f"undeclared variable {target.name!r}")
            if target.index is not None:
                _fail(stmt, f"{target.name!r} is not an i/o point and cannot "
                            "be indexed")
            ttype = ltype
        if target.comp is not None:
            if not ttype.is_vector:
                _fail(stmt, f"component access on non-vector type {ttype}")
            if target.comp >= ttype.width:
                _fail(stmt, f"component index {target.comp} out of range for {ttype}")
            ttype = ttype.scalar
        src = self.expr(stmt.value)
        if not _assignable(stmt.value, src, ttype):
            _fail(stmt, f"cannot assign {src} to {ttype}")

    def condition(self, expr: ast.Expr) -> DataType:
        t = self.expr(expr)
        if t.is_vector:
            _fail(expr, "condition must be a scalar")
        return t

    # -- expressions ---------------------------------------------------------
    def expr(self, node: ast.Expr) -> DataType:
        t = self._expr(node)
        node.type = t
        return t

    def _expr(self, node: ast.Expr) -> DataType:
        if isinstance(node, ast.IntLit):
            return _INT if -2**31 <= node.value < 2**31 else DataType("long")
        if isinstance(node, ast.FloatLit):
            return _FLOAT
        if isinstance(node, ast.Ident):
            if node.name in BUILTIN_CONSTANTS:
                return BUILTIN_CONSTANTS[node.name]
            if node.name in self.io:
                _fail(node, f"i/o point {node.name!r} must be used as "
                            f"{node.name}[index]")
            t = self.lookup(node.name)
            if t is None:
                _fail(node, f"undeclared identifier {node.name!r}")
            return t
        if isinstance(node, ast.Index):
            point = self.io.get(node.name)
            if point is None:
                _fail(node, f"{node.name!r} is not an i/o point and cannot be indexed")
            if not point.is_input:
                _fail(node, f"cannot read from output point {node.name!r}")
            self.index_expr(node.index)
            return point.data
        if isinstance(node, ast.Comp):
            base = self.expr(node.base)
            if not base.is_vector:
                _fail(node, f"component access on non-vector type {base}")
            if node.comp >= base.width:
                _fail(node, f"component index {node.comp} out of range for {base}")
            return base.scalar
        if isinstance(node, ast.Unary):
            return self.unary(node)
        if isinstance(node, ast.Binary):
            return self.binary(node)
        if isinstance(node, ast.Ternary):
            self.condition(node.cond)
            a = self.expr(node.then)
            b = self.expr(node.other)
            return _promote(node, a, b)
        if isinstance(node, ast.Call):
            return self.call(node)
        if isinstance(node, ast.Ctor):
            if len(node.args) != node.ctype.width:
                _fail(node, f"constructor for {node.ctype} takes "
                            f"{node.ctype.width} argument(s), got {len(node.args)}")
            for arg in node.args:
                at = self.expr(arg)
                if at.is_vector:
                    _fail(arg, "constructor arguments must be scalars")
            return node.ctype
        raise AssertionError(f"unhandled expression {node!r}")  # pragma: no cover

    def index_expr(self, expr: ast.Expr) -> None:
        t = self.expr(expr)
        if not t.is_integer or t.is_vector:
            _fail(expr, f"buffer index must be an integer scalar, got {t}")

    def unary(self, node: ast.Unary) -> DataType:
        t = self.expr(node.operand)
        if node.op == "!":
            if t.is_vector:
                _fail(node, "'!' requires a scalar operand")
            return _INT
        if node.op == "~":
            if not t.is_integer:
                _fail(node, "'~' requires integer operands")
            return t
        return t  # unary minus

    def binary(self, node: ast.Binary) -> DataType:
        op = node.op
        lt = self.expr(node.left)
        rt = self.expr(node.right)
        if op in ("&&", "||"):
            if lt.is_vector or rt.is_vector:
                _fail(node, f"{op!r} requires scalar operands")
            return _INT
        if op in ("==", "!=", "<", "<=", ">", ">="):
            if lt.is_vector or rt.is_vector:
                _fail(node, "comparison requires scalar operands")
            node.wide = _promote(node, lt, rt)
            return _INT
        if op in ("<<", ">>"):
            if not (lt.is_integer and rt.is_integer):
                _fail(node, "shift requires integer operands")
            if lt.is_vector and rt.is_vector and lt.width != rt.width:
                _fail(node, f"vector width mismatch: {lt} vs {rt}")
            return DataType(lt.base, max(lt.width, rt.width))
        if op in ("%", "&", "|", "^"):
            if not (lt.is_integer and rt.is_integer):
                _fail(node, f"{op!r} requires integer operands")
            return _promote(node, lt, rt)
        # + - * /
        return _promote(node, lt, rt)

    def call(self, node: ast.Call) -> DataType:
        name = node.name
        if name in ("get_global_id", "get_global_size"):
            if (len(node.args) != 1 or not isinstance(node.args[0], ast.IntLit)
                    or node.args[0].value != 0):
                _fail(node, f"{name} takes the literal dimension 0")
            node.args[0].type = _INT
            return _INT
        if name in _FLOAT_UNARY:
            (t,) = self.args(node, 1)
            if not t.is_float:
                _fail(node, f"{name} requires float operands")
            return t
        if name in _FLOAT_BINARY:
            a, b = self.args(node, 2)
            if not (a.is_float and b.is_float):
                _fail(node, f"{name} requires float operands")
            return _promote(node, a, b)
        if name in _INT_FUNCS:
            arity = 1 if name == "abs" else 2
            ts = self.args(node, arity)
            if not all(t.is_integer for t in ts):
                _fail(node, f"{name} requires integer operands")
            if arity == 1:
                return ts[0]
            return _promote(node, ts[0], ts[1])
        if name == "dot":
            a, b = self.args(node, 2)
            if not (a.is_float and b.is_float and a.is_vector and a == b):
                _fail(node, "dot requires two float vectors of the same width")
            return _FLOAT
        _fail(node, f"unknown function {name!r}")
        raise AssertionError  # unreachable

    def args(self, node: ast.Call, arity: int) -> list[DataType]:
        if len(node.args) != arity:
            _fail(node, f"{node.name} takes {arity} argument(s), got {len(node.args)}")
        return [self.expr(a) for a in node.args]


def typecheck(body: list[ast.Stmt], io: dict[str, IOPoint]) -> TypedKernel:
    """Annotate and verify a parsed kernel body against its i/o signature."""
    checker = _Checker(io)
    checker.check_stmts(body)
    return TypedKernel(io=dict(io), body=body, locals=checker.all_locals)


def compile_kernel(source: str, io: dict[str, IOPoint]) -> TypedKernel:
    """Parse and type-check a kernel body in one step."""
    return typecheck(parse_body(source), io)

"""AST for kernel bodies.

Every node keeps its 1-based source position for diagnostics.  Expression
nodes carry a ``type`` slot that the type checker fills in; ``wide`` holds
the common operand type where an operator promotes its operands (needed by
the evaluator for comparisons and shifts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..types import DataType

__all__ = [
    "Expr", "IntLit", "FloatLit", "Ident", "Index", "Comp", "Unary",
    "Binary", "Ternary", "Call", "Ctor",
    "Stmt", "Decl", "Assign", "If", "For", "Block", "LValue",
]


@dataclass
class Expr:
    line: int
    col: int
    type: DataType | None = field(default=None, init=False, repr=False, compare=False)
    wide: DataType | None = field(default=None, init=False, repr=False, compare=False)


@dataclass
class IntLit(Expr):
    value: int = 0


@dataclass
class FloatLit(Expr):
    value: float = 0.0


@dataclass
class Ident(Expr):
    name: str = ""


@dataclass
class Index(Expr):
    """A buffer element read: ``point[index]``."""
    name: str = ""
    index: Expr | None = None


@dataclass
class Comp(Expr):
    """Single-component access on a vector value: ``e.x`` / ``e.s0``…``e.sF``."""
    base: Expr | None = None
    comp: int = 0


@dataclass
class Unary(Expr):
    op: str = ""
    operand: Expr | None = None


@dataclass
class Binary(Expr):
    op: str = ""
    left: Expr | None = None
    right: Expr | None = None


@dataclass
class Ternary(Expr):
    cond: Expr | None = None
    then: Expr | None = None
    other: Expr | None = None


@dataclass
class Call(Expr):
    name: str = ""
    args: list[Expr] = field(default_factory=list)


@dataclass
class Ctor(Expr):
    """Vector constructor ``(typeN)(e1, …, eN)``; width 1 is a scalar cast."""
    ctype: DataType | None = None
    args: list[Expr] = field(default_factory=list)


@dataclass
class LValue:
    line: int
    col: int
    name: str = ""
    index: Expr | None = None  # present for buffer writes
    comp: int | None = None  # single-component write


@dataclass
class Stmt:
    line: int
    col: int


@dataclass
class Decl(Stmt):
    dtype: DataType | None = None
    name: str = ""
    init: Expr | None = None


@dataclass
class Assign(Stmt):
    target: LValue | None = None
    value: Expr | None = None


@dataclass
class If(Stmt):
    cond: Expr | None = None
    then: Stmt | None = None
    other: Stmt | None = None


@dataclass
class For(Stmt):
    init: Stmt | None = None  # Decl or Assign, or None for a bare ';'
    cond: Expr | None = None
    update: Assign | None = None
    body: Stmt | None = None


@dataclass
class Block(Stmt):
    stmts: list[Stmt] = field(default_factory=list)

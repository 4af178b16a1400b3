"""Recursive-descent parser for kernel bodies (C expression precedence)."""

from __future__ import annotations

from ..errors import KernelSyntaxError
from ..types import DataType, parse_type_name
from . import ast
from .lexer import Token, tokenize

__all__ = ["parse_body"]

# Binary operators by ascending precedence; all left-associative.
_BINARY_LEVELS: tuple[tuple[str, ...], ...] = (
    ("||",),
    ("&&",),
    ("|",),
    ("^",),
    ("&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
)

_COMPONENT_LETTERS = {"x": 0, "y": 1, "z": 2, "w": 3}


def _component_index(name: str) -> int | None:
    """Map a component selector to its scalar index, or None if not one."""
    if name in _COMPONENT_LETTERS:
        return _COMPONENT_LETTERS[name]
    if len(name) == 2 and name[0] == "s" and name[1] in "0123456789abcdefABCDEF":
        return int(name[1], 16)
    return None


def _try_type_name(text: str) -> DataType | None:
    try:
        return parse_type_name(text)
    except ValueError:
        return None


class _Parser:
    def __init__(self, tokens: list[Token], source: str):
        self.tokens = tokens
        self.pos = 0
        self.source = source

    # -- token plumbing ----------------------------------------------------
    def peek(self, ahead: int = 0) -> Token | None:
        i = self.pos + ahead
        return self.tokens[i] if i < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            self.fail("unexpected end of kernel body")
        self.pos += 1
        return tok

    def at_punct(self, *lexemes: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "punct" and tok.lexeme in lexemes

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "keyword" and tok.lexeme == word

    def expect(self, lexeme: str) -> Token:
        tok = self.peek()
        if tok is None or tok.lexeme != lexeme:
            got = "end of input" if tok is None else repr(tok.lexeme)
            self.fail(f"expected {lexeme!r}, got {got}", expected=(lexeme,))
        return self.next()

    def fail(self, message: str, expected: tuple[str, ...] = ()) -> None:
        tok = self.peek()
        if tok is not None:
            raise KernelSyntaxError(message, tok.line, tok.col, expected)
        line = self.source.count("\n") + 1
        col = len(self.source) - self.source.rfind("\n")
        raise KernelSyntaxError(message, line, col, expected)

    # -- statements --------------------------------------------------------
    def parse_body(self) -> list[ast.Stmt]:
        stmts = []
        while self.peek() is not None:
            stmts.append(self.statement())
        return stmts

    def statement(self) -> ast.Stmt:
        tok = self.peek()
        assert tok is not None
        if self.at_punct("{"):
            return self.block()
        if self.at_keyword("if"):
            return self.if_stmt()
        if self.at_keyword("for"):
            return self.for_stmt()
        if tok.kind == "identifier" and _try_type_name(tok.lexeme) is not None:
            return self.decl()
        if tok.kind == "identifier":
            stmt = self.assign()
            self.expect(";")
            return stmt
        self.fail(f"expected a statement, got {tok.lexeme!r}")
        raise AssertionError  # unreachable

    def block(self) -> ast.Block:
        tok = self.expect("{")
        stmts = []
        while not self.at_punct("}"):
            if self.peek() is None:
                self.fail("expected '}'", expected=("}",))
            stmts.append(self.statement())
        self.expect("}")
        return ast.Block(tok.line, tok.col, stmts)

    def if_stmt(self) -> ast.If:
        tok = self.next()  # 'if'
        self.expect("(")
        cond = self.expression()
        self.expect(")")
        then = self.statement()
        other = None
        if self.at_keyword("else"):
            self.next()
            other = self.statement()
        return ast.If(tok.line, tok.col, cond, then, other)

    def for_stmt(self) -> ast.For:
        tok = self.next()  # 'for'
        self.expect("(")
        init: ast.Stmt | None = None
        if self.at_punct(";"):
            self.next()
        else:
            head = self.peek()
            assert head is not None
            if head.kind == "identifier" and _try_type_name(head.lexeme) is not None:
                init = self.decl()
            else:
                init = self.assign()
                self.expect(";")
        cond = self.expression()
        self.expect(";")
        update = self.assign()
        self.expect(")")
        body = self.statement()
        return ast.For(tok.line, tok.col, init, cond, update, body)

    def decl(self) -> ast.Decl:
        tok = self.next()
        dtype = _try_type_name(tok.lexeme)
        assert dtype is not None
        name_tok = self.peek()
        if name_tok is None or name_tok.kind != "identifier":
            self.fail("expected a variable name")
        assert name_tok is not None
        if _try_type_name(name_tok.lexeme) is not None:
            self.fail(f"{name_tok.lexeme!r} is a type name, not a variable name")
        self.next()
        init = None
        if self.at_punct("="):
            self.next()
            init = self.expression()
        self.expect(";")
        return ast.Decl(tok.line, tok.col, dtype, name_tok.lexeme, init)

    def assign(self) -> ast.Assign:
        tok = self.next()
        if tok.kind != "identifier":
            self.fail(f"expected an assignment target, got {tok.lexeme!r}")
        index = None
        comp = None
        if self.at_punct("["):
            self.next()
            index = self.expression()
            self.expect("]")
        if self.at_punct("."):
            self.next()
            comp_tok = self.next()
            comp = _component_index(comp_tok.lexeme) if comp_tok.kind == "identifier" else None
            if comp is None:
                raise KernelSyntaxError(
                    f"invalid component selector {comp_tok.lexeme!r}",
                    comp_tok.line, comp_tok.col)
        target = ast.LValue(tok.line, tok.col, tok.lexeme, index, comp)
        self.expect("=")
        value = self.expression()
        return ast.Assign(tok.line, tok.col, target, value)

    # -- expressions ---------------------------------------------------------
    def expression(self) -> ast.Expr:
        return self.ternary()

    def ternary(self) -> ast.Expr:
        cond = self.binary(0)
        if self.at_punct("?"):
            tok = self.next()
            then = self.ternary()
            self.expect(":")
            other = self.ternary()  # right-associative
            return ast.Ternary(tok.line, tok.col, cond, then, other)
        return cond

    def binary(self, level: int) -> ast.Expr:
        if level >= len(_BINARY_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while self.at_punct(*_BINARY_LEVELS[level]):
            tok = self.next()
            right = self.binary(level + 1)
            left = ast.Binary(tok.line, tok.col, tok.lexeme, left, right)
        return left

    def unary(self) -> ast.Expr:
        if self.at_punct("-", "!", "~"):
            tok = self.next()
            return ast.Unary(tok.line, tok.col, tok.lexeme, self.unary())
        return self.postfix()

    def postfix(self) -> ast.Expr:
        expr = self.primary()
        while True:
            if self.at_punct("[") and isinstance(expr, ast.Ident):
                self.next()
                index = self.expression()
                self.expect("]")
                expr = ast.Index(expr.line, expr.col, expr.name, index)
            elif self.at_punct("."):
                self.next()
                tok = self.next()
                comp = _component_index(tok.lexeme) if tok.kind == "identifier" else None
                if comp is None:
                    raise KernelSyntaxError(
                        f"invalid component selector {tok.lexeme!r}", tok.line, tok.col)
                expr = ast.Comp(tok.line, tok.col, expr, comp)
            else:
                return expr

    def primary(self) -> ast.Expr:
        tok = self.peek()
        if tok is None:
            self.fail("expected an expression")
        assert tok is not None
        if tok.kind == "int":
            self.next()
            return ast.IntLit(tok.line, tok.col, tok.value)
        if tok.kind == "float":
            self.next()
            return ast.FloatLit(tok.line, tok.col, tok.value)
        if tok.kind == "identifier":
            self.next()
            if self.at_punct("("):
                self.next()
                args = self.call_args()
                return ast.Call(tok.line, tok.col, tok.lexeme, args)
            return ast.Ident(tok.line, tok.col, tok.lexeme)
        if self.at_punct("("):
            nxt = self.peek(1)
            after = self.peek(2)
            if (nxt is not None and nxt.kind == "identifier"
                    and _try_type_name(nxt.lexeme) is not None
                    and after is not None and after.lexeme == ")"):
                self.next()  # '('
                self.next()  # type name
                self.next()  # ')'
                ctype = _try_type_name(nxt.lexeme)
                self.expect("(")
                args = self.call_args()
                return ast.Ctor(tok.line, tok.col, ctype, args)
            self.next()
            inner = self.expression()
            self.expect(")")
            return inner
        self.fail(f"expected an expression, got {tok.lexeme!r}")
        raise AssertionError  # unreachable

    def call_args(self) -> list[ast.Expr]:
        args: list[ast.Expr] = []
        if self.at_punct(")"):
            self.next()
            return args
        args.append(self.expression())
        while self.at_punct(","):
            self.next()
            args.append(self.expression())
        self.expect(")")
        return args


def parse_body(source: str) -> list[ast.Stmt]:
    """Parse a kernel body into a statement list.

    Raises :class:`KernelLexError` or :class:`KernelSyntaxError` with a
    source position on bad input.
    """
    return _Parser(tokenize(source), source).parse_body()

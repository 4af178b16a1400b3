"""Tokenizer for the kernel language.

Produces a flat token list with 1-based source positions.  ``scan`` is total:
characters outside the language come back as ``error`` tokens; ``tokenize``
is the strict variant that raises on the first of those.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import KernelLexError

__all__ = ["Token", "scan", "tokenize"]

KEYWORDS = frozenset({"if", "else", "for"})

# Longest first so that ">>" wins over ">".
_PUNCT = (
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+", "-", "*", "/", "%", "<", ">", "=", "!", "~", "&", "|", "^",
    "?", ":", ";", ",", ".", "(", ")", "[", "]", "{", "}",
)

_DIGITS = "0123456789"
_HEX = _DIGITS + "abcdefABCDEF"


@dataclass(frozen=True)
class Token:
    kind: str  # identifier | int | float | punct | keyword | error
    lexeme: str
    line: int
    col: int
    value: object = None  # parsed numeric value for int/float tokens

    def __repr__(self) -> str:  # compact, for diagnostics
        return f"Token({self.kind} {self.lexeme!r} @{self.line}:{self.col})"


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident(c: str) -> bool:
    return c.isalnum() or c == "_"


def scan(source: str) -> list[Token]:
    """Total scan: unknown characters become ``error`` tokens."""
    tokens: list[Token] = []
    i = 0
    line, col = 1, 1
    n = len(source)

    def advance(text: str) -> None:
        nonlocal line, col
        for c in text:
            if c == "\n":
                line += 1
                col = 1
            else:
                col += 1

    while i < n:
        c = source[i]
        if c in " \t\r\n":
            advance(c)
            i += 1
            continue
        if source.startswith("//", i):
            j = source.find("\n", i)
            j = n if j < 0 else j
            advance(source[i:j])
            i = j
            continue
        if source.startswith("/*", i):
            j = source.find("*/", i + 2)
            if j < 0:
                tokens.append(Token("error", source[i:], line, col))
                advance(source[i:])
                i = n
                continue
            advance(source[i : j + 2])
            i = j + 2
            continue

        start_line, start_col = line, col
        if _is_ident_start(c):
            j = i + 1
            while j < n and _is_ident(source[j]):
                j += 1
            text = source[i:j]
            kind = "keyword" if text in KEYWORDS else "identifier"
            tokens.append(Token(kind, text, start_line, start_col))
            advance(text)
            i = j
            continue
        if c in _DIGITS or (c == "." and i + 1 < n and source[i + 1] in _DIGITS):
            tok = _scan_number(source, i, start_line, start_col)
            tokens.append(tok)
            advance(tok.lexeme)
            i += len(tok.lexeme)
            continue
        for p in _PUNCT:
            if source.startswith(p, i):
                tokens.append(Token("punct", p, start_line, start_col))
                advance(p)
                i += len(p)
                break
        else:
            tokens.append(Token("error", c, start_line, start_col))
            advance(c)
            i += 1
    return tokens


def _scan_number(source: str, i: int, line: int, col: int) -> Token:
    n = len(source)
    if source.startswith(("0x", "0X"), i):
        j = i + 2
        while j < n and source[j] in _HEX:
            j += 1
        text = source[i:j]
        if j == i + 2:
            return Token("error", text, line, col)
        return Token("int", text, line, col, value=int(text, 16))

    j = i
    is_float = False
    while j < n and source[j] in _DIGITS:
        j += 1
    if j < n and source[j] == ".":
        is_float = True
        j += 1
        while j < n and source[j] in _DIGITS:
            j += 1
    if j < n and source[j] in "eE":
        k = j + 1
        if k < n and source[k] in "+-":
            k += 1
        if k < n and source[k] in _DIGITS:
            is_float = True
            j = k
            while j < n and source[j] in _DIGITS:
                j += 1
    if j < n and source[j] in "fF":
        is_float = True
        j += 1
    text = source[i:j]
    if is_float:
        return Token("float", text, line, col, value=float(text.rstrip("fF")))
    return Token("int", text, line, col, value=int(text, 10))


def tokenize(source: str) -> list[Token]:
    """Scan ``source`` and raise :class:`KernelLexError` on illegal input."""
    tokens = scan(source)
    for tok in tokens:
        if tok.kind == "error":
            raise KernelLexError(
                f"illegal character {tok.lexeme[:1]!r}", tok.line, tok.col
            )
    return tokens

"""The node-body language: lexer, parser, type checker and evaluator."""

from .lexer import Token, scan, tokenize
from .parser import parse_body
from .typecheck import TypedKernel, compile_kernel, typecheck
from .interp import WorkItemContext, WriteRecord, evaluate, run_lanes, DEFAULT_BUDGET

__all__ = [
    "Token", "scan", "tokenize", "parse_body",
    "TypedKernel", "typecheck", "compile_kernel",
    "WorkItemContext", "WriteRecord", "evaluate", "run_lanes",
    "DEFAULT_BUDGET",
]

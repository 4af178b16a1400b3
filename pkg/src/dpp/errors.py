"""Exception hierarchy for the platform."""

from __future__ import annotations

__all__ = [
    "DppError",
    "ProgramFormatError",
    "KernelError",
    "KernelLexError",
    "KernelSyntaxError",
    "KernelTypeError",
    "KernelRuntimeError",
    "PlanError",
    "EngineRuntimeError",
    "ProtocolError",
    "ClientError",
]


class DppError(Exception):
    """Base class for all platform errors."""


class ProgramFormatError(DppError):
    """A program document is malformed or references unknown entities."""


class KernelError(DppError):
    """Base for kernel-language errors carrying a source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(f"{message} at {line}:{col}" if line else message)


class KernelLexError(KernelError):
    pass


class KernelSyntaxError(KernelError):
    def __init__(self, message: str, line: int = 0, col: int = 0, expected: tuple[str, ...] = ()):
        self.expected = expected
        super().__init__(message, line, col)


class KernelTypeError(KernelError):
    pass


class KernelRuntimeError(DppError):
    """A fault during kernel evaluation (bad index, integer division by zero)."""

    def __init__(self, message: str, work_item: int | None = None):
        self.work_item = work_item
        if work_item is not None:
            message = f"{message} (work-item {work_item})"
        super().__init__(message)


class PlanError(DppError):
    """A program cannot be planned at the requested chunk size."""


class EngineRuntimeError(DppError):
    """A kernel fault annotated with its execution context."""

    def __init__(self, message: str, *, instance: int | None = None,
                 work_item: int | None = None, chunk: int | None = None):
        self.instance = instance
        self.work_item = work_item
        self.chunk = chunk
        where = []
        if chunk is not None:
            where.append(f"chunk {chunk}")
        if instance is not None:
            where.append(f"instance {instance}")
        if work_item is not None:
            where.append(f"work-item {work_item}")
        super().__init__(f"{message} [{', '.join(where)}]" if where else message)


class ProtocolError(DppError):
    """A data-plane wire protocol violation."""


class ClientError(DppError):
    """A client-side failure; ``retriable`` hints whether retrying may help."""

    def __init__(self, message: str, *, retriable: bool = False):
        self.retriable = retriable
        super().__init__(message)

"""Error and unwinding signal types shared by the compiler and the interpreter."""

from __future__ import annotations


class MsSyntaxError(Exception):
    """Syntax error with a position and an expected-token style message."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"syntax error at {line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class CompileError(Exception):
    """Static error raised by a compiler pass (reserved names, bad options, ...)."""


class MsError(Exception):
    """Runtime error of the interpreted program (type errors, stack overflow, ...)."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f" at {line}:{col}" if line is not None else ""
        super().__init__(message + where)
        self.message = message
        self.line = line
        self.col = col


class MsThrow(Exception):
    """A MiniScript `throw`; carries the thrown value. Catchable by MiniScript."""

    def __init__(self, value):
        super().__init__("uncaught MiniScript exception")
        self.value = value


class HostUnwind(Exception):
    """Continuation application: aborts the current continuation down to the driver.

    Not catchable by MiniScript try/catch and does not run finally blocks:
    applying a continuation discards the current context outright.
    """

    def __init__(self, continuation, value):
        super().__init__("continuation applied")
        self.continuation = continuation
        self.value = value

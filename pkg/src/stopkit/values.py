"""Runtime value representations shared by the interpreter and the runtime.

Numbers are Python floats (64-bit), strings/booleans/null map to
str/bool/None. Records and arrays are mutable and compare by identity;
closures carry their defining environment.
"""

from __future__ import annotations

import math


class Env:
    """One environment frame: a flat name map with a lexical parent."""

    __slots__ = ("vars", "parent")

    def __init__(self, parent: "Env | None" = None, vars: dict | None = None):
        self.vars = vars if vars is not None else {}
        self.parent = parent

    def lookup_env(self, name: str) -> "Env | None":
        env = self
        while env is not None:
            if name in env.vars:
                return env
            env = env.parent
        return None


class Closure:
    __slots__ = ("node", "env", "name")

    def __init__(self, node, env: Env, name: str | None = None):
        self.node = node
        self.env = env
        self.name = name or node.name


class Native:
    """A host function exposed to MiniScript. fn(args, this) -> value."""

    __slots__ = ("name", "fn")

    def __init__(self, name: str, fn):
        self.name = name
        self.fn = fn


class Record:
    __slots__ = ("fields",)

    def __init__(self, fields: dict | None = None):
        self.fields = fields if fields is not None else {}


class Array:
    __slots__ = ("items",)

    def __init__(self, items: list | None = None):
        self.items = items if items is not None else []


class Continuation:
    """Immutable snapshot of a reified stack; applying it restores a copy.

    frames: Record values holding label/locals/reenter, innermost first.
    segments: snapshot of any parked deep-stack segments below the captured
    frames, outermost segment first.
    """

    __slots__ = ("frames", "segments")

    def __init__(self, frames: tuple, segments: tuple = ()):
        self.frames = tuple(frames)
        self.segments = tuple(segments)


def truthy(v) -> bool:
    if v is None or v is False:
        return False
    if v is True:
        return True
    if isinstance(v, float):
        return not (v == 0.0 or math.isnan(v))
    if isinstance(v, str):
        return v != ""
    return True


def values_equal(a, b) -> bool:
    """`==`: value equality on primitives, identity on records/arrays/functions."""
    if isinstance(a, float) and isinstance(b, float):
        return a == b
    if isinstance(a, bool) and isinstance(b, bool):
        return a == b
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    if a is None and b is None:
        return True
    if isinstance(a, (Record, Array, Closure, Native, Continuation)):
        return a is b
    return False


def type_name(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, float):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, Record):
        return "record"
    if isinstance(v, Array):
        return "array"
    if isinstance(v, (Closure, Native)):
        return "function"
    if isinstance(v, Continuation):
        return "continuation"
    return type(v).__name__


def format_value(v, depth: int = 0, seen: frozenset = frozenset()) -> str:
    """Deterministic display form used by print() and result reporting."""
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, str):
        return v if depth == 0 else '"' + v + '"'
    if isinstance(v, Record):
        if id(v) in seen or depth > 4:
            return "{...}"
        inner = seen | {id(v)}
        parts = [f"{k}: {format_value(x, depth + 1, inner)}" for k, x in v.fields.items()]
        return "{" + ", ".join(parts) + "}"
    if isinstance(v, Array):
        if id(v) in seen or depth > 4:
            return "[...]"
        inner = seen | {id(v)}
        return "[" + ", ".join(format_value(x, depth + 1, inner) for x in v.items) + "]"
    if isinstance(v, Closure):
        return f"<function {v.name}>" if v.name else "<function>"
    if isinstance(v, Native):
        return f"<function {v.name}>"
    if isinstance(v, Continuation):
        return "<continuation>"
    return str(v)


def format_float(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_jsonable(v, depth: int = 0, seen: frozenset = frozenset()):
    """Lower a MiniScript value to plain JSON data for the wire protocol."""
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return format_float(v)
        return int(v) if v == int(v) and abs(v) < 1e15 else v
    if isinstance(v, Record):
        if id(v) in seen or depth > 6:
            return "{...}"
        inner = seen | {id(v)}
        return {k: to_jsonable(x, depth + 1, inner) for k, x in v.fields.items()}
    if isinstance(v, Array):
        if id(v) in seen or depth > 6:
            return "[...]"
        inner = seen | {id(v)}
        return [to_jsonable(x, depth + 1, inner) for x in v.items]
    return format_value(v)

"""MiniScript abstract syntax.

Every node carries the SourceLoc of the token that started it. Locations
point into the original source and are preserved unchanged by every later
pass, which is what lets breakpoints be set against source lines even on
heavily rewritten programs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

BINARY_OPS = ("+", "-", "*", "/", "%", "<", "<=", ">", ">=", "==", "!=", "&&", "||")


@dataclass(frozen=True)
class SourceLoc:
    line: int  # 1-based
    col: int   # 0-based

    def __str__(self):
        return f"{self.line}:{self.col}"


@dataclass
class Node:
    loc: SourceLoc


# ---------------------------------------------------------------- expressions

@dataclass
class Num(Node):
    value: float


@dataclass
class Str(Node):
    value: str


@dataclass
class Bool(Node):
    value: bool


@dataclass
class Null(Node):
    pass


@dataclass
class Var(Node):
    name: str


@dataclass
class Arguments(Node):
    """The implicit per-call list of actual arguments."""


@dataclass
class BinOp(Node):
    op: str
    lhs: Node
    rhs: Node


@dataclass
class Call(Node):
    callee: Node
    args: list[Node]


@dataclass
class New(Node):
    callee: Node
    args: list[Node]


@dataclass
class Function(Node):
    """Function expression. `name` is set for declaration-form functions."""

    params: list[str]
    body: "Block"
    name: str | None = None


@dataclass
class Record(Node):
    fields: list[tuple[str, Node]]


@dataclass
class Array(Node):
    items: list[Node]


@dataclass
class FieldGet(Node):
    obj: Node
    name: str


@dataclass
class IndexGet(Node):
    obj: Node
    index: Node


# ----------------------------------------------------------------- statements

@dataclass
class Let(Node):
    name: str
    init: Node
    label: int | None = None  # call-site label, set by label_call_sites


@dataclass
class Assign(Node):
    name: str
    value: Node
    label: int | None = None


@dataclass
class FieldSet(Node):
    obj: Node
    name: str
    value: Node


@dataclass
class IndexSet(Node):
    obj: Node
    index: Node
    value: Node


@dataclass
class ExprStmt(Node):
    expr: Node


@dataclass
class If(Node):
    cond: Node
    then: "Block"
    orelse: "Block | None" = None


@dataclass
class While(Node):
    cond: Node
    body: "Block"


@dataclass
class Return(Node):
    value: Node | None = None


@dataclass
class Throw(Node):
    value: Node = None


@dataclass
class Try(Node):
    body: "Block"
    catch_name: str | None = None
    handler: "Block | None" = None
    finalbody: "Block | None" = None
    # name of the local that keeps the caught exception alive across a
    # capture/restore cycle; set when the handler is normalized
    saved_exn: str | None = None


@dataclass
class FuncDecl(Node):
    func: Function


@dataclass
class Block(Node):
    stmts: list[Node] = field(default_factory=list)


@dataclass
class Program:
    stmts: list[Node]
    source_text: str = ""


EXPR_TYPES = (Num, Str, Bool, Null, Var, Arguments, BinOp, Call, New, Function,
              Record, Array, FieldGet, IndexGet)
STMT_TYPES = (Let, Assign, FieldSet, IndexSet, ExprStmt, If, While, Return,
              Throw, Try, FuncDecl, Block)


def structurally_equal(a, b) -> bool:
    """Structural AST equality ignoring source locations and pass annotations."""
    if type(a) is not type(b):
        return False
    if isinstance(a, Program):
        return _eq_list(a.stmts, b.stmts)
    if isinstance(a, Node):
        for f in fields(a):
            if f.name in ("loc", "label", "saved_exn"):
                continue
            if not _eq_any(getattr(a, f.name), getattr(b, f.name)):
                return False
        return True
    return a == b


def _eq_any(x, y):
    if isinstance(x, list) and isinstance(y, list):
        return _eq_list(x, y)
    if isinstance(x, tuple) and isinstance(y, tuple):
        return len(x) == len(y) and all(_eq_any(i, j) for i, j in zip(x, y))
    if isinstance(x, Node) or isinstance(y, Node):
        return structurally_equal(x, y)
    return x == y


def _eq_list(xs, ys):
    return len(xs) == len(ys) and all(_eq_any(x, y) for x, y in zip(xs, ys))


def walk(node):
    """Yield node and every AST descendant (lists included), pre-order."""
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Program):
            stack.extend(reversed(n.stmts))
            continue
        if not isinstance(n, Node):
            continue
        yield n
        for f in fields(n):
            if f.name == "loc":
                continue
            v = getattr(n, f.name)
            if isinstance(v, Node):
                stack.append(v)
            elif isinstance(v, list):
                for item in reversed(v):
                    if isinstance(item, Node):
                        stack.append(item)
                    elif isinstance(item, tuple):
                        stack.extend(x for x in reversed(item) if isinstance(x, Node))

"""Render a MiniScript AST back to source text.

Reparsing the output yields a structurally identical AST (locations aside),
which is what makes the compiler usable as a source-to-source tool.
"""

from __future__ import annotations

from stopkit import ast

_PREC = {
    "||": 1, "&&": 2,
    "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6, "%": 6,
}
_POSTFIX = 8
_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}


def format_number(v: float) -> str:
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError("cannot print a non-finite number literal")
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def quote_string(s: str) -> str:
    return '"' + "".join(_ESCAPES.get(c, c) for c in s) + '"'


def _starts_ambiguously(e: ast.Node) -> bool:
    """True if the expression's leftmost token would start a statement form."""
    while True:
        if isinstance(e, (ast.Function, ast.Record)):
            return True
        if isinstance(e, (ast.Call, ast.New)):
            e = e.callee
        elif isinstance(e, (ast.FieldGet, ast.IndexGet)):
            e = e.obj
        elif isinstance(e, ast.BinOp):
            e = e.lhs
        else:
            return False


class _Printer:
    def __init__(self):
        self.lines: list[str] = []
        self.indent = 0

    def emit(self, text: str):
        self.lines.append("  " * self.indent + text)

    # -------------------------------------------------------------- statements

    def stmt(self, s: ast.Node):
        if isinstance(s, ast.Let):
            self.emit(f"let {s.name} = {self.expr(s.init)};")
        elif isinstance(s, ast.Assign):
            self.emit(f"{s.name} = {self.expr(s.value)};")
        elif isinstance(s, ast.FieldSet):
            self.emit(f"{self.expr(s.obj, _POSTFIX)}.{s.name} = {self.expr(s.value)};")
        elif isinstance(s, ast.IndexSet):
            self.emit(f"{self.expr(s.obj, _POSTFIX)}[{self.expr(s.index)}] = {self.expr(s.value)};")
        elif isinstance(s, ast.ExprStmt):
            text = self.expr(s.expr)
            if _starts_ambiguously(s.expr):
                text = f"({text})"
            self.emit(text + ";")
        elif isinstance(s, ast.If):
            self.if_chain(s)
        elif isinstance(s, ast.While):
            self.emit(f"while ({self.expr(s.cond)}) {{")
            self.body(s.body)
            self.emit("}")
        elif isinstance(s, ast.Return):
            if s.value is None:
                self.emit("return;")
            else:
                self.emit(f"return {self.expr(s.value)};")
        elif isinstance(s, ast.Throw):
            self.emit(f"throw {self.expr(s.value)};")
        elif isinstance(s, ast.Try):
            self.emit("try {")
            self.body(s.body)
            if s.handler is not None:
                self.emit(f"}} catch ({s.catch_name}) {{")
                self.body(s.handler)
            if s.finalbody is not None:
                self.emit("} finally {")
                self.body(s.finalbody)
            self.emit("}")
        elif isinstance(s, ast.FuncDecl):
            f = s.func
            self.emit(f"function {f.name}({', '.join(f.params)}) {{")
            self.body(f.body)
            self.emit("}")
        elif isinstance(s, ast.Block):
            self.emit("{")
            self.body(s)
            self.emit("}")
        else:
            raise TypeError(f"cannot print statement {type(s).__name__}")

    def if_chain(self, s: ast.If):
        self.emit(f"if ({self.expr(s.cond)}) {{")
        self.body(s.then)
        node = s
        while node.orelse is not None:
            stmts = node.orelse.stmts
            if len(stmts) == 1 and isinstance(stmts[0], ast.If):
                node = stmts[0]
                self.emit(f"}} else if ({self.expr(node.cond)}) {{")
                self.body(node.then)
            else:
                self.emit("} else {")
                self.body(node.orelse)
                break
        self.emit("}")

    def body(self, block: ast.Block):
        self.indent += 1
        for s in block.stmts:
            self.stmt(s)
        self.indent -= 1

    # ------------------------------------------------------------- expressions

    def expr(self, e: ast.Node, min_prec: int = 0) -> str:
        if isinstance(e, ast.Num):
            text = format_number(e.value)
            return f"({text})" if e.value < 0 and min_prec >= _POSTFIX else text
        if isinstance(e, ast.Str):
            return quote_string(e.value)
        if isinstance(e, ast.Bool):
            return "true" if e.value else "false"
        if isinstance(e, ast.Null):
            return "null"
        if isinstance(e, ast.Var):
            return e.name
        if isinstance(e, ast.Arguments):
            return "arguments"
        if isinstance(e, ast.BinOp):
            prec = _PREC[e.op]
            text = f"{self.expr(e.lhs, prec)} {e.op} {self.expr(e.rhs, prec + 1)}"
            return f"({text})" if prec < min_prec else text
        if isinstance(e, ast.Call):
            args = ", ".join(self.expr(a) for a in e.args)
            return f"{self.expr(e.callee, _POSTFIX)}({args})"
        if isinstance(e, ast.New):
            args = ", ".join(self.expr(a) for a in e.args)
            callee = self.expr(e.callee, _POSTFIX)
            if isinstance(e.callee, (ast.Call, ast.New, ast.Function)):
                callee = f"({callee})"
            return f"new {callee}({args})"
        if isinstance(e, ast.Function):
            saved, self.lines = self.lines, []
            self.indent += 1
            for s in e.body.stmts:
                self.stmt(s)
            inner = self.lines
            self.indent -= 1
            self.lines = saved
            label = e.name or ""
            head = f"function{' ' + label if label else ''}({', '.join(e.params)}) {{"
            if not inner:
                return head + " }"
            pad = "  " * self.indent
            return head + "\n" + "\n".join(inner) + f"\n{pad}}}"
        if isinstance(e, ast.Record):
            pairs = ", ".join(f"{self._key(k)}: {self.expr(v)}" for k, v in e.fields)
            return "{ " + pairs + " }" if pairs else "{}"
        if isinstance(e, ast.Array):
            return "[" + ", ".join(self.expr(x) for x in e.items) + "]"
        if isinstance(e, ast.FieldGet):
            return f"{self.expr(e.obj, _POSTFIX)}.{e.name}"
        if isinstance(e, ast.IndexGet):
            return f"{self.expr(e.obj, _POSTFIX)}[{self.expr(e.index)}]"
        raise TypeError(f"cannot print expression {type(e).__name__}")

    @staticmethod
    def _key(k: str) -> str:
        if k and (k[0].isalpha() or k[0] in "_$") and all(c.isalnum() or c in "_$" for c in k):
            return k
        return quote_string(k)


def to_source(node) -> str:
    """Print a program (or a single statement) as MiniScript source text."""
    p = _Printer()
    if isinstance(node, ast.Program):
        for s in node.stmts:
            p.stmt(s)
    elif isinstance(node, ast.Node):
        p.stmt(node)
    else:
        raise TypeError("expected a Program or statement node")
    return "\n".join(p.lines) + ("\n" if p.lines else "")

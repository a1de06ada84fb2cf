"""Lowering to labeled A-normal form with boxed captured assignables.

After `anf`, every application either sits in tail position or is the sole
initializer of a compiler-introduced let; `&&`/`||` are gone (lowered to
if/else so calls on the right operand stay conditional); try/catch/finally
is split into nested try/catch and try/finally; caught exceptions are saved
into ordinary locals. `box_assignables` then reroutes variables that are
both reassigned and captured by nested functions through one-cell records,
and `label_call_sites` numbers the non-tail call sites per function.
"""

from __future__ import annotations

from dataclasses import dataclass

from stopkit import ast
from stopkit.ast import SourceLoc
from stopkit.errors import CompileError

BOX_FIELD = "$box"


@dataclass(frozen=True)
class BoxedVar:
    name: str
    loc: SourceLoc


# --------------------------------------------------------------------- helpers

def contains_call(e: ast.Node) -> bool:
    """True if evaluating e can run user code or needs statement lowering."""
    if isinstance(e, (ast.Call, ast.New)):
        return True
    if isinstance(e, ast.BinOp):
        if e.op in ("&&", "||"):
            return True
        return contains_call(e.lhs) or contains_call(e.rhs)
    if isinstance(e, ast.Record):
        return any(contains_call(v) for _, v in e.fields)
    if isinstance(e, ast.Array):
        return any(contains_call(x) for x in e.items)
    if isinstance(e, ast.FieldGet):
        return contains_call(e.obj)
    if isinstance(e, ast.IndexGet):
        return contains_call(e.obj) or contains_call(e.index)
    return False


def _is_literal(e: ast.Node) -> bool:
    return isinstance(e, (ast.Num, ast.Str, ast.Bool, ast.Null))


class _FnCtx:
    """Per-function temporary counter plus the program-wide set of names
    that are ever reassigned (used to keep hoisting minimal)."""

    def __init__(self, prefix: str = "$t", mutable: frozenset = frozenset()):
        self.n = 0
        self.prefix = prefix
        self.mutable = mutable

    def fresh(self) -> str:
        name = f"{self.prefix}{self.n}"
        self.n += 1
        return name

    def child(self) -> "_FnCtx":
        return _FnCtx(self.prefix, self.mutable)


def _assigned_names(program: ast.Program) -> frozenset:
    """Names that some assignment (or rebinding let) can change at runtime.
    Reads of any other variable are stable across hoisted statements."""
    assigned = set()
    let_counts: dict[str, int] = {}
    for node in ast.walk(program):
        if isinstance(node, ast.Assign):
            assigned.add(node.name)
        elif isinstance(node, ast.Let):
            let_counts[node.name] = let_counts.get(node.name, 0) + 1
        elif isinstance(node, ast.FuncDecl):
            let_counts[node.func.name] = let_counts.get(node.func.name, 0) + 1
        elif isinstance(node, ast.Try) and node.catch_name:
            assigned.add(node.catch_name)
    assigned.update(n for n, c in let_counts.items() if c > 1)
    return frozenset(assigned)


# ------------------------------------------------------------------------- anf

def anf(program: ast.Program) -> ast.Program:
    """A-normalize a program; observationally equivalent under the plain
    interpreter."""
    ctx = _FnCtx(mutable=_assigned_names(program))
    out: list[ast.Node] = []
    for s in program.stmts:
        out.extend(_stmt(s, ctx, protected=False))
    result = ast.Program(out, program.source_text)
    result.boxed = getattr(program, "boxed", ())
    return result


def _stmts(stmts, ctx, protected):
    out = []
    for s in stmts:
        out.extend(_stmt(s, ctx, protected))
    return out


def _block(b: ast.Block, ctx, protected) -> ast.Block:
    return ast.Block(b.loc, _stmts(b.stmts, ctx, protected))


def _stmt(s: ast.Node, ctx: _FnCtx, protected: bool) -> list[ast.Node]:
    out: list[ast.Node] = []
    t = type(s)
    if t is ast.Let:
        init = s.init
        if isinstance(init, ast.Function):
            out.append(ast.Let(s.loc, s.name, _function(init, ctx)))
        elif isinstance(init, (ast.Call, ast.New)):
            out.append(ast.Let(s.loc, s.name, _app(init, ctx, out)))
        else:
            e = _atom(init, ctx, out)
            out.append(ast.Let(s.loc, s.name, e))
        return out
    if t is ast.Assign:
        v = s.value
        if isinstance(v, (ast.Call, ast.New, ast.Function)):
            tmp = ctx.fresh()
            if isinstance(v, ast.Function):
                out.append(ast.Let(s.loc, tmp, _function(v, ctx)))
            else:
                out.append(ast.Let(s.loc, tmp, _app(v, ctx, out)))
            out.append(ast.Assign(s.loc, s.name, ast.Var(s.loc, tmp)))
        else:
            out.append(ast.Assign(s.loc, s.name, _atom(v, ctx, out)))
        return out
    if t is ast.FieldSet:
        obj, value = _ordered([s.obj, s.value], ctx, out)
        out.append(ast.FieldSet(s.loc, obj, s.name, value))
        return out
    if t is ast.IndexSet:
        obj, index, value = _ordered([s.obj, s.index, s.value], ctx, out)
        out.append(ast.IndexSet(s.loc, obj, index, value))
        return out
    if t is ast.ExprStmt:
        e = s.expr
        if isinstance(e, (ast.Call, ast.New)):
            out.append(ast.Let(s.loc, ctx.fresh(), _app(e, ctx, out)))
        else:
            out.append(ast.ExprStmt(s.loc, _atom(e, ctx, out)))
        return out
    if t is ast.If:
        cond = _atom(s.cond, ctx, out)
        out.append(ast.If(s.loc, cond, _block(s.then, ctx, protected),
                          _block(s.orelse, ctx, protected) if s.orelse else None))
        return out
    if t is ast.While:
        return _while(s, ctx, out, protected)
    if t is ast.Return:
        if s.value is None:
            out.append(ast.Return(s.loc, None))
        elif isinstance(s.value, ast.Call) and not protected:
            out.append(ast.Return(s.loc, _app(s.value, ctx, out, keep=True)))
        elif isinstance(s.value, (ast.Call, ast.New)):
            tmp = ctx.fresh()
            out.append(ast.Let(s.loc, tmp, _app(s.value, ctx, out)))
            out.append(ast.Return(s.loc, ast.Var(s.loc, tmp)))
        else:
            out.append(ast.Return(s.loc, _atom(s.value, ctx, out)))
        return out
    if t is ast.Throw:
        out.append(ast.Throw(s.loc, _atom(s.value, ctx, out)))
        return out
    if t is ast.Try:
        return [_try(s, ctx, protected)]
    if t is ast.FuncDecl:
        out.append(ast.FuncDecl(s.loc, _function(s.func, ctx)))
        return out
    if t is ast.Block:
        out.append(_block(s, ctx, protected))
        return out
    raise CompileError(f"cannot normalize {t.__name__}")


def _while(s: ast.While, ctx, out, protected) -> list[ast.Node]:
    pre: list[ast.Node] = []
    cond = _atom(s.cond, ctx, pre)
    body = _block(s.body, ctx, protected)
    if not pre:
        out.append(ast.While(s.loc, cond, body))
        return out
    # the condition needs statements: bind it to a flag recomputed at the
    # end of each iteration so it is re-evaluated exactly once per pass
    flag = ctx.fresh()
    out.extend(pre)
    out.append(ast.Let(s.loc, flag, cond))
    again: list[ast.Node] = []
    cond2 = _atom(s.cond, ctx, again)
    body.stmts.extend(again)
    body.stmts.append(ast.Assign(s.loc, flag, cond2))
    out.append(ast.While(s.loc, ast.Var(s.loc, flag), body))
    return out


def _try(s: ast.Try, ctx, protected) -> ast.Try:
    if s.handler is not None and s.finalbody is not None:
        inner = ast.Try(s.loc, s.body, s.catch_name, s.handler, None)
        split = ast.Try(s.loc, ast.Block(s.loc, [inner]), None, None, s.finalbody)
        return _try(split, ctx, protected)
    if s.handler is not None:
        body = _block(s.body, ctx, True)
        formal = ctx.fresh().replace("$t", "$c")
        saved = s.catch_name
        handler_stmts = [ast.Let(s.handler.loc, saved,
                                 ast.Var(s.handler.loc, formal))]
        handler_stmts += _stmts(s.handler.stmts, ctx, protected)
        node = ast.Try(s.loc, body, formal,
                       ast.Block(s.handler.loc, handler_stmts), None)
        node.saved_exn = saved
        return node
    body = _block(s.body, ctx, True)
    final = _block(s.finalbody, ctx, True)
    return ast.Try(s.loc, body, None, None, final)


def _function(f: ast.Function, outer: _FnCtx) -> ast.Function:
    ctx = outer.child()
    body = ast.Block(f.body.loc, _stmts(f.body.stmts, ctx, False))
    fn = ast.Function(f.loc, list(f.params), body, f.name)
    return fn


def _app(e, ctx, out, keep: bool = False):
    """Normalize a call/new; the application itself stays where the caller
    puts it (let init, or return position when keep=True)."""
    parts: list[ast.Node] = []
    method_obj = None
    if isinstance(e, ast.Call) and isinstance(e.callee, (ast.FieldGet, ast.IndexGet)):
        method_obj = e.callee.obj
        parts.append(method_obj)
        if isinstance(e.callee, ast.IndexGet):
            parts.append(e.callee.index)
        parts.extend(e.args)
    else:
        parts.append(e.callee)
        parts.extend(e.args)
    atoms = _ordered(parts, ctx, out)
    if method_obj is not None:
        if isinstance(e.callee, ast.FieldGet):
            callee = ast.FieldGet(e.callee.loc, atoms[0], e.callee.name)
            args = atoms[1:]
        else:
            callee = ast.IndexGet(e.callee.loc, atoms[0], atoms[1])
            args = atoms[2:]
    else:
        callee = atoms[0]
        args = atoms[1:]
        if isinstance(e, ast.Call) and not isinstance(callee, ast.Var):
            tmp = ctx.fresh()
            out.append(ast.Let(e.loc, tmp, callee))
            callee = ast.Var(e.loc, tmp)
    cls = ast.Call if isinstance(e, ast.Call) else ast.New
    return cls(e.loc, callee, list(args))


def _ordered(exprs, ctx, out):
    """Atomize sibling expressions preserving left-to-right effects: when a
    later sibling can run user code, earlier siblings whose value could be
    changed by it are bound to temporaries first."""
    call_idx = [i for i, e in enumerate(exprs) if contains_call(e)]
    last = max(call_idx) if call_idx else -1
    atoms = []
    for i, e in enumerate(exprs):
        a = _atom(e, ctx, out)
        if i < last and not _stable_atom(a, ctx):
            tmp = ctx.fresh()
            out.append(ast.Let(a.loc, tmp, a))
            a = ast.Var(e.loc, tmp)
        atoms.append(a)
    return atoms


def _stable_atom(a, ctx: _FnCtx) -> bool:
    """True when re-reading the atom after an intervening call is safe."""
    if _is_literal(a) or isinstance(a, ast.Arguments):
        return True
    if isinstance(a, ast.Var):
        return a.name not in ctx.mutable
    return False


def _atom(e: ast.Node, ctx: _FnCtx, out: list) -> ast.Node:
    """Rewrite e so it contains no application, lowering as needed into out."""
    t = type(e)
    if t in (ast.Num, ast.Str, ast.Bool, ast.Null, ast.Var, ast.Arguments):
        return e
    if t is ast.BinOp:
        if e.op in ("&&", "||"):
            return _short_circuit(e, ctx, out)
        lhs, rhs = _ordered([e.lhs, e.rhs], ctx, out)
        return ast.BinOp(e.loc, e.op, lhs, rhs)
    if t in (ast.Call, ast.New):
        tmp = ctx.fresh()
        out.append(ast.Let(e.loc, tmp, _app(e, ctx, out)))
        return ast.Var(e.loc, tmp)
    if t is ast.Function:
        tmp = ctx.fresh()
        out.append(ast.Let(e.loc, tmp, _function(e, ctx)))
        return ast.Var(e.loc, tmp)
    if t is ast.Record:
        values = _ordered([v for _, v in e.fields], ctx, out)
        return ast.Record(e.loc, [(k, v) for (k, _), v in zip(e.fields, values)])
    if t is ast.Array:
        return ast.Array(e.loc, _ordered(e.items, ctx, out))
    if t is ast.FieldGet:
        return ast.FieldGet(e.loc, _atom(e.obj, ctx, out), e.name)
    if t is ast.IndexGet:
        obj, index = _ordered([e.obj, e.index], ctx, out)
        return ast.IndexGet(e.loc, obj, index)
    raise CompileError(f"cannot normalize expression {t.__name__}")


def _short_circuit(e: ast.BinOp, ctx, out) -> ast.Node:
    """`a && b` / `a || b` lowered to an if/else over a flag variable."""
    flag = ctx.fresh()
    lhs = _atom(e.lhs, ctx, out)
    out.append(ast.Let(e.loc, flag, lhs))
    rhs_stmts: list[ast.Node] = []
    rhs = _atom(e.rhs, ctx, rhs_stmts)
    rhs_stmts.append(ast.Assign(e.loc, flag, rhs))
    branch = ast.Block(e.loc, rhs_stmts)
    if e.op == "&&":
        out.append(ast.If(e.loc, ast.Var(e.loc, flag), branch, None))
    else:
        out.append(ast.If(e.loc, ast.Var(e.loc, flag), ast.Block(e.loc, []), branch))
    return ast.Var(e.loc, flag)


# ----------------------------------------------------------------- ANF checker

def check_anf(program: ast.Program):
    """Reject any program that is not in A-normal form."""

    def expr(e, where):
        if isinstance(e, (ast.Call, ast.New)):
            raise CompileError(f"nested application in {where}")
        if isinstance(e, ast.Function):
            raise CompileError(f"nested function expression in {where}")
        if isinstance(e, ast.BinOp):
            if e.op in ("&&", "||"):
                raise CompileError(f"short-circuit operator survived in {where}")
            expr(e.lhs, where)
            expr(e.rhs, where)
        elif isinstance(e, ast.Record):
            for _, v in e.fields:
                expr(v, where)
        elif isinstance(e, ast.Array):
            for x in e.items:
                expr(x, where)
        elif isinstance(e, ast.FieldGet):
            expr(e.obj, where)
        elif isinstance(e, ast.IndexGet):
            expr(e.obj, where)
            expr(e.index, where)

    def app_parts(e):
        if isinstance(e.callee, (ast.FieldGet, ast.IndexGet)):
            expr(e.callee.obj, "callee")
            if isinstance(e.callee, ast.IndexGet):
                expr(e.callee.index, "callee index")
        else:
            expr(e.callee, "callee")
        for a in e.args:
            expr(a, "argument")

    def stmt(s, protected):
        if isinstance(s, ast.Let):
            if isinstance(s.init, (ast.Call, ast.New)):
                app_parts(s.init)
            elif isinstance(s.init, ast.Function):
                block(s.init.body, False)
            else:
                expr(s.init, "let initializer")
        elif isinstance(s, ast.Assign):
            expr(s.value, "assignment")
        elif isinstance(s, ast.FieldSet):
            expr(s.obj, "target")
            expr(s.value, "assignment")
        elif isinstance(s, ast.IndexSet):
            expr(s.obj, "target")
            expr(s.index, "index")
            expr(s.value, "assignment")
        elif isinstance(s, ast.ExprStmt):
            expr(s.expr, "expression statement")
        elif isinstance(s, ast.If):
            expr(s.cond, "condition")
            block(s.then, protected)
            if s.orelse:
                block(s.orelse, protected)
        elif isinstance(s, ast.While):
            expr(s.cond, "loop condition")
            block(s.body, protected)
        elif isinstance(s, ast.Return):
            if isinstance(s.value, ast.Call):
                if protected:
                    raise CompileError("tail call inside a protected region")
                app_parts(s.value)
            elif s.value is not None:
                expr(s.value, "return value")
        elif isinstance(s, ast.Throw):
            expr(s.value, "throw")
        elif isinstance(s, ast.Try):
            if s.handler is not None and s.finalbody is not None:
                raise CompileError("try/catch/finally must be split")
            block(s.body, True)
            if s.handler:
                block(s.handler, protected)
            if s.finalbody:
                block(s.finalbody, True)
        elif isinstance(s, ast.FuncDecl):
            block(s.func.body, False)
        elif isinstance(s, ast.Block):
            block(s, protected)

    def block(b, protected):
        for s in b.stmts:
            stmt(s, protected)

    for s in program.stmts:
        stmt(s, False)
    return program


# -------------------------------------------------------------------- labeling

def label_call_sites(program: ast.Program) -> ast.Program:
    """Assign 0,1,2,... per function, in statement order, to every non-tail
    application; tail calls stay unlabeled."""

    def visit_fn(stmts):
        counter = [0]

        def stmt(s):
            if isinstance(s, ast.Let):
                if isinstance(s.init, (ast.Call, ast.New)):
                    s.label = counter[0]
                    counter[0] += 1
                elif isinstance(s.init, ast.Function):
                    visit_fn(s.init.body.stmts)
            elif isinstance(s, ast.If):
                for x in s.then.stmts:
                    stmt(x)
                if s.orelse:
                    for x in s.orelse.stmts:
                        stmt(x)
            elif isinstance(s, ast.While):
                for x in s.body.stmts:
                    stmt(x)
            elif isinstance(s, ast.Try):
                for x in s.body.stmts:
                    stmt(x)
                if s.handler:
                    for x in s.handler.stmts:
                        stmt(x)
                if s.finalbody:
                    for x in s.finalbody.stmts:
                        stmt(x)
            elif isinstance(s, ast.FuncDecl):
                visit_fn(s.func.body.stmts)
            elif isinstance(s, ast.Block):
                for x in s.stmts:
                    stmt(x)

        for s in stmts:
            stmt(s)

    visit_fn(program.stmts)
    return program


def labels_in(stmts) -> list[int]:
    """Labels of call sites lexically inside stmts, nested functions excluded."""
    found: list[int] = []

    def stmt(s):
        if isinstance(s, ast.Let):
            if s.label is not None:
                found.append(s.label)
        elif isinstance(s, ast.If):
            for x in s.then.stmts:
                stmt(x)
            if s.orelse:
                for x in s.orelse.stmts:
                    stmt(x)
        elif isinstance(s, ast.While):
            for x in s.body.stmts:
                stmt(x)
        elif isinstance(s, ast.Try):
            for x in s.body.stmts:
                stmt(x)
            if s.handler:
                for x in s.handler.stmts:
                    stmt(x)
            if s.finalbody:
                for x in s.finalbody.stmts:
                    stmt(x)
        elif isinstance(s, ast.Block):
            for x in s.stmts:
                stmt(x)

    for s in stmts:
        stmt(s)
    return found


# ---------------------------------------------------------------------- boxing

class _Binding:
    __slots__ = ("name", "scope", "loc", "initialized", "assigned", "nested_ref")

    def __init__(self, name, scope, loc, initialized=False):
        self.name = name
        self.scope = scope
        self.loc = loc
        self.initialized = initialized
        self.assigned = False
        self.nested_ref = False


class _Scope:
    def __init__(self, parent, node):
        self.parent = parent
        self.node = node  # Function node or Program
        self.bindings: dict[str, _Binding] = {}

    def resolve(self, name):
        s = self
        while s is not None:
            b = s.bindings.get(name)
            if b is not None:
                return b
            s = s.parent
        return None


def _collect_declarations(scope: _Scope, params, stmts, loc):
    from stopkit.interp import declared_names
    for p in params:
        scope.bindings[p] = _Binding(p, scope, loc, initialized=True)
    for name in declared_names(stmts):
        if name not in scope.bindings:
            scope.bindings[name] = _Binding(name, scope, loc)


def _analyze(program: ast.Program) -> dict[int, list[_Binding]]:
    """Find variables assigned after initialization and referenced by a
    nested function; keyed by id() of the owning Function node / Program."""
    top = _Scope(None, program)
    _collect_declarations(top, [], program.stmts, SourceLoc(1, 0))

    def reference(scope, name, is_write, loc):
        b = scope.resolve(name)
        if b is None:
            return
        if b.scope is not scope:
            b.nested_ref = True
        if is_write:
            if b.initialized:
                b.assigned = True
            else:
                b.initialized = True
                b.loc = loc

    def expr(scope, e):
        if isinstance(e, ast.Var):
            reference(scope, e.name, False, e.loc)
        elif isinstance(e, ast.BinOp):
            expr(scope, e.lhs)
            expr(scope, e.rhs)
        elif isinstance(e, (ast.Call, ast.New)):
            expr(scope, e.callee)
            for a in e.args:
                expr(scope, a)
        elif isinstance(e, ast.Function):
            function(scope, e)
        elif isinstance(e, ast.Record):
            for _, v in e.fields:
                expr(scope, v)
        elif isinstance(e, ast.Array):
            for x in e.items:
                expr(scope, x)
        elif isinstance(e, ast.FieldGet):
            expr(scope, e.obj)
        elif isinstance(e, ast.IndexGet):
            expr(scope, e.obj)
            expr(scope, e.index)

    def function(parent, f: ast.Function):
        scope = _Scope(parent, f)
        scopes.append(scope)
        _collect_declarations(scope, f.params, f.body.stmts, f.loc)
        for s in f.body.stmts:
            stmt(scope, s)

    def stmt(scope, s):
        if isinstance(s, ast.Let):
            expr(scope, s.init)
            reference(scope, s.name, True, s.loc)
        elif isinstance(s, ast.Assign):
            expr(scope, s.value)
            reference(scope, s.name, True, s.loc)
        elif isinstance(s, ast.FieldSet):
            expr(scope, s.obj)
            expr(scope, s.value)
        elif isinstance(s, ast.IndexSet):
            expr(scope, s.obj)
            expr(scope, s.index)
            expr(scope, s.value)
        elif isinstance(s, ast.ExprStmt):
            expr(scope, s.expr)
        elif isinstance(s, ast.If):
            expr(scope, s.cond)
            for x in s.then.stmts:
                stmt(scope, x)
            if s.orelse:
                for x in s.orelse.stmts:
                    stmt(scope, x)
        elif isinstance(s, ast.While):
            expr(scope, s.cond)
            for x in s.body.stmts:
                stmt(scope, x)
        elif isinstance(s, ast.Return):
            if s.value is not None:
                expr(scope, s.value)
        elif isinstance(s, ast.Throw):
            expr(scope, s.value)
        elif isinstance(s, ast.Try):
            for x in s.body.stmts:
                stmt(scope, x)
            if s.handler:
                if s.catch_name:
                    reference(scope, s.catch_name, True, s.loc)
                for x in s.handler.stmts:
                    stmt(scope, x)
            if s.finalbody:
                for x in s.finalbody.stmts:
                    stmt(scope, x)
        elif isinstance(s, ast.FuncDecl):
            function(scope, s.func)
            reference(scope, s.func.name, True, s.loc)
        elif isinstance(s, ast.Block):
            for x in s.stmts:
                stmt(scope, x)

    scopes = [top]
    for s in program.stmts:
        stmt(top, s)
    boxed: dict[int, list[_Binding]] = {}
    for scope in scopes:
        hits = [b for b in scope.bindings.values()
                if b.assigned and b.nested_ref and b.name not in ("this", "arguments")]
        if hits:
            boxed[id(scope.node)] = hits
    return boxed


def box_assignables(program: ast.Program) -> ast.Program:
    """Reroute qualifying variables through `{$box: ...}` cells so closures
    created before a capture still share state with code that resumes after
    a restore."""
    boxed_map = _analyze(program)
    counter_stack = [_FnCtx("$b")]

    def boxed_names(node) -> dict[str, _Binding]:
        return {b.name: b for b in boxed_map.get(id(node), [])}

    class Rewriter:
        def __init__(self, parent, node):
            self.parent = parent
            self.node = node
            self.boxed = boxed_names(node)
            from stopkit.interp import declared_names
            params = node.params if isinstance(node, ast.Function) else []
            stmts = node.body.stmts if isinstance(node, ast.Function) else node.stmts
            self.declared = set(params) | set(declared_names(stmts))

        def is_boxed(self, name) -> bool:
            r = self
            while r is not None:
                if name in r.declared:
                    return name in r.boxed
                r = r.parent
            return False

        def read(self, e: ast.Var):
            if self.is_boxed(e.name):
                return ast.FieldGet(e.loc, e, BOX_FIELD)
            return e

        def expr(self, e):
            t = type(e)
            if t is ast.Var:
                return self.read(e)
            if t is ast.BinOp:
                return ast.BinOp(e.loc, e.op, self.expr(e.lhs), self.expr(e.rhs))
            if t is ast.Record:
                return ast.Record(e.loc, [(k, self.expr(v)) for k, v in e.fields])
            if t is ast.Array:
                return ast.Array(e.loc, [self.expr(x) for x in e.items])
            if t is ast.FieldGet:
                return ast.FieldGet(e.loc, self.expr(e.obj), e.name)
            if t is ast.IndexGet:
                return ast.IndexGet(e.loc, self.expr(e.obj), self.expr(e.index))
            if t is ast.Function:
                return self.function(e)
            return e

        def app(self, e, out):
            """Rewrite a call/new; a boxed plain callee is read into a temp so
            the call does not turn into a method call on the box cell."""
            c = e.callee
            if isinstance(c, ast.Var) and self.is_boxed(c.name) and isinstance(e, ast.Call):
                tmp = counter_stack[-1].fresh()
                out.append(ast.Let(e.loc, tmp, self.read(c)))
                callee = ast.Var(e.loc, tmp)
            elif isinstance(c, ast.FieldGet):
                callee = ast.FieldGet(c.loc, self.expr(c.obj), c.name)
            elif isinstance(c, ast.IndexGet):
                callee = ast.IndexGet(c.loc, self.expr(c.obj), self.expr(c.index))
            else:
                callee = self.expr(c)
            cls = ast.Call if isinstance(e, ast.Call) else ast.New
            return cls(e.loc, callee, [self.expr(a) for a in e.args])

        def function(self, f: ast.Function) -> ast.Function:
            sub = Rewriter(self, f)
            counter_stack.append(_FnCtx("$b"))
            body = sub.body_with_intro(f.body, f.params, f.loc)
            counter_stack.pop()
            out = ast.Function(f.loc, list(f.params), body, f.name)
            out.boxed = tuple(sorted(sub.boxed))
            return out

        def body_with_intro(self, body: ast.Block, params, loc) -> ast.Block:
            stmts = self.stmts(body.stmts)
            intro: list[ast.Node] = []
            for name, binding in self.boxed.items():
                cell = ast.Record(binding.loc, [(BOX_FIELD, ast.Null(binding.loc))])
                if name in params:
                    cell = ast.Record(binding.loc,
                                      [(BOX_FIELD, ast.Var(binding.loc, name))])
                    intro.append(ast.Assign(binding.loc, name, cell))
                else:
                    intro.append(ast.Let(binding.loc, name, cell))
            return ast.Block(body.loc, intro + stmts)

        def stmts(self, stmts):
            out = []
            for s in stmts:
                self.stmt(s, out)
            return out

        def block(self, b: ast.Block) -> ast.Block:
            return ast.Block(b.loc, self.stmts(b.stmts))

        def stmt(self, s, out):
            t = type(s)
            if t is ast.Let:
                init = s.init
                if isinstance(init, (ast.Call, ast.New)):
                    init = self.app(init, out)
                elif isinstance(init, ast.Function):
                    init = self.function(init)
                else:
                    init = self.expr(init)
                if self.is_boxed(s.name):
                    if isinstance(init, (ast.Call, ast.New, ast.Function)):
                        tmp = counter_stack[-1].fresh()
                        node = ast.Let(s.loc, tmp, init)
                        node.label = s.label
                        out.append(node)
                        init = ast.Var(s.loc, tmp)
                    out.append(ast.FieldSet(s.loc, ast.Var(s.loc, s.name),
                                            BOX_FIELD, init))
                else:
                    node = ast.Let(s.loc, s.name, init)
                    node.label = s.label
                    out.append(node)
            elif t is ast.Assign:
                value = self.expr(s.value)
                if self.is_boxed(s.name):
                    out.append(ast.FieldSet(s.loc, ast.Var(s.loc, s.name),
                                            BOX_FIELD, value))
                else:
                    out.append(ast.Assign(s.loc, s.name, value))
            elif t is ast.FieldSet:
                out.append(ast.FieldSet(s.loc, self.expr(s.obj), s.name,
                                        self.expr(s.value)))
            elif t is ast.IndexSet:
                out.append(ast.IndexSet(s.loc, self.expr(s.obj), self.expr(s.index),
                                        self.expr(s.value)))
            elif t is ast.ExprStmt:
                out.append(ast.ExprStmt(s.loc, self.expr(s.expr)))
            elif t is ast.If:
                out.append(ast.If(s.loc, self.expr(s.cond), self.block(s.then),
                                  self.block(s.orelse) if s.orelse else None))
            elif t is ast.While:
                out.append(ast.While(s.loc, self.expr(s.cond), self.block(s.body)))
            elif t is ast.Return:
                if s.value is None:
                    out.append(ast.Return(s.loc, None))
                elif isinstance(s.value, ast.Call):
                    out.append(ast.Return(s.loc, self.app(s.value, out)))
                else:
                    out.append(ast.Return(s.loc, self.expr(s.value)))
            elif t is ast.Throw:
                out.append(ast.Throw(s.loc, self.expr(s.value)))
            elif t is ast.Try:
                node = ast.Try(s.loc, self.block(s.body), s.catch_name,
                               self.block(s.handler) if s.handler else None,
                               self.block(s.finalbody) if s.finalbody else None)
                node.saved_exn = s.saved_exn
                out.append(node)
            elif t is ast.FuncDecl:
                fn = self.function(s.func)
                if self.is_boxed(s.func.name):
                    tmp = counter_stack[-1].fresh()
                    out.append(ast.Let(s.loc, tmp, fn))
                    out.append(ast.FieldSet(s.loc, ast.Var(s.loc, s.func.name),
                                            BOX_FIELD, ast.Var(s.loc, tmp)))
                else:
                    out.append(ast.FuncDecl(s.loc, fn))
            elif t is ast.Block:
                out.append(self.block(s))
            else:
                raise CompileError(f"cannot box-transform {t.__name__}")

    top = Rewriter(None, program)
    stmts = top.stmts(program.stmts)
    intro = []
    for name, binding in top.boxed.items():
        intro.append(ast.Let(binding.loc, name,
                             ast.Record(binding.loc, [(BOX_FIELD, ast.Null(binding.loc))])))
    result = ast.Program(intro + stmts, program.source_text)
    result.boxed = tuple(sorted(top.boxed))
    return result


def normalize(program: ast.Program) -> ast.Program:
    """anf + boxing + labels, checked."""
    p = anf(program)
    check_anf(p)
    p = box_assignables(p)
    check_anf(p)
    return label_call_sites(p)

"""The instrumentation pass: rewrite MiniScript so stacks can be reified.

Every function gets a restore prologue plus `locals`/`reenter` thunks, every
assignment is guarded on execution mode, and every labeled (non-tail) call
site is lowered by the selected strategy:

  checked      after each call, test for capture mode, push a frame, return
  exceptional  wrap each call in a handler that pushes a frame and rethrows
  eager        push the frame before the call, pop it after a normal return

Tail calls stay uninstrumented, which is what preserves proper tail calls.
"""

from __future__ import annotations

from stopkit import ast
from stopkit.anf import (anf, box_assignables, check_anf, label_call_sites,
                         labels_in, BOX_FIELD)
from stopkit.ast import SourceLoc
from stopkit.errors import CompileError
from stopkit.interp import declared_names
from stopkit.options import CompileOptions
from stopkit.parser import parse

RT = "$rt"
MAIN = "$main"
RESULT = "$result"
_LOC = SourceLoc(1, 0)

# names of compiler-provided helper functions, injected un-suspended
HELPER_NAMES = ("$coerceNum", "$coercePlus", "$coerceStr", "$construct", "$bounce")

_HELPER_SOURCES = {
    "$coerceNum": """
let $coerceNum = function(v) {
  if ($rt.isRecord(v)) { return v.valueOf(); }
  return v;
};
""",
    "$coercePlus": """
let $coercePlus = function(v) {
  if ($rt.isRecord(v)) {
    if ($rt.hasField(v, "valueOf")) { return v.valueOf(); }
    return v.toString();
  }
  return v;
};
""",
    "$coerceStr": """
let $coerceStr = function(v) {
  if ($rt.isRecord(v)) { return v.toString(); }
  return v;
};
""",
    "$construct": """
let $construct = function($f, $as) {
  let $obj = {};
  let $r = $rt.reapply($f, $as, $obj, "call");
  if ($rt.isRecord($r)) { return $r; }
  return $obj;
};
""",
    "$bounce": """
let $bounce = function($bf, $ba, $bt) {
  return control(function($bk) {
    let $bv = $rt.reapply($bf, $ba, $bt, "call");
    return $bk($bv);
  });
};
""",
}


# ----------------------------------------------------------------- AST helpers

def _var(name, loc=_LOC):
    return ast.Var(loc, name)


def _num(v, loc=_LOC):
    return ast.Num(loc, float(v))


def _str(v, loc=_LOC):
    return ast.Str(loc, v)


def _rt_call(name, args, loc=_LOC):
    return ast.Call(loc, ast.FieldGet(loc, _var(RT, loc), name), list(args))


def _mode_is(which, loc=_LOC):
    return ast.BinOp(loc, "==", _rt_call("mode", [], loc), _str(which, loc))


def _block(stmts, loc=_LOC):
    return ast.Block(loc, list(stmts))


def _if(cond, then_stmts, else_stmts=None, loc=_LOC):
    return ast.If(loc, cond, _block(then_stmts, loc),
                  _block(else_stmts, loc) if else_stmts is not None else None)


def _guard_normal(stmts, loc=_LOC):
    return _if(_mode_is("normal", loc), stmts, loc=loc)


def _and(a, b, loc=_LOC):
    return ast.BinOp(loc, "&&", a, b)


def _or(a, b, loc=_LOC):
    return ast.BinOp(loc, "||", a, b)


def _label_test(label_var, labels, loc=_LOC):
    """`$l == l1 || $l == l2 || ...`, or false when the set is empty."""
    if not labels:
        return ast.Bool(loc, False)
    test = ast.BinOp(loc, "==", _var(label_var, loc), _num(labels[0], loc))
    for l in labels[1:]:
        test = _or(test, ast.BinOp(loc, "==", _var(label_var, loc), _num(l, loc)), loc)
    return test


def _parse_helper(name) -> ast.Node:
    (decl,) = parse(_HELPER_SOURCES[name]).stmts
    return decl


# ------------------------------------------------------------------ validation

def validate_user_source(program: ast.Program, opts: CompileOptions):
    """Reject reserved names and features outside the selected sub-language."""

    def bad(name, loc):
        raise CompileError(
            f"reserved name {name!r} at {loc}: '$' names belong to the compiler")

    def check_name(name, loc):
        if "$" in name:
            bad(name, loc)

    for node in ast.walk(program):
        if isinstance(node, ast.Var):
            check_name(node.name, node.loc)
        elif isinstance(node, (ast.Let, ast.Assign)):
            check_name(node.name, node.loc)
        elif isinstance(node, ast.Function):
            for p in node.params:
                check_name(p, node.loc)
            if node.name:
                check_name(node.name, node.loc)
        elif isinstance(node, (ast.FieldGet, ast.FieldSet)):
            check_name(node.name, node.loc)
        elif isinstance(node, ast.Record):
            for k, _ in node.fields:
                check_name(k, node.loc)
        elif isinstance(node, ast.Try) and node.catch_name:
            check_name(node.catch_name, node.loc)
        elif isinstance(node, ast.Arguments) and opts.args == "false":
            raise CompileError(
                f"'arguments' at {node.loc} requires args=varargs or args=mixed")

    _forbid_return_in_finally(program.stmts)
    if opts.args == "false":
        _check_static_arity(program)


def _forbid_return_in_finally(stmts):
    def in_finally(body_stmts):
        for s in body_stmts:
            if isinstance(s, ast.Return):
                raise CompileError(
                    f"'return' inside a finally block at {s.loc} is not supported")
            if isinstance(s, ast.If):
                in_finally(s.then.stmts)
                if s.orelse:
                    in_finally(s.orelse.stmts)
            elif isinstance(s, ast.While):
                in_finally(s.body.stmts)
            elif isinstance(s, ast.Try):
                in_finally(s.body.stmts)
                if s.handler:
                    in_finally(s.handler.stmts)
                if s.finalbody:
                    in_finally(s.finalbody.stmts)
            elif isinstance(s, ast.Block):
                in_finally(s.stmts)

    for node in _walk_stmts(stmts):
        if isinstance(node, ast.Try) and node.finalbody is not None:
            in_finally(node.finalbody.stmts)


def _walk_stmts(stmts):
    for s in stmts:
        yield s
        if isinstance(s, ast.If):
            yield from _walk_stmts(s.then.stmts)
            if s.orelse:
                yield from _walk_stmts(s.orelse.stmts)
        elif isinstance(s, ast.While):
            yield from _walk_stmts(s.body.stmts)
        elif isinstance(s, ast.Try):
            yield from _walk_stmts(s.body.stmts)
            if s.handler:
                yield from _walk_stmts(s.handler.stmts)
            if s.finalbody:
                yield from _walk_stmts(s.finalbody.stmts)
        elif isinstance(s, ast.Block):
            yield from _walk_stmts(s.stmts)
        elif isinstance(s, ast.FuncDecl):
            yield from _walk_stmts(s.func.body.stmts)
        elif isinstance(s, ast.Let) and isinstance(s.init, ast.Function):
            yield from _walk_stmts(s.init.body.stmts)


def _check_static_arity(program: ast.Program):
    """Best-effort arity check: names bound exactly once to a function and
    never reassigned are enforced at direct call sites."""
    counts: dict[str, int] = {}
    arity: dict[str, int] = {}
    for node in ast.walk(program):
        if isinstance(node, ast.FuncDecl):
            counts[node.func.name] = counts.get(node.func.name, 0) + 1
            arity[node.func.name] = len(node.func.params)
        elif isinstance(node, ast.Let):
            counts[node.name] = counts.get(node.name, 0) + 1
            if isinstance(node.init, ast.Function):
                arity[node.name] = len(node.init.params)
        elif isinstance(node, (ast.Assign,)):
            counts[node.name] = counts.get(node.name, 0) + 99
        elif isinstance(node, ast.Function):
            for p in node.params:
                counts[p] = counts.get(p, 0) + 99
    fixed = {n: a for n, a in arity.items() if counts.get(n) == 1}
    for node in ast.walk(program):
        if isinstance(node, ast.Call) and isinstance(node.callee, ast.Var):
            want = fixed.get(node.callee.name)
            if want is not None and len(node.args) != want:
                raise CompileError(
                    f"arity mismatch: call of '{node.callee.name}' at {node.loc} "
                    f"passes {len(node.args)} arguments, expected {want} "
                    f"(args=false)")


# ----------------------------------------------------------- source-level passes

def wrap_top_level(program: ast.Program) -> ast.Program:
    """Wrap the top level in `$main`; its return value is the value of the
    last executed top-level expression statement."""
    loc = program.stmts[0].loc if program.stmts else _LOC
    result_decl = ast.Let(loc, RESULT, ast.Null(loc))
    result_decl.synthetic = True
    body: list[ast.Node] = [result_decl]
    for s in program.stmts:
        if isinstance(s, ast.ExprStmt):
            body.append(ast.Assign(s.loc, RESULT, s.expr))
        else:
            body.append(s)
    ret = ast.Return(loc, _var(RESULT, loc))
    ret.synthetic = True
    body.append(ret)
    main = ast.Let(loc, MAIN, ast.Function(loc, [], ast.Block(loc, body), MAIN))
    out = ast.Program([main], program.source_text)
    return out


def insert_suspend_points(program: ast.Program, opts: CompileOptions) -> ast.Program:
    """Add `$rt.maySuspend(line, col, kind)` at function entries, loop back
    edges and (at statement granularity) before every statement; with deep
    stacks, a depth check runs first at every function entry."""
    every = opts.suspend_granularity == "every-statement"
    deep = opts.stacks == "deep"

    def suspend(loc, kind):
        return ast.ExprStmt(loc, _rt_call(
            "maySuspend", [_num(loc.line, loc), _num(loc.col, loc), _str(kind, loc)],
            loc))

    def stmts(body, at_statements):
        out = []
        for s in body:
            synthetic = getattr(s, "synthetic", False)
            s = rewrite(s)
            if at_statements and not synthetic and not isinstance(s, ast.Block):
                out.append(suspend(s.loc, "stmt"))
            out.append(s)
        return out

    def rewrite(s):
        if isinstance(s, ast.Let) and isinstance(s.init, ast.Function):
            return ast.Let(s.loc, s.name, function(s.init))
        if isinstance(s, ast.FuncDecl):
            return ast.FuncDecl(s.loc, function(s.func))
        if isinstance(s, ast.If):
            return ast.If(s.loc, s.cond, _block(stmts(s.then.stmts, every), s.loc),
                          _block(stmts(s.orelse.stmts, every), s.loc) if s.orelse else None)
        if isinstance(s, ast.While):
            body = stmts(s.body.stmts, every)
            body.append(suspend(s.loc, "edge"))
            return ast.While(s.loc, s.cond, _block(body, s.loc))
        if isinstance(s, ast.Try):
            node = ast.Try(
                s.loc, _block(stmts(s.body.stmts, every), s.loc), s.catch_name,
                _block(stmts(s.handler.stmts, every), s.loc) if s.handler else None,
                _block(stmts(s.finalbody.stmts, every), s.loc) if s.finalbody else None)
            node.saved_exn = s.saved_exn
            return node
        if isinstance(s, ast.Block):
            return _block(stmts(s.stmts, every), s.loc)
        return _rewrite_exprs(s, expr)

    def expr(e):
        if isinstance(e, ast.Function):
            return function(e)
        return None

    def function(f: ast.Function) -> ast.Function:
        body = stmts(f.body.stmts, every)
        prologue = []
        if deep:
            prologue.append(ast.ExprStmt(f.loc, _rt_call("deepCheck", [], f.loc)))
        prologue.append(suspend(f.loc, "entry"))
        return ast.Function(f.loc, list(f.params), _block(prologue + body, f.body.loc),
                            f.name)

    return ast.Program(stmts(program.stmts, False), program.source_text)


def _rewrite_exprs(s, fn):
    """Rebuild statement s with fn applied to nested expressions (fn returns a
    replacement or None); used for passes that only care about expressions."""

    def ex(e):
        r = fn(e)
        if r is not None:
            return r
        t = type(e)
        if t is ast.BinOp:
            return ast.BinOp(e.loc, e.op, ex(e.lhs), ex(e.rhs))
        if t is ast.Call:
            return ast.Call(e.loc, ex(e.callee), [ex(a) for a in e.args])
        if t is ast.New:
            return ast.New(e.loc, ex(e.callee), [ex(a) for a in e.args])
        if t is ast.Record:
            return ast.Record(e.loc, [(k, ex(v)) for k, v in e.fields])
        if t is ast.Array:
            return ast.Array(e.loc, [ex(x) for x in e.items])
        if t is ast.FieldGet:
            return ast.FieldGet(e.loc, ex(e.obj), e.name)
        if t is ast.IndexGet:
            return ast.IndexGet(e.loc, ex(e.obj), ex(e.index))
        return e

    t = type(s)
    if t is ast.Let:
        return ast.Let(s.loc, s.name, ex(s.init))
    if t is ast.Assign:
        return ast.Assign(s.loc, s.name, ex(s.value))
    if t is ast.FieldSet:
        return ast.FieldSet(s.loc, ex(s.obj), s.name, ex(s.value))
    if t is ast.IndexSet:
        return ast.IndexSet(s.loc, ex(s.obj), ex(s.index), ex(s.value))
    if t is ast.ExprStmt:
        return ast.ExprStmt(s.loc, ex(s.expr))
    if t is ast.Return:
        return ast.Return(s.loc, ex(s.value) if s.value is not None else None)
    if t is ast.Throw:
        return ast.Throw(s.loc, ex(s.value))
    return s


_NUM_COERCED_OPS = ("-", "*", "/", "%", "<", "<=", ">", ">=")


def desugar_implicits(program: ast.Program, flag: str) -> ast.Program:
    """Expose implicit conversions as real calls so a conversion method can
    capture its continuation. flag "true" rewrites every operator that can
    convert; "plus" only rewrites `+` (string concatenation); "false" leaves
    operators alone, assuming conversions terminate and never capture."""
    if flag == "false":
        return program

    def may_be_record(e) -> bool:
        if isinstance(e, (ast.Num, ast.Str, ast.Bool, ast.Null, ast.BinOp)):
            return False
        return True

    def coerce(helper, e):
        if not may_be_record(e):
            return e
        return ast.Call(e.loc, _var(helper, e.loc), [e])

    def walk_expr(e):
        if isinstance(e, ast.BinOp) and e.op not in ("==", "!=", "&&", "||"):
            lhs = walk_full(e.lhs)
            rhs = walk_full(e.rhs)
            if e.op == "+":
                helper = "$coercePlus" if flag == "true" else "$coerceStr"
                return ast.BinOp(e.loc, e.op, coerce(helper, lhs), coerce(helper, rhs))
            if flag == "true" and e.op in _NUM_COERCED_OPS:
                return ast.BinOp(e.loc, e.op, coerce("$coerceNum", lhs),
                                 coerce("$coerceNum", rhs))
            return ast.BinOp(e.loc, e.op, lhs, rhs)
        return None

    def walk_full(e):
        r = walk_expr(e)
        if r is not None:
            return r
        t = type(e)
        if t is ast.BinOp:
            return ast.BinOp(e.loc, e.op, walk_full(e.lhs), walk_full(e.rhs))
        if t is ast.Call:
            return ast.Call(e.loc, walk_full(e.callee), [walk_full(a) for a in e.args])
        if t is ast.New:
            return ast.New(e.loc, walk_full(e.callee), [walk_full(a) for a in e.args])
        if t is ast.Function:
            return ast.Function(e.loc, list(e.params), walk_block(e.body), e.name)
        if t is ast.Record:
            return ast.Record(e.loc, [(k, walk_full(v)) for k, v in e.fields])
        if t is ast.Array:
            return ast.Array(e.loc, [walk_full(x) for x in e.items])
        if t is ast.FieldGet:
            return ast.FieldGet(e.loc, walk_full(e.obj), e.name)
        if t is ast.IndexGet:
            return ast.IndexGet(e.loc, walk_full(e.obj), walk_full(e.index))
        return e

    def walk_stmt(s):
        if isinstance(s, ast.FuncDecl):
            return ast.FuncDecl(s.loc, walk_full(s.func))
        if isinstance(s, ast.If):
            return ast.If(s.loc, walk_full(s.cond), walk_block(s.then),
                          walk_block(s.orelse) if s.orelse else None)
        if isinstance(s, ast.While):
            return ast.While(s.loc, walk_full(s.cond), walk_block(s.body))
        if isinstance(s, ast.Try):
            node = ast.Try(s.loc, walk_block(s.body), s.catch_name,
                           walk_block(s.handler) if s.handler else None,
                           walk_block(s.finalbody) if s.finalbody else None)
            node.saved_exn = s.saved_exn
            return node
        if isinstance(s, ast.Block):
            return walk_block(s)
        return _rewrite_exprs(s, lambda e: walk_expr(e) or
                              (walk_full(e) if isinstance(e, ast.Function) else None))

    def walk_block(b):
        return ast.Block(b.loc, [walk_stmt(s) for s in b.stmts])

    helpers = ["$coerceNum", "$coercePlus"] if flag == "true" else ["$coerceStr"]
    out = [_parse_helper(h) for h in helpers]
    out += [walk_stmt(s) for s in program.stmts]
    return ast.Program(out, program.source_text)


def transform_constructors(program: ast.Program, mode: str) -> ast.Program:
    """wrapped: lower `new F(a...)` to an allocate-then-invoke helper call so
    no constructor calls survive. direct: keep `new`; the runtime records the
    call kind so restoration can re-invoke plainly yet return the object."""
    if mode == "direct":
        return program
    found = [False]

    def fn(e):
        if isinstance(e, ast.New):
            found[0] = True
            callee = rewrite_expr(e.callee)
            args = ast.Array(e.loc, [rewrite_expr(a) for a in e.args])
            return ast.Call(e.loc, _var("$construct", e.loc), [callee, args])
        if isinstance(e, ast.Function):
            return ast.Function(e.loc, list(e.params), rewrite_block(e.body), e.name)
        return None

    def rewrite_expr(e):
        r = fn(e)
        if r is not None:
            return r
        t = type(e)
        if t is ast.BinOp:
            return ast.BinOp(e.loc, e.op, rewrite_expr(e.lhs), rewrite_expr(e.rhs))
        if t is ast.Call:
            return ast.Call(e.loc, rewrite_expr(e.callee),
                            [rewrite_expr(a) for a in e.args])
        if t is ast.Record:
            return ast.Record(e.loc, [(k, rewrite_expr(v)) for k, v in e.fields])
        if t is ast.Array:
            return ast.Array(e.loc, [rewrite_expr(x) for x in e.items])
        if t is ast.FieldGet:
            return ast.FieldGet(e.loc, rewrite_expr(e.obj), e.name)
        if t is ast.IndexGet:
            return ast.IndexGet(e.loc, rewrite_expr(e.obj), rewrite_expr(e.index))
        return e

    def rewrite_stmt(s):
        if isinstance(s, ast.FuncDecl):
            return ast.FuncDecl(s.loc, rewrite_expr(s.func))
        if isinstance(s, ast.If):
            return ast.If(s.loc, rewrite_expr(s.cond), rewrite_block(s.then),
                          rewrite_block(s.orelse) if s.orelse else None)
        if isinstance(s, ast.While):
            return ast.While(s.loc, rewrite_expr(s.cond), rewrite_block(s.body))
        if isinstance(s, ast.Try):
            node = ast.Try(s.loc, rewrite_block(s.body), s.catch_name,
                           rewrite_block(s.handler) if s.handler else None,
                           rewrite_block(s.finalbody) if s.finalbody else None)
            node.saved_exn = s.saved_exn
            return node
        if isinstance(s, ast.Block):
            return rewrite_block(s)
        return _rewrite_exprs(s, fn)

    def rewrite_block(b):
        return ast.Block(b.loc, [rewrite_stmt(s) for s in b.stmts])

    stmts = [rewrite_stmt(s) for s in program.stmts]
    if found[0]:
        stmts.insert(0, _parse_helper("$construct"))
    return ast.Program(stmts, program.source_text)


# ----------------------------------------------------------- the K transformation

class _FunctionInstrumenter:
    def __init__(self, fn: ast.Function, opts: CompileOptions):
        self.fn = fn
        self.opts = opts
        self.boxed = set(getattr(fn, "boxed", ()))
        self.uses_arguments = any(isinstance(n, ast.Arguments)
                                  for n in ast.walk(fn)
                                  if n is not fn)
        self.need_args = opts.args in ("varargs", "mixed")
        self.try_ids: dict[int, int] = {}
        for i, node in enumerate(n for n in _walk_stmts(fn.body.stmts)
                                 if isinstance(n, ast.Try)):
            self.try_ids[id(node)] = i
        self.locals = self._collect_locals()

    def _collect_locals(self) -> list[str]:
        """Snapshot list: boxed params first, then body declarations, then
        locals invented for try instrumentation."""
        body_declared = declared_names(self.fn.body.stmts)
        self.declared_by_body = set(body_declared)
        names = [p for p in self.fn.params if p in self.boxed]
        names += [n for n in body_declared if n not in names]
        for node in _walk_stmts(self.fn.body.stmts):
            if isinstance(node, ast.Try):
                i = self.try_ids[id(node)]
                if node.finalbody is not None:
                    names += [f"$fin{i}", f"$ret{i}", f"$exn{i}"]
                elif self.opts.cont == "eager":
                    names.append(f"$d{i}")
        return names

    # ---------------------------------------------------------------- prologue

    def instrument(self) -> ast.Function:
        loc = self.fn.loc
        out: list[ast.Node] = []
        out.append(ast.Let(loc, "$self", _rt_call("currentFunction", [], loc)))
        out.append(ast.Let(loc, "$this", _var("this", loc)))
        if self.need_args or self.uses_arguments:
            out.append(ast.Let(loc, "$args", ast.Arguments(loc)))
        if self.opts.ctor == "direct":
            out.append(ast.Let(loc, "$kind", _rt_call("currentCallKind", [], loc)))
        if self.opts.args == "false":
            out.append(ast.ExprStmt(loc, _rt_call(
                "checkArity", [_num(len(self.fn.params), loc)], loc)))
        # `let` is function-scoped, so only names with no surviving `let`
        # statement (locals invented by this pass) need declarations
        for y in self.locals:
            if y not in self.declared_by_body:
                out.append(ast.Let(loc, y, ast.Null(loc)))
        out.append(ast.Let(loc, "$l", ast.Null(loc)))

        restore: list[ast.Node] = [
            ast.Let(loc, "$k", _rt_call("popFrame", [], loc))]
        for i, y in enumerate(self.locals):
            restore.append(ast.Assign(
                loc, y, ast.IndexGet(loc, ast.FieldGet(loc, _var("$k", loc), "locals"),
                                     _num(i, loc))))
        restore.append(ast.Assign(loc, "$l",
                                  ast.FieldGet(loc, _var("$k", loc), "label")))
        if self.opts.args == "mixed":
            restore.append(ast.Assign(loc, "$args",
                                      ast.FieldGet(loc, _var("$k", loc), "args")))
        restore.append(ast.Assign(loc, "$k", _rt_call("topFrame", [], loc)))
        out.append(_if(_mode_is("restore", loc), restore, loc=loc))

        out.append(ast.Let(loc, "$locals", ast.Function(
            loc, [], _block([ast.Return(loc, ast.Array(
                loc, [_var(y, loc) for y in self.locals]))], loc))))
        out.append(ast.Let(loc, "$reenter", ast.Function(
            loc, [], _block([ast.Return(loc, self._reapply_expr(loc))], loc))))

        body = self._rewrite_arguments(self.fn.body.stmts)
        out.extend(self.k_stmts(body))
        result = ast.Function(loc, list(self.fn.params), _block(out, self.fn.body.loc),
                              self.fn.name)
        result.boxed = tuple(sorted(self.boxed))
        return result

    def _reapply_expr(self, loc):
        if self.opts.args == "varargs":
            argspec = _var("$args", loc)
        else:
            argspec = ast.Array(loc, [_var(p, loc) for p in self.fn.params])
        kind = (_var("$kind", loc) if self.opts.ctor == "direct"
                else _str("call", loc))
        return _rt_call("reapply", [_var("$self", loc), argspec,
                                    _var("$this", loc), kind], loc)

    def _rewrite_arguments(self, stmts):
        if not self.uses_arguments:
            return stmts

        def fix(e):
            if isinstance(e, ast.Arguments):
                return _var("$args", e.loc)
            if isinstance(e, ast.Function):
                return e  # nested functions handle their own `arguments`
            return None

        out = []
        for s in stmts:
            out.append(self._map_stmt_exprs(s, fix))
        return out

    def _map_stmt_exprs(self, s, fix):
        if isinstance(s, ast.If):
            return ast.If(s.loc, self._map_expr(s.cond, fix),
                          _block([self._map_stmt_exprs(x, fix) for x in s.then.stmts], s.then.loc),
                          _block([self._map_stmt_exprs(x, fix) for x in s.orelse.stmts], s.orelse.loc)
                          if s.orelse else None)
        if isinstance(s, ast.While):
            return ast.While(s.loc, self._map_expr(s.cond, fix),
                             _block([self._map_stmt_exprs(x, fix) for x in s.body.stmts], s.body.loc))
        if isinstance(s, ast.Try):
            node = ast.Try(s.loc,
                           _block([self._map_stmt_exprs(x, fix) for x in s.body.stmts], s.body.loc),
                           s.catch_name,
                           _block([self._map_stmt_exprs(x, fix) for x in s.handler.stmts], s.handler.loc)
                           if s.handler else None,
                           _block([self._map_stmt_exprs(x, fix) for x in s.finalbody.stmts], s.finalbody.loc)
                           if s.finalbody else None)
            node.saved_exn = s.saved_exn
            self.try_ids[id(node)] = self.try_ids[id(s)]
            return node
        if isinstance(s, ast.Block):
            return _block([self._map_stmt_exprs(x, fix) for x in s.stmts], s.loc)
        if isinstance(s, ast.Let):
            node = _rewrite_exprs(s, fix)
            node.label = s.label
            return node
        return _rewrite_exprs(s, fix)

    def _map_expr(self, e, fix):
        r = fix(e)
        if r is not None:
            return r
        return _rewrite_exprs(ast.ExprStmt(e.loc, e), fix).expr

    # ------------------------------------------------------------ the K rules

    def k_stmts(self, stmts) -> list[ast.Node]:
        out = []
        for s in stmts:
            out.extend(self.k_stmt(s))
        return out

    def k_stmt(self, s) -> list[ast.Node]:
        loc = s.loc
        t = type(s)
        if t is ast.Let:
            if isinstance(s.init, (ast.Call, ast.New)):
                return [self._apply_site(s.name, s.init, s.label, loc)]
            init = s.init
            if isinstance(init, ast.Function):
                init = instrument_function(init, self.opts)
            return [_guard_normal([ast.Let(loc, s.name, init)], loc)]
        if t is ast.Assign:
            return [_guard_normal([s], loc)]
        if t in (ast.FieldSet, ast.IndexSet, ast.ExprStmt, ast.Throw):
            return [_guard_normal([s], loc)]
        if t is ast.If:
            then_test = _or(_and(_mode_is("normal", loc), s.cond, loc),
                            _and(_mode_is("restore", loc),
                                 _label_test("$l", labels_in(s.then.stmts), loc), loc),
                            loc)
            else_stmts = None
            if s.orelse is not None:
                else_test = _or(_mode_is("normal", loc),
                                _and(_mode_is("restore", loc),
                                     _label_test("$l", labels_in(s.orelse.stmts), loc),
                                     loc), loc)
                else_stmts = [_if(else_test, self.k_stmts(s.orelse.stmts), loc=loc)]
            return [_if(then_test, self.k_stmts(s.then.stmts), else_stmts, loc=loc)]
        if t is ast.While:
            test = _or(_and(_mode_is("normal", loc), s.cond, loc),
                       _and(_mode_is("restore", loc),
                            _label_test("$l", labels_in(s.body.stmts), loc), loc),
                       loc)
            return [ast.While(loc, test, _block(self.k_stmts(s.body.stmts), loc))]
        if t is ast.Return:
            if s.value is None:
                return [ast.Return(loc, ast.Null(loc))]
            if isinstance(s.value, ast.Call):
                return [self._tail_call(s)]
            return [s]
        if t is ast.Try:
            return self._k_try(s)
        if t is ast.FuncDecl:
            fn = instrument_function(s.func, self.opts)
            return [_guard_normal([ast.Let(loc, s.func.name, fn)], loc)]
        if t is ast.Block:
            return [_block(self.k_stmts(s.stmts), loc)]
        raise CompileError(f"cannot instrument {t.__name__}")

    def _tail_call(self, s: ast.Return) -> ast.Node:
        call = s.value
        fixed = ast.Call(call.loc, self._fix_callee(call.callee),
                         [self._k_expr(a) for a in call.args])
        return ast.Return(s.loc, fixed)

    def _fix_callee(self, c):
        if isinstance(c, ast.Function):
            return instrument_function(c, self.opts)
        return c

    def _k_expr(self, e):
        if isinstance(e, ast.Function):
            return instrument_function(e, self.opts)
        return e

    # ------------------------------------------------------------- apply sites

    def _frame_record(self, label, loc) -> ast.Record:
        fields = [("label", _num(label, loc)),
                  ("locals", ast.Call(loc, _var("$locals", loc), [])),
                  ("reenter", _var("$reenter", loc))]
        if self.opts.args == "mixed":
            fields.append(("args", _var("$args", loc)))
        if self.opts.ctor == "direct":
            fields.append(("this", _var("$this", loc)))
            fields.append(("kind", _var("$kind", loc)))
        return ast.Record(loc, fields)

    def _apply_site(self, target, app, label, loc) -> ast.Node:
        if label is None:
            raise CompileError("unlabeled non-tail application")
        if isinstance(app, ast.Call):
            fixed = ast.Call(app.loc, self._fix_callee(app.callee),
                             [self._k_expr(a) for a in app.args])
        else:
            fixed = ast.New(app.loc, self._fix_callee(app.callee),
                            [self._k_expr(a) for a in app.args])
        do_call = _if(_mode_is("normal", loc),
                      [ast.Let(loc, target, fixed)],
                      [ast.Let(loc, target,
                               ast.Call(loc, ast.FieldGet(loc, _var("$k", loc),
                                                          "reenter"), []))],
                      loc=loc)
        site_test = _or(_mode_is("normal", loc),
                        ast.BinOp(loc, "==", _var("$l", loc), _num(label, loc)), loc)
        push = ast.ExprStmt(loc, _rt_call("pushFrame",
                                          [self._frame_record(label, loc)], loc))
        if self.opts.cont == "checked":
            inner = [do_call,
                     _if(_mode_is("capture", loc), [push, ast.Return(loc, None)],
                         loc=loc)]
        elif self.opts.cont == "exceptional":
            exn = f"$e{label}"
            handler = [_if(_mode_is("capture", loc), [push], loc=loc),
                       ast.Throw(loc, _var(exn, loc))]
            inner = [ast.Try(loc, _block([do_call], loc), exn, _block(handler, loc),
                             None)]
        else:  # eager
            inner = [push, do_call,
                     ast.ExprStmt(loc, _rt_call("popFrame", [], loc))]
        return _if(site_test, inner, loc=loc)

    # ------------------------------------------------------- try/catch/finally

    def _k_try(self, s: ast.Try) -> list[ast.Node]:
        idx = self.try_ids[id(s)]
        loc = s.loc
        if s.handler is not None:
            return self._k_try_catch(s, idx, loc)
        return self._k_try_finally(s, idx, loc)

    def _saved_exn_read(self, s: ast.Try, loc):
        name = s.saved_exn
        if name in self.boxed:
            return ast.FieldGet(loc, _var(name, loc), BOX_FIELD)
        return _var(name, loc)

    def _k_try_catch(self, s, idx, loc) -> list[ast.Node]:
        out: list[ast.Node] = []
        depth_name = f"$d{idx}"
        if self.opts.cont == "eager":
            out.append(_guard_normal([ast.Assign(loc, depth_name,
                                                 _rt_call("stackDepth", [], loc))],
                                     loc))
        rethrow_guard = _if(
            _and(_mode_is("restore", loc),
                 _label_test("$l", labels_in(s.handler.stmts), loc), loc),
            [ast.Throw(loc, self._saved_exn_read(s, loc))], loc=loc)
        body = [rethrow_guard] + self.k_stmts(s.body.stmts)
        handler: list[ast.Node] = [
            _if(_rt_call("isSignal", [_var(s.catch_name, loc)], loc),
                [ast.Throw(loc, _var(s.catch_name, loc))], loc=loc)]
        if self.opts.cont == "eager":
            handler.append(_guard_normal(
                [ast.ExprStmt(loc, _rt_call("truncateStack",
                                            [_var(depth_name, loc)], loc))], loc))
        handler += self.k_stmts(s.handler.stmts)
        node = ast.Try(loc, _block(body, loc), s.catch_name, _block(handler, loc),
                       None)
        node.saved_exn = s.saved_exn
        out.append(node)
        return out

    def _k_try_finally(self, s, idx, loc) -> list[ast.Node]:
        fin, ret, exn = f"$fin{idx}", f"$ret{idx}", f"$exn{idx}"
        catch_formal = f"$cf{idx}"
        body = self.k_stmts(s.body.stmts)
        body = _rewrite_returns(body, fin, ret)
        recorder = [
            _if(_rt_call("isSignal", [_var(catch_formal, loc)], loc),
                [ast.Throw(loc, _var(catch_formal, loc))], loc=loc),
            _if(_mode_is("normal", loc),
                [ast.Assign(loc, fin, _num(2, loc)),
                 ast.Assign(loc, exn, _var(catch_formal, loc))], loc=loc),
            ast.Throw(loc, _var(catch_formal, loc)),
        ]
        inner = ast.Try(loc, _block(body, loc), catch_formal, _block(recorder, loc),
                        None)
        restore_path = [
            _if(ast.BinOp(loc, "==", _var(fin, loc), _num(1, loc)),
                [ast.Return(loc, _var(ret, loc))], loc=loc),
            _if(ast.BinOp(loc, "==", _var(fin, loc), _num(2, loc)),
                [ast.Throw(loc, _var(exn, loc))], loc=loc),
        ]
        guard = _if(_and(_mode_is("restore", loc),
                         _label_test("$l", labels_in(s.finalbody.stmts), loc), loc),
                    restore_path, [inner], loc=loc)
        outer = ast.Try(loc, _block([guard], loc), None, None,
                        _block(self.k_stmts(s.finalbody.stmts), loc))
        return [_guard_normal([ast.Assign(loc, fin, _num(0, loc))], loc), outer]


def _rewrite_returns(stmts, fin, ret):
    """Record return values flowing into a finally block. Bare `return;`
    statements here are capture aborts and stay untouched (user bare returns
    were rewritten to `return null;` earlier)."""

    def walk(stmts):
        out = []
        for s in stmts:
            if isinstance(s, ast.Return) and s.value is not None:
                out.append(ast.Assign(s.loc, fin, _num(1, s.loc)))
                out.append(ast.Assign(s.loc, ret, s.value))
                out.append(ast.Return(s.loc, _var(ret, s.loc)))
            elif isinstance(s, ast.If):
                node = ast.If(s.loc, s.cond, _block(walk(s.then.stmts), s.then.loc),
                              _block(walk(s.orelse.stmts), s.orelse.loc)
                              if s.orelse else None)
                out.append(node)
            elif isinstance(s, ast.While):
                out.append(ast.While(s.loc, s.cond,
                                     _block(walk(s.body.stmts), s.body.loc)))
            elif isinstance(s, ast.Try):
                node = ast.Try(s.loc, _block(walk(s.body.stmts), s.body.loc),
                               s.catch_name,
                               _block(walk(s.handler.stmts), s.handler.loc)
                               if s.handler else None,
                               _block(walk(s.finalbody.stmts), s.finalbody.loc)
                               if s.finalbody else None)
                node.saved_exn = s.saved_exn
                out.append(node)
            elif isinstance(s, ast.Block):
                out.append(_block(walk(s.stmts), s.loc))
            else:
                out.append(s)
        return out

    return walk(stmts)


def instrument_function(fn: ast.Function, opts: CompileOptions) -> ast.Function:
    return _FunctionInstrumenter(fn, opts).instrument()


def k_transform(program: ast.Program, opts: CompileOptions) -> ast.Program:
    """Instrument every function; top-level statements only define the
    compiled functions and run before the driver starts."""
    out = []
    for s in program.stmts:
        if isinstance(s, ast.Let) and isinstance(s.init, ast.Function):
            out.append(ast.Let(s.loc, s.name, instrument_function(s.init, opts)))
        elif isinstance(s, ast.FuncDecl):
            out.append(ast.FuncDecl(s.loc, instrument_function(s.func, opts)))
        else:
            out.append(s)
    return ast.Program(out, program.source_text)


# ------------------------------------------------------------------ entry points

def instrument(program: ast.Program, opts: CompileOptions | None = None,
               validate: bool = True) -> ast.Program:
    """Full pipeline from a parsed source program to instrumented MiniScript."""
    opts = opts or CompileOptions()
    if validate:
        validate_user_source(program, opts)
    p = wrap_top_level(program)
    p = insert_suspend_points(p, opts)
    p = desugar_implicits(p, opts.implicits)
    p = transform_constructors(p, opts.ctor)
    p.stmts.insert(0, _parse_helper("$bounce"))
    p = anf(p)
    check_anf(p)
    p = box_assignables(p)
    check_anf(p)
    p = label_call_sites(p)
    p = k_transform(p, opts)
    p.options = opts
    return p


def compile_source(text: str, opts: CompileOptions | None = None) -> ast.Program:
    return instrument(parse(text), opts)


def is_instrumented(program: ast.Program) -> bool:
    """Heuristic used by the run command: compiled output references `$rt`."""
    return any(isinstance(n, ast.Var) and n.name == RT for n in ast.walk(program))

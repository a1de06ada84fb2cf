"""Python-source backend: compile a MiniScript function body into one Python
function and exec it.

Must match the closure backend in interp.py observation-for-observation; the
test suite runs the two backends against each other. The payoff is that
straight-line MiniScript becomes straight-line Python with no per-node
closure calls.

Ordering rule: compiling an expression may emit prerequisite lines (temps,
short-circuit branches). Whenever a sibling list contains an expression that
can run user code, every sibling is bound to a temp in source order so those
prerequisite lines cannot leapfrog an earlier operand.
"""

from __future__ import annotations

import math

from stopkit import ast
from stopkit.anf import contains_call
from stopkit.errors import MsError, MsThrow
from stopkit.values import Array, Closure, Record, truthy, values_equal

_CMP_OPS = ("<", "<=", ">", ">=")


class _NoRt:
    """Stands in for the runtime when none is attached: any intrinsic use
    from compiled output run outside the driver fails loudly."""

    def __getattr__(self, name):
        raise MsError("runtime intrinsics require the driver")


_NO_RT = _NoRt()


def _static_bool(e) -> bool:
    if isinstance(e, ast.Bool):
        return True
    if isinstance(e, ast.BinOp):
        if e.op in ("==", "!=") or e.op in _CMP_OPS:
            return True
        if e.op in ("&&", "||"):
            return _static_bool(e.lhs) and _static_bool(e.rhs)
    return False


def _is_atom_src(expr: str) -> bool:
    return expr.isidentifier()


class _Gen:
    def __init__(self, interp, scope, toplevel=False):
        self.interp = interp
        self.scope = scope
        self.toplevel = toplevel
        self.tracing = interp.trace is not None
        self.lines: list[str] = []
        self.indent = 1
        self.tmp = 0
        self.aux = 0
        self.consts: dict[str, object] = {}

    # ------------------------------------------------------------- utilities

    def emit(self, text: str):
        self.lines.append("    " * self.indent + text)

    def fresh(self) -> str:
        self.tmp += 1
        return f"_t{self.tmp}"

    def const(self, value) -> str:
        name = f"_c{len(self.consts)}"
        self.consts[name] = value
        return name

    def hold(self, expr: str) -> str:
        if _is_atom_src(expr):
            return expr
        tmp = self.fresh()
        self.emit(f"{tmp} = {expr}")
        return tmp

    def ordered(self, exprs) -> list[str]:
        """Compile sibling expressions; sequence them through temps when any
        of them can run user code."""
        if any(contains_call(e) for e in exprs):
            return [self.hold(self.ex(e)) for e in exprs]
        return [self.ex(e) for e in exprs]

    # ------------------------------------------------------------ entry point

    def compile_runner(self, stmts, protected=False):
        from stopkit.interp import _Return, _TailCall
        self.emit("v = env.vars")
        self.emit("_rt = I.rt or _NO_RT")
        self.stmts(stmts, protected)
        self.emit("return None")
        src = "def _runner(env):\n" + "\n".join(self.lines) + "\n"
        globs = {
            "I": self.interp,
            "truthy": truthy,
            "values_equal": values_equal,
            "fmod": math.fmod,
            "inf": math.inf,
            "nan": math.nan,
            "MsThrow": MsThrow,
            "MsError": MsError,
            "Record": Record,
            "Array": Array,
            "Closure": Closure,
            "_R": _Return,
            "_TC": _TailCall,
            "_NO_RT": _NO_RT,
        }
        globs.update(self.consts)
        exec(compile(src, "<stopkit-codegen>", "exec"), globs)
        return globs["_runner"]

    def subrunner(self, stmts, protected):
        sub = _Gen(self.interp, self.scope, toplevel=self.toplevel)
        return sub.compile_runner(stmts, protected)

    # ------------------------------------------------------------- statements

    def stmts(self, body, protected, charge=True):
        """Emit a statement list. Without tracing, the step counter is
        charged once per block instead of once per statement; totals match
        a full pass and stay deterministic."""
        if not body:
            self.emit("pass")
            return
        if not self.tracing and charge:
            counted = sum(1 for s in body if not isinstance(s, ast.Block))
            if counted:
                self.emit(f"I.steps += {counted}")
        for s in body:
            self.stmt(s, protected)

    def tick(self, loc):
        if self.tracing:
            self.emit("I.steps += 1")
            self.emit(f"I.trace.append({self.const(loc)})")

    def stmt(self, s, protected):
        t = type(s)
        loc = s.loc

        if t is ast.Let or t is ast.Assign:
            self.tick(loc)
            hops = 0 if t is ast.Let else self.scope.hops(s.name)
            if hops is None:
                self.emit(f"raise MsError('assignment to undeclared variable "
                          f"{s.name!r}', {loc.line}, {loc.col})")
                return
            value = self.ex(s.init if t is ast.Let else s.value)
            self.emit(f"{self.store(s.name, hops)} = {value}")
            return

        if t is ast.ExprStmt:
            self.tick(loc)
            value = self.ex(s.expr)
            target = "I._toplevel_result" if self.toplevel else "_"
            self.emit(f"{target} = {value}")
            return

        if t is ast.If:
            self.tick(loc)
            cond = self.ex(s.cond)
            self.emit(f"if {self.truth(cond, s.cond)}:")
            self.indent += 1
            self.stmts(s.then.stmts, protected)
            self.indent -= 1
            if s.orelse is not None:
                self.emit("else:")
                self.indent += 1
                self.stmts(s.orelse.stmts, protected)
                self.indent -= 1
            return

        if t is ast.While:
            self.emit("while True:")
            self.indent += 1
            if self.tracing:
                self.tick(loc)
            else:
                self.emit("I.steps += 1")  # the clock must advance per pass
            cond = self.ex(s.cond)
            self.emit(f"if not {self.truth(cond, s.cond)}: break")
            self.stmts(s.body.stmts, protected)
            self.indent -= 1
            return

        if t is ast.Return:
            self.tick(loc)
            if s.value is None:
                self.emit("return _R(None)")
            elif isinstance(s.value, ast.Call) and not protected:
                self.tail_call(s.value)
            else:
                self.emit(f"return _R({self.ex(s.value)})")
            return

        if t is ast.FieldSet:
            self.tick(loc)
            obj = self.hold(self.ex(s.obj))
            value = self.hold(self.ex(s.value))
            self.emit(f"if type({obj}) is Record: "
                      f"{obj}.fields[{s.name!r}] = {value}")
            self.emit(f"else: I.field_set_error({obj}, {s.name!r}, "
                      f"{loc.line}, {loc.col})")
            return

        if t is ast.IndexSet:
            self.tick(loc)
            obj = self.hold(self.ex(s.obj))
            idx = self.hold(self.ex(s.index))
            value = self.hold(self.ex(s.value))
            self.emit(f"I.index_set({obj}, {idx}, {value}, {self.const(loc)})")
            return

        if t is ast.Throw:
            self.tick(loc)
            self.emit(f"raise MsThrow({self.ex(s.value)})")
            return

        if t is ast.Try:
            self.try_stmt(s, protected)
            return

        if t is ast.FuncDecl:
            self.tick(loc)
            fn = s.func
            fn._scope = self.scope
            hops = self.scope.hops(fn.name) or 0
            self.emit(f"{self.store(fn.name, hops)} = "
                      f"Closure({self.const(fn)}, env)")
            return

        if t is ast.Block:
            self.stmts(s.stmts, protected)
            return

        raise MsError(f"cannot compile statement {t.__name__}")

    def store(self, name, hops) -> str:
        if hops == 0:
            return f"v[{name!r}]"
        return f"env{'.parent' * hops}.vars[{name!r}]"

    def truth(self, expr, node) -> str:
        return expr if _static_bool(node) else f"truthy({expr})"

    def tail_call(self, call: ast.Call):
        callee, this = self.callee(call)
        args = ", ".join(self.ordered(call.args))
        tc = self.fresh()
        self.emit(f"{tc} = _TC()")
        self.emit(f"{tc}.callee = {callee}")
        self.emit(f"{tc}.this = {this}")
        self.emit(f"{tc}.args = [{args}]")
        self.emit(f"return {tc}")

    def try_stmt(self, s: ast.Try, protected):
        self.tick(s.loc)
        n = self.aux
        self.aux += 1
        has_finally = s.finalbody is not None
        b = self.const(self.subrunner(s.body.stmts, True))
        h = f_ = None
        if s.handler is not None:
            h = self.const(self.subrunner(s.handler.stmts,
                                          has_finally or protected))
        if has_finally:
            f_ = self.const(self.subrunner(s.finalbody.stmts, True))
        p, sig, exc = f"_p{n}", f"_s{n}", f"_e{n}"
        self.emit(f"{p} = None; {sig} = None")
        self.emit("try:")
        self.emit(f"    {sig} = {b}(env)")
        self.emit(f"except MsThrow as {exc}:")
        self.indent += 1
        if h is not None:
            self.emit(f"v[{s.catch_name!r}] = {exc}.value")
            self.emit("try:")
            self.emit(f"    {sig} = {h}(env)")
            self.emit(f"except MsThrow as {exc}b:")
            self.emit(f"    {p} = {exc}b")
        else:
            self.emit(f"{p} = {exc}")
        self.indent -= 1
        if f_ is not None:
            ftmp = self.fresh()
            self.emit(f"{ftmp} = {f_}(env)")
            self.emit(f"if {ftmp} is not None: return {ftmp}")
        self.emit(f"if {p} is not None: raise {p}")
        self.emit(f"if {sig} is not None: return {sig}")

    # ------------------------------------------------------------ expressions

    def ex(self, e) -> str:
        t = type(e)
        if t is ast.Num:
            if e.value != e.value:
                return "nan"
            if math.isinf(e.value):
                return "inf" if e.value > 0 else "(-inf)"
            return repr(e.value)
        if t is ast.Str:
            return repr(e.value)
        if t is ast.Bool:
            return "True" if e.value else "False"
        if t is ast.Null:
            return "None"
        if t is ast.Var or t is ast.Arguments:
            name = "arguments" if t is ast.Arguments else e.name
            hops = self.scope.hops(name)
            if hops is None:
                return f"I.dynamic_lookup(env, {name!r}, {e.loc.line}, {e.loc.col})"
            if hops == 0:
                return f"v[{name!r}]"
            return f"env{'.parent' * hops}.vars[{name!r}]"
        if t is ast.BinOp:
            return self.binop(e)
        if t is ast.Call:
            return self.call(e)
        if t is ast.New:
            parts = self.ordered([e.callee] + list(e.args))
            return f"I.call({parts[0]}, [{', '.join(parts[1:])}], None, 'new')"
        if t is ast.Function:
            e._scope = self.scope
            return f"Closure({self.const(e)}, env)"
        if t is ast.Record:
            values = self.ordered([v for _, v in e.fields])
            pairs = ", ".join(f"{k!r}: {v}" for (k, _), v in zip(e.fields, values))
            return f"Record({{{pairs}}})"
        if t is ast.Array:
            return f"Array([{', '.join(self.ordered(e.items))}])"
        if t is ast.FieldGet:
            obj = self.hold(self.ex(e.obj))
            return (f"({obj}.fields.get({e.name!r}) if type({obj}) is Record "
                    f"else I.field_get({obj}, {e.name!r}, {self.const(e.loc)}))")
        if t is ast.IndexGet:
            obj, idx = self.ordered([e.obj, e.index])
            return f"I.index_get({obj}, {idx}, {self.const(e.loc)})"
        raise MsError(f"cannot compile expression {t.__name__}")

    def callee(self, call: ast.Call):
        """(callee_src, this_src); emits prerequisite lines in order."""
        c = call.callee
        if isinstance(c, ast.FieldGet):
            obj = self.hold(self.ex(c.obj))
            callee = (f"({obj}.fields.get({c.name!r}) if type({obj}) is Record "
                      f"else I.field_get({obj}, {c.name!r}, {self.const(c.loc)}))")
            return self.hold(callee), obj
        if isinstance(c, ast.IndexGet):
            obj = self.hold(self.ex(c.obj))
            idx = self.hold(self.ex(c.index))
            return self.hold(f"I.index_get({obj}, {idx}, {self.const(c.loc)})"), obj
        return self.hold(self.ex(c)), "None"

    def call(self, e: ast.Call) -> str:
        fast = self.intrinsic(e)
        if fast is not None:
            return fast
        callee, this = self.callee(e)
        args = ", ".join(self.ordered(e.args))
        return f"I.call({callee}, [{args}], {this}, 'call')"

    def intrinsic(self, e: ast.Call) -> str | None:
        c = e.callee
        if not (isinstance(c, ast.FieldGet) and isinstance(c.obj, ast.Var)
                and c.obj.name == "$rt"):
            return None
        name = c.name
        args = e.args
        if name == "mode" and not args:
            return "_rt.mode"
        if name == "pushFrame" and len(args) == 1:
            return f"_rt.stack.append({self.ex(args[0])})"
        if name == "popFrame" and not args:
            return "_rt.pop_frame()"
        if name == "topFrame" and not args:
            return "_rt.top_frame()"
        if name == "maySuspend" and len(args) == 3 and \
                isinstance(args[0], ast.Num) and isinstance(args[2], ast.Str):
            return f"_rt.may_suspend({int(args[0].value)}, {args[2].value!r})"
        if name == "deepCheck" and not args:
            return "_rt.deep_check()"
        if name == "currentFunction" and not args:
            return "I.current_closure"
        if name == "currentCallKind" and not args:
            return "I.current_kind"
        if name == "checkArity" and len(args) == 1 and isinstance(args[0], ast.Num):
            n = int(args[0].value)
            return (f"(None if len(I.current_args) == {n} "
                    f"else I.check_arity({n}))")
        if name == "isSignal" and len(args) == 1:
            return f"_rt.is_signal({self.ex(args[0])})"
        if name == "isRecord" and len(args) == 1:
            return f"(type({self.ex(args[0])}) is Record)"
        if name == "hasField" and len(args) == 2:
            obj = self.hold(self.ex(args[0]))
            return f"(type({obj}) is Record and {self.ex(args[1])} in {obj}.fields)"
        if name == "reapply" and len(args) == 4:
            return f"_rt.reapply({', '.join(self.ordered(args))})"
        if name == "stackDepth" and not args:
            return "float(len(_rt.stack))"
        if name == "truncateStack" and len(args) == 1:
            return f"I.rt_truncate({self.ex(args[0])})"
        if name == "control" and len(args) == 1:
            return f"_rt.control({self.ex(args[0])})"
        if name == "enterCall" and not args:
            return "_rt.enter_call()"
        if name == "exitCall" and not args:
            return "_rt.exit_call()"
        return None

    # ---------------------------------------------------------------- binops

    def binop(self, e: ast.BinOp) -> str:
        op = e.op
        if op == "&&" or op == "||":
            if _static_bool(e.lhs) and _static_bool(e.rhs):
                joiner = "and" if op == "&&" else "or"
                return f"({self.ex(e.lhs)} {joiner} {self.ex(e.rhs)})"
            tmp = self.fresh()
            self.emit(f"{tmp} = {self.ex(e.lhs)}")
            test = tmp if _static_bool(e.lhs) else f"truthy({tmp})"
            self.emit(f"if {test}:" if op == "&&" else f"if not ({test}):")
            self.indent += 1
            self.emit(f"{tmp} = {self.ex(e.rhs)}")
            self.indent -= 1
            return tmp
        if op == "==" or op == "!=":
            if self._is_mode_call(e.lhs) and isinstance(e.rhs, ast.Str):
                cmp = "==" if op == "==" else "!="
                return f"(_rt.mode {cmp} {e.rhs.value!r})"
            if isinstance(e.rhs, ast.Str):
                cmp = "==" if op == "==" else "!="
                return f"({self.ex(e.lhs)} {cmp} {e.rhs.value!r})"
            if isinstance(e.rhs, ast.Null):
                cmp = "is" if op == "==" else "is not"
                return f"({self.ex(e.lhs)} {cmp} None)"
            if isinstance(e.rhs, ast.Num) and not contains_call(e.lhs):
                lhs = self.hold(self.ex(e.lhs))
                body = f"(type({lhs}) is float and {lhs} == {self.ex(e.rhs)})"
                return body if op == "==" else f"(not {body})"
            lhs, rhs = self.ordered([e.lhs, e.rhs])
            body = f"values_equal({lhs}, {rhs})"
            return f"({body})" if op == "==" else f"(not {body})"
        lhs, rhs = self.ordered([e.lhs, e.rhs])
        lhs_num = isinstance(e.lhs, ast.Num) and math.isfinite(e.lhs.value)
        rhs_num = isinstance(e.rhs, ast.Num) and math.isfinite(e.rhs.value)
        if not lhs_num:
            lhs = self.hold(lhs)
        if not rhs_num:
            rhs = self.hold(rhs)
        loc = self.const(e.loc)
        tests = [t for t, known in ((f"type({lhs}) is float", lhs_num),
                                    (f"type({rhs}) is float", rhs_num))
                 if not known]
        if op == "/":
            tests.append(f"{rhs} != 0.0")
        elif op == "%":
            # the finite-lhs check avoids fmod's domain error on infinities
            tests.append(f"{rhs} != 0.0")
            if not lhs_num:
                tests.append(f"{lhs} - {lhs} == 0.0")
        both = " and ".join(tests) if tests else "True"
        if op in ("+", "-", "*", "/") or op in _CMP_OPS:
            return (f"(({lhs} {op} {rhs}) if {both} "
                    f"else I.op_slow({op!r}, {lhs}, {rhs}, {loc}))")
        if op == "%":
            return (f"(fmod({lhs}, {rhs}) if {both} "
                    f"else I.op_slow('%', {lhs}, {rhs}, {loc}))")
        raise MsError(f"unknown operator {op}")

    @staticmethod
    def _is_mode_call(e) -> bool:
        return (isinstance(e, ast.Call) and not e.args
                and isinstance(e.callee, ast.FieldGet)
                and e.callee.name == "mode"
                and isinstance(e.callee.obj, ast.Var)
                and e.callee.obj.name == "$rt")


def compile_body(interp, scope, stmts, toplevel=False):
    return _Gen(interp, scope, toplevel).compile_runner(stmts, False)

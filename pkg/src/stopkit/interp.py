"""Deterministic evaluator for MiniScript.

Each AST node is compiled once into a Python closure (a standard speedup for
tree-walkers); variables resolve to a fixed number of environment hops at
compile time, and `$rt` intrinsic calls compile to direct runtime calls.
The host stack limit counts MiniScript activations only, the clock is
virtual by default (a fixed cost per execution step), and tail calls run at
constant host depth unless proper tail calls are disabled.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field

from stopkit import ast
from stopkit.errors import HostUnwind, MsError, MsThrow
from stopkit.values import (Array, Closure, Continuation, Env, Native, Record,
                            format_float, format_value, truthy, type_name,
                            values_equal)

_MIN_RECURSION_LIMIT = 60_000


@dataclass
class InterpConfig:
    host_stack_limit: int = 1000
    step_cost_micros: float = 1.0
    real_clock: bool = False
    proper_tail_calls: bool = True
    metrics_enabled: bool = True
    backend: str = "codegen"  # "codegen" | "closures"

    def __post_init__(self):
        if self.host_stack_limit < 16:
            raise ValueError("host_stack_limit must be at least 16")
        if self.backend not in ("codegen", "closures"):
            raise ValueError("backend must be 'codegen' or 'closures'")


@dataclass
class Outcome:
    result: object = None
    error: str | None = None
    outputs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    def observable(self) -> tuple:
        """What differential tests compare: result, output, error."""
        res = None if self.error is not None else format_value(self.result)
        return (res, tuple(self.outputs), self.error)


class _Return:
    __slots__ = ("value",)

    def __init__(self, value=None):
        self.value = value


class _TailCall:
    __slots__ = ("callee", "args", "this", "kind")

    def __init__(self):
        self.callee = None
        self.args = None
        self.this = None
        self.kind = "call"


def declared_names(fn_body_stmts) -> list[str]:
    """Names bound function-wide by let/function/catch, in textual order.

    MiniScript `let` is function-scoped: the name exists (as null) from
    activation entry, so hoisting performed by the instrumenter is invisible.
    """
    names: list[str] = []
    seen = set()

    def scan_stmts(stmts):
        for s in stmts:
            scan(s)

    def scan(s):
        if isinstance(s, ast.Let):
            add(s.name)
        elif isinstance(s, ast.FuncDecl):
            add(s.func.name)
        elif isinstance(s, ast.If):
            scan_stmts(s.then.stmts)
            if s.orelse:
                scan_stmts(s.orelse.stmts)
        elif isinstance(s, ast.While):
            scan_stmts(s.body.stmts)
        elif isinstance(s, ast.Try):
            scan_stmts(s.body.stmts)
            if s.handler:
                if s.catch_name:
                    add(s.catch_name)
                scan_stmts(s.handler.stmts)
            if s.finalbody:
                scan_stmts(s.finalbody.stmts)
        elif isinstance(s, ast.Block):
            scan_stmts(s.stmts)

    def add(name):
        if name not in seen:
            seen.add(name)
            names.append(name)

    scan_stmts(fn_body_stmts)
    return names


def _scan_arguments(stmts) -> bool:
    """True if stmts syntactically read `arguments` (nested functions have
    their own binding and do not count)."""
    hit = [False]

    def expr(e):
        if hit[0] or e is None:
            return
        t = type(e)
        if t is ast.Arguments:
            hit[0] = True
        elif t is ast.BinOp:
            expr(e.lhs), expr(e.rhs)
        elif t in (ast.Call, ast.New):
            expr(e.callee)
            for a in e.args:
                expr(a)
        elif t is ast.Record:
            for _, v in e.fields:
                expr(v)
        elif t is ast.Array:
            for x in e.items:
                expr(x)
        elif t is ast.FieldGet:
            expr(e.obj)
        elif t is ast.IndexGet:
            expr(e.obj), expr(e.index)
        # nested ast.Function: skipped, it has its own `arguments`

    def stmt(s):
        if hit[0]:
            return
        t = type(s)
        if t is ast.Let:
            expr(s.init if not isinstance(s.init, ast.Function) else None)
        elif t is ast.Assign:
            expr(s.value)
        elif t is ast.FieldSet:
            expr(s.obj), expr(s.value)
        elif t is ast.IndexSet:
            expr(s.obj), expr(s.index), expr(s.value)
        elif t is ast.ExprStmt:
            expr(s.expr)
        elif t is ast.If:
            expr(s.cond)
            for x in s.then.stmts:
                stmt(x)
            if s.orelse:
                for x in s.orelse.stmts:
                    stmt(x)
        elif t is ast.While:
            expr(s.cond)
            for x in s.body.stmts:
                stmt(x)
        elif t is ast.Return:
            expr(s.value)
        elif t is ast.Throw:
            expr(s.value)
        elif t is ast.Try:
            for x in s.body.stmts:
                stmt(x)
            if s.handler:
                for x in s.handler.stmts:
                    stmt(x)
            if s.finalbody:
                for x in s.finalbody.stmts:
                    stmt(x)
        elif t is ast.Block:
            for x in s.stmts:
                stmt(x)

    for s in stmts:
        stmt(s)
    return hit[0]


class _Scope:
    __slots__ = ("names", "parent")

    def __init__(self, names, parent=None):
        self.names = names
        self.parent = parent

    def hops(self, name) -> int | None:
        scope, n = self, 0
        while scope is not None:
            if name in scope.names:
                return n
            scope, n = scope.parent, n + 1
        return None


class _Code:
    """Compiled form of one function: runs its body against an activation."""

    __slots__ = ("node", "params", "declared", "proto", "needs_arguments",
                 "runner", "param_count")

    def __init__(self, node, params, declared, needs_arguments, runner):
        self.node = node
        self.params = params
        self.param_count = len(params)
        self.declared = declared
        self.proto = {name: None for name in declared}
        self.proto["this"] = None
        self.needs_arguments = needs_arguments
        self.runner = runner


class Interp:
    def __init__(self, config: InterpConfig | None = None, trace: bool = False):
        self.cfg = config or InterpConfig()
        self.steps = 0
        self.depth = 0
        self.max_depth = 0
        self.outputs: list[str] = []
        self.trace: list[ast.SourceLoc] | None = [] if trace else None
        self.rt = None  # runtime bridge, set when driving instrumented code
        self.host_internal_depth = 0
        self.current_closure: Closure | None = None
        self.current_args: list = []
        self.current_kind: str = "call"
        self.globals = Env(vars={"this": None})
        self.globals.vars["print"] = Native("print", self._native_print)
        self.globals.vars["control"] = Native("control", self._plain_control)
        self._code_cache: dict[int, _Code] = {}
        self._ptc = self.cfg.proper_tail_calls
        if sys.getrecursionlimit() < _MIN_RECURSION_LIMIT:
            sys.setrecursionlimit(_MIN_RECURSION_LIMIT)

    # ------------------------------------------------------------------ clock

    def now_ms(self) -> float:
        if self.cfg.real_clock:
            return time.monotonic() * 1000.0
        return self.steps * self.cfg.step_cost_micros / 1000.0

    # ------------------------------------------------------------ entry points

    def run_program(self, program: ast.Program) -> Outcome:
        """Evaluate top-level statements; the result is the value of the last
        executed top-level expression statement."""
        out = Outcome()
        try:
            out.result = self.run_top_level(program, capture_result=True)
        except MsThrow as t:
            out.error = "uncaught exception: " + format_value(t.value)
        except MsError as e:
            out.error = str(e)
        out.outputs = list(self.outputs)
        out.metrics = self.metrics()
        return out

    def run_top_level(self, program: ast.Program, capture_result: bool = False):
        names = declared_names(program.stmts)
        for name in names:
            self.globals.vars.setdefault(name, None)
        scope = _Scope(frozenset(self.globals.vars.keys()) | frozenset(names)
                       | {"arguments"})
        self._toplevel_result = None
        if self.cfg.backend == "codegen":
            from stopkit.pycodegen import compile_body
            runner = compile_body(self, scope, program.stmts,
                                  toplevel=capture_result)
        else:
            runner = _BodyCompiler(self, scope, toplevel=capture_result).block(
                program.stmts)
        sig = runner(self.globals)
        if sig is not None:
            raise MsError("unexpected return at top level")
        return self._toplevel_result

    def metrics(self) -> dict:
        m = {"steps": self.steps, "maxHostDepth": self.max_depth}
        if self.rt is not None:
            m.update(self.rt.metrics())
        else:
            m.update({"yieldCount": 0, "interYieldIntervals": [],
                      "pauseLatencyMs": None})
        return m

    # ------------------------------------------------------------------- calls

    def code_for(self, fn: ast.Function) -> _Code:
        code = self._code_cache.get(id(fn))
        if code is None:
            code = self._compile_function(fn)
            self._code_cache[id(fn)] = code
        return code

    def _compile_function(self, fn: ast.Function) -> _Code:
        declared = tuple(declared_names(fn.body.stmts))
        names = frozenset(declared) | frozenset(fn.params) | {"this", "arguments"}
        scope = _Scope(names, self._scope_of(fn))
        if self.cfg.backend == "codegen":
            from stopkit.pycodegen import compile_body
            runner = compile_body(self, scope, fn.body.stmts)
        else:
            runner = _BodyCompiler(self, scope).block(fn.body.stmts)
        return _Code(fn, tuple(fn.params), declared,
                     _scan_arguments(fn.body.stmts), runner)

    def _scope_of(self, fn) -> _Scope:
        return getattr(fn, "_scope", None) or _Scope(
            frozenset(self.globals.vars.keys()) | {"arguments"})

    def call(self, callee, args, this=None, kind="call", pre_this=None):
        """Apply a MiniScript value. Tail calls iterate in place so tail
        recursion runs at constant host depth."""
        interp_self = self
        while True:
            tc = type(callee)
            if tc is Native:
                self.steps += 1
                return callee.fn(args, this)
            if tc is Continuation:
                if self.rt is None:
                    raise MsError("cannot apply a continuation without the runtime")
                self.rt.apply_continuation(callee, args[0] if args else None)
            if tc is not Closure:
                raise MsError(f"cannot call a {type_name(callee)} value")

            orig_kind = kind
            if kind == "new":
                this = pre_this if pre_this is not None else Record()
            orig_this = this
            depth = self.depth + 1
            self.depth = depth
            if depth > self.cfg.host_stack_limit:
                self.depth = depth - 1
                raise MsError("stack overflow")
            if depth > self.max_depth:
                self.max_depth = depth
            try:
                while True:
                    self.steps += 1
                    code = self._code_cache.get(id(callee.node))
                    if code is None:
                        code = self.code_for(callee.node)
                    v = dict(code.proto)
                    env = Env(callee.env, v)
                    params = code.params
                    if len(args) == code.param_count:
                        for i, p in enumerate(params):
                            v[p] = args[i]
                    else:
                        n = len(args)
                        for i in range(code.param_count):
                            v[params[i]] = args[i] if i < n else None
                    v["this"] = this
                    if code.needs_arguments:
                        v["arguments"] = Array(list(args))
                    self.current_closure = callee
                    self.current_args = args
                    self.current_kind = kind
                    sig = code.runner(env)
                    if sig is None:
                        value = None
                        break
                    ts = type(sig)
                    if ts is _Return:
                        value = sig.value
                        break
                    # tail call
                    nxt = sig.callee
                    if type(nxt) is Closure:
                        if self._ptc:
                            callee, args = nxt, sig.args
                            this, kind = sig.this, sig.kind
                            continue
                        # host without proper tail calls: grow a bounded
                        # segment, then bounce through the driver
                        if self.rt is not None and \
                                depth >= self.rt.bounce_threshold:
                            value = self.rt.tail_bounce(nxt, sig.args, sig.this)
                            break
                        value = self.call(nxt, sig.args, sig.this, sig.kind)
                        break
                    value = self.call(nxt, sig.args, sig.this, sig.kind)
                    break
            finally:
                self.depth = depth - 1
            if orig_kind == "new" and not isinstance(value, Record):
                return orig_this
            return value

    # --------------------------------------------------------------- operators

    def to_primitive(self, v, op, loc):
        """Implicit conversion: records invite valueOf (or toString for +).

        These host-driven method calls are uninstrumented code: a capture
        inside them cannot be represented, so the runtime flags it.
        """
        if not isinstance(v, Record):
            return v
        f = v.fields.get("valueOf")
        if f is None and op == "+":
            f = v.fields.get("toString")
        if f is None:
            raise MsError(f"'{op}' needs a valueOf method on this record",
                          loc.line, loc.col)
        self.host_internal_depth += 1
        try:
            result = self.call(f, [], v, "call")
        finally:
            self.host_internal_depth -= 1
        if isinstance(result, (Record, Array, Closure, Native)):
            raise MsError("implicit conversion did not produce a primitive",
                          loc.line, loc.col)
        return result

    def num_of(self, v, op, loc) -> float:
        if type(v) is float:
            return v
        raise MsError(f"'{op}' needs numbers, got {type_name(v)}",
                      loc.line, loc.col)

    def op_slow(self, op, a, b, loc):
        """Non-float-pair operator semantics shared by both backends."""
        if op == "+":
            a = self.to_primitive(a, "+", loc)
            b = self.to_primitive(b, "+", loc)
            if isinstance(a, str) or isinstance(b, str):
                return self.display_of(a, loc) + self.display_of(b, loc)
            return self.num_of(a, "+", loc) + self.num_of(b, "+", loc)
        if op in ("<", "<=", ">", ">="):
            a = self.to_primitive(a, op, loc)
            b = self.to_primitive(b, op, loc)
            if not (isinstance(a, str) and isinstance(b, str)):
                a = self.num_of(a, op, loc)
                b = self.num_of(b, op, loc)
            if op == "<":
                return a < b
            if op == "<=":
                return a <= b
            if op == ">":
                return a > b
            return a >= b
        a = self.num_of(self.to_primitive(a, op, loc), op, loc)
        b = self.num_of(self.to_primitive(b, op, loc), op, loc)
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0.0:
                if a == 0.0 or a != a:
                    return math.nan
                return math.inf * math.copysign(1.0, a) * math.copysign(1.0, b)
            return a / b
        if op == "%":
            if b == 0.0 or a != a or math.isinf(a):
                return math.nan
            return math.fmod(a, b)
        raise MsError(f"unknown operator {op}", loc.line, loc.col)

    def check_arity(self, want: int):
        got = len(self.current_args)
        if got != want:
            fn = self.current_closure
            raise MsError(f"arity mismatch: {fn.name or 'function'} expects "
                          f"{want} arguments, got {got} (args=false)")
        return None

    def rt_truncate(self, depth):
        del self.rt.stack[int(depth):]
        return None

    def dynamic_lookup(self, env, name, line, col):
        holder = env.lookup_env(name)
        if holder is None:
            raise MsError(f"unbound variable '{name}'", line, col)
        return holder.vars[name]

    def field_set_error(self, obj, name, line, col):
        raise MsError(f"cannot set field '{name}' on a {type_name(obj)}",
                      line, col)

    def display_of(self, v, loc) -> str:
        if isinstance(v, str):
            return v
        if v is None:
            return "null"
        if v is True:
            return "true"
        if v is False:
            return "false"
        if type(v) is float:
            return format_float(v)
        raise MsError(f"cannot concatenate a {type_name(v)}", loc.line, loc.col)

    # --------------------------------------------------------------- accessors

    def field_get(self, obj, name, loc):
        if type(obj) is Record:
            return obj.fields.get(name)
        if type(obj) is Array:
            if name == "length":
                return float(len(obj.items))
            raise MsError(f"arrays have no field '{name}'", loc.line, loc.col)
        if type(obj) is str:
            if name == "length":
                return float(len(obj))
            raise MsError(f"strings have no field '{name}'", loc.line, loc.col)
        raise MsError(f"cannot read field '{name}' of a {type_name(obj)}",
                      loc.line, loc.col)

    def index_get(self, obj, idx, loc):
        if type(obj) is Array:
            return obj.items[self._index(idx, len(obj.items) - 1, loc)]
        if type(obj) is str:
            return obj[self._index(idx, len(obj) - 1, loc)]
        if type(obj) is Record:
            if not isinstance(idx, str):
                raise MsError("record index must be a string", loc.line, loc.col)
            return obj.fields.get(idx)
        raise MsError(f"cannot index a {type_name(obj)}", loc.line, loc.col)

    def index_set(self, obj, idx, value, loc):
        if type(obj) is Array:
            i = self._index(idx, len(obj.items), loc)
            if i == len(obj.items):
                obj.items.append(value)
            else:
                obj.items[i] = value
            return
        if type(obj) is Record:
            if not isinstance(idx, str):
                raise MsError("record index must be a string", loc.line, loc.col)
            obj.fields[idx] = value
            return
        raise MsError(f"cannot index-assign a {type_name(obj)}", loc.line, loc.col)

    @staticmethod
    def _index(idx, upper, loc):
        if type(idx) is not float or idx != int(idx):
            raise MsError("index must be an integer", loc.line, loc.col)
        i = int(idx)
        if i < 0 or i > upper:
            raise MsError(f"index {i} out of range", loc.line, loc.col)
        return i

    # ----------------------------------------------------------------- natives

    def _native_print(self, args, this):
        text = " ".join(format_value(a) for a in args)
        self.outputs.append(text)
        if self.rt is not None:
            self.rt.on_output(text)
        return None

    def _plain_control(self, args, this):
        if self.rt is not None:
            return self.rt.control(args[0] if args else None)
        raise MsError("control: capture requires instrumented code")


# ----------------------------------------------------------------- compilation

_RETURN_SENTINEL = object()


class _BodyCompiler:
    """Compiles statements/expressions of one function body to closures.

    Statement closures carry their own step-counter increment; when a trace
    is requested a recording wrapper is layered on (tracing is rare, the hot
    path stays a single call)."""

    def __init__(self, interp: Interp, scope: _Scope, toplevel: bool = False):
        self.interp = interp
        self.scope = scope
        self.toplevel = toplevel
        self.tracing = interp.trace is not None

    # ------------------------------------------------------------- statements

    def block(self, stmts):
        fns = tuple(self.stmt(s) for s in stmts)
        n = len(fns)
        if n == 1:
            return fns[0]
        if n == 0:
            return lambda env: None
        if n == 2:
            f0, f1 = fns

            def run(env):
                r = f0(env)
                if r is not None:
                    return r
                return f1(env)

            return run

        def run(env):
            for f in fns:
                r = f(env)
                if r is not None:
                    return r
            return None

        return run

    def stmt(self, s):
        interp = self.interp
        loc = s.loc
        t = type(s)

        if t is ast.Let or t is ast.Assign:
            value = self.expr(s.init if t is ast.Let else s.value)
            hops = self.scope.hops(s.name)
            if t is ast.Let or hops is None:
                hops = 0 if t is ast.Let else None
            name = s.name
            if hops is None:
                def run(env):
                    interp.steps += 1
                    raise MsError(f"assignment to undeclared variable '{name}'",
                                  loc.line, loc.col)
            elif hops == 0:
                def run(env):
                    interp.steps += 1
                    env.vars[name] = value(env)
                    return None
            else:
                def run(env):
                    interp.steps += 1
                    e = env
                    for _ in range(hops):
                        e = e.parent
                    e.vars[name] = value(env)
                    return None
            return self._traced(run, loc)

        if t is ast.ExprStmt:
            value = self.expr(s.expr)
            if self.toplevel:
                def run(env):
                    interp.steps += 1
                    interp._toplevel_result = value(env)
                    return None
            else:
                def run(env):
                    interp.steps += 1
                    value(env)
                    return None
            return self._traced(run, loc)

        if t is ast.If:
            cond = self.expr(s.cond)
            then = self.block(s.then.stmts)
            orelse = self.block(s.orelse.stmts) if s.orelse else None
            if _static_bool(s.cond):
                if orelse is None:
                    def run(env):
                        interp.steps += 1
                        if cond(env):
                            return then(env)
                        return None
                else:
                    def run(env):
                        interp.steps += 1
                        if cond(env):
                            return then(env)
                        return orelse(env)
            elif orelse is None:
                def run(env, _t=truthy):
                    interp.steps += 1
                    if _t(cond(env)):
                        return then(env)
                    return None
            else:
                def run(env, _t=truthy):
                    interp.steps += 1
                    if _t(cond(env)):
                        return then(env)
                    return orelse(env)
            return self._traced(run, loc)

        if t is ast.While:
            cond = self.expr(s.cond)
            body = self.block(s.body.stmts)
            if self.tracing:
                def run(env, _t=truthy):
                    trace = interp.trace
                    while True:
                        interp.steps += 1
                        trace.append(loc)
                        if not _t(cond(env)):
                            return None
                        r = body(env)
                        if r is not None:
                            return r
            else:
                def run(env, _t=truthy):
                    while True:
                        interp.steps += 1
                        if not _t(cond(env)):
                            return None
                        r = body(env)
                        if r is not None:
                            return r
            return run

        if t is ast.Return:
            return self._return(s)

        if t is ast.FieldSet:
            obj = self.expr(s.obj)
            value = self.expr(s.value)
            name = s.name

            def run(env):
                interp.steps += 1
                o = obj(env)
                v = value(env)
                if type(o) is Record:
                    o.fields[name] = v
                    return None
                raise MsError(f"cannot set field '{name}' on a {type_name(o)}",
                              loc.line, loc.col)

            return self._traced(run, loc)

        if t is ast.IndexSet:
            obj = self.expr(s.obj)
            index = self.expr(s.index)
            value = self.expr(s.value)

            def run(env):
                interp.steps += 1
                o = obj(env)
                i = index(env)
                interp.index_set(o, i, value(env), loc)
                return None

            return self._traced(run, loc)

        if t is ast.Throw:
            value = self.expr(s.value)

            def run(env):
                interp.steps += 1
                raise MsThrow(value(env))

            return self._traced(run, loc)

        if t is ast.Try:
            return self._try(s)

        if t is ast.FuncDecl:
            fn = s.func
            fn._scope = self.scope
            hops = self.scope.hops(fn.name)
            name = fn.name

            def run(env):
                interp.steps += 1
                closure = Closure(fn, env)
                e = env
                if hops:
                    for _ in range(hops):
                        e = e.parent
                e.vars[name] = closure
                return None

            return self._traced(run, loc)

        if t is ast.Block:
            return self.block(s.stmts)

        raise MsError(f"cannot execute {t.__name__}", loc.line, loc.col)

    def _traced(self, run, loc):
        if not self.tracing:
            return run
        interp = self.interp

        def traced(env):
            interp.trace.append(loc)
            return run(env)

        return traced

    def _return(self, s: ast.Return):
        interp = self.interp
        loc = s.loc
        if s.value is None:
            def run(env):
                interp.steps += 1
                return _Return(None)
            return self._traced(run, loc)
        if isinstance(s.value, ast.Call) and not getattr(s, "_protected", False):
            call = s.value
            callee, is_method = self._callee(call)
            arg_fns = tuple(self.expr(a) for a in call.args)
            if is_method:
                obj_fn, getter = callee

                def run(env):
                    interp.steps += 1
                    tc = _TailCall()
                    obj = obj_fn(env)
                    tc.callee = getter(obj, env)
                    tc.this = obj
                    tc.args = [f(env) for f in arg_fns]
                    return tc
            else:
                def run(env):
                    interp.steps += 1
                    tc = _TailCall()
                    tc.callee = callee(env)
                    tc.args = [f(env) for f in arg_fns]
                    return tc

            return self._traced(run, loc)
        value = self.expr(s.value)

        def run(env):
            interp.steps += 1
            return _Return(value(env))

        return self._traced(run, loc)

    def _try(self, s: ast.Try):
        interp = self.interp
        has_finally = s.finalbody is not None
        body = self._protected_block(s.body.stmts)
        handler = None
        catch_name = s.catch_name
        if s.handler is not None:
            handler = (self._protected_block(s.handler.stmts) if has_finally
                       else self.block(s.handler.stmts))
        final = self._protected_block(s.finalbody.stmts) if has_finally else None

        def run(env):
            interp.steps += 1
            pending = None
            sig = None
            try:
                sig = body(env)
            except MsThrow as exc:
                if handler is not None:
                    env.vars[catch_name] = exc.value
                    try:
                        sig = handler(env)
                    except MsThrow as exc2:
                        pending = exc2
                else:
                    pending = exc
            if final is not None:
                fsig = final(env)
                if fsig is not None:
                    return fsig
            if pending is not None:
                raise pending
            return sig

        return self._traced(run, s.loc)

    def _protected_block(self, stmts):
        """Inside try bodies (and handlers guarded by a finally) return-calls
        are not tail calls; the flag is positional, set before compiling."""
        for ret in _walk_returns(stmts):
            ret._protected = True
        return self.block(stmts)

    # ------------------------------------------------------------- expressions

    def expr(self, e):
        interp = self.interp
        loc = e.loc
        t = type(e)

        if t is ast.Num:
            v = e.value
            return lambda env: v
        if t is ast.Str:
            v = e.value
            return lambda env: v
        if t is ast.Bool:
            v = e.value
            return lambda env: v
        if t is ast.Null:
            return lambda env: None
        if t is ast.Var or t is ast.Arguments:
            name = "arguments" if t is ast.Arguments else e.name
            hops = self.scope.hops(name)
            if hops is None:
                def run(env):
                    holder = env.lookup_env(name)
                    if holder is None:
                        raise MsError(f"unbound variable '{name}'",
                                      loc.line, loc.col)
                    return holder.vars[name]
                return run
            if hops == 0:
                return lambda env: env.vars[name]
            if hops == 1:
                return lambda env: env.parent.vars[name]

            def run(env):
                for _ in range(hops):
                    env = env.parent
                return env.vars[name]

            return run
        if t is ast.BinOp:
            return self._binop(e)
        if t is ast.Call:
            return self._call(e)
        if t is ast.New:
            callee = self.expr(e.callee)
            arg_fns = tuple(self.expr(a) for a in e.args)

            def run(env):
                f = callee(env)
                return interp.call(f, [a(env) for a in arg_fns], None, "new")

            return run
        if t is ast.Function:
            e._scope = self.scope
            return lambda env: Closure(e, env)
        if t is ast.Record:
            pairs = tuple((k, self.expr(v)) for k, v in e.fields)

            def run(env):
                return Record({k: f(env) for k, f in pairs})

            return run
        if t is ast.Array:
            items = tuple(self.expr(x) for x in e.items)

            def run(env):
                return Array([f(env) for f in items])

            return run
        if t is ast.FieldGet:
            obj = self.expr(e.obj)
            name = e.name
            if name == "length":
                def run(env):
                    o = obj(env)
                    if type(o) is Record:
                        return o.fields.get("length")
                    if type(o) is Array:
                        return float(len(o.items))
                    if type(o) is str:
                        return float(len(o))
                    raise MsError(f"cannot read field 'length' of a "
                                  f"{type_name(o)}", loc.line, loc.col)
                return run

            def run(env):
                o = obj(env)
                if type(o) is Record:
                    return o.fields.get(name)
                return interp.field_get(o, name, loc)

            return run
        if t is ast.IndexGet:
            obj = self.expr(e.obj)
            index = self.expr(e.index)

            def run(env):
                return interp.index_get(obj(env), index(env), loc)

            return run
        raise MsError(f"cannot evaluate {t.__name__}", loc.line, loc.col)

    def _callee(self, call: ast.Call):
        """Returns (callee_fn, this_fn). For method-style callees the caller
        receives (obj_fn, name_getter) packed in callee_fn and this_fn set."""
        interp = self.interp
        c = call.callee
        if isinstance(c, ast.FieldGet):
            obj_fn = self.expr(c.obj)
            name = c.name
            loc = c.loc

            def getter(obj, env):
                if type(obj) is Record:
                    return obj.fields.get(name)
                return interp.field_get(obj, name, loc)

            return (obj_fn, getter), True
        if isinstance(c, ast.IndexGet):
            obj_fn = self.expr(c.obj)
            idx_fn = self.expr(c.index)
            loc = c.loc

            def getter(obj, env):
                return interp.index_get(obj, idx_fn(env), loc)

            return (obj_fn, getter), True
        return self.expr(c), None

    def _call(self, e: ast.Call):
        interp = self.interp
        rt_fast = self._intrinsic(e)
        if rt_fast is not None:
            return rt_fast
        arg_fns = tuple(self.expr(a) for a in e.args)
        callee, is_method = self._callee(e)
        if is_method:
            obj_fn, getter = callee

            def run(env):
                obj = obj_fn(env)
                f = getter(obj, env)
                return interp.call(f, [a(env) for a in arg_fns], obj, "call")

            return run

        def run(env):
            f = callee(env)
            return interp.call(f, [a(env) for a in arg_fns], None, "call")

        return run

    def _intrinsic(self, e: ast.Call):
        """Direct dispatch for `$rt.<op>(...)` calls emitted by the compiler;
        `$` names cannot appear in user source, so the binding is stable."""
        c = e.callee
        if not (isinstance(c, ast.FieldGet) and isinstance(c.obj, ast.Var)
                and c.obj.name == "$rt"):
            return None
        interp = self.interp
        name = c.name
        loc = e.loc
        args = e.args

        # interp.rt is attached before any instrumented code runs; running
        # compiled output without the driver leaves it None and errors here
        def no_rt(loc=loc):
            raise MsError("runtime intrinsics require the driver",
                          loc.line, loc.col)

        if name == "mode" and not args:
            def run(env):
                rt = interp.rt
                return rt.mode if rt is not None else no_rt()
            return run
        if name == "pushFrame" and len(args) == 1:
            fr = self.expr(args[0])

            def run(env):
                rt = interp.rt
                if rt is None:
                    no_rt()
                rt.stack.append(fr(env))
                return None
            return run
        if name == "popFrame" and not args:
            def run(env):
                rt = interp.rt
                return rt.pop_frame() if rt is not None else no_rt()
            return run
        if name == "topFrame" and not args:
            def run(env):
                rt = interp.rt
                return rt.top_frame() if rt is not None else no_rt()
            return run
        if name == "maySuspend" and len(args) == 3 and \
                isinstance(args[0], ast.Num) and isinstance(args[2], ast.Str):
            line = int(args[0].value)
            kind = args[2].value

            def run(env):
                rt = interp.rt
                return rt.may_suspend(line, kind) if rt is not None else no_rt()
            return run
        if name == "deepCheck" and not args:
            def run(env):
                rt = interp.rt
                return rt.deep_check() if rt is not None else no_rt()
            return run
        if name == "currentFunction" and not args:
            return lambda env: interp.current_closure
        if name == "currentCallKind" and not args:
            return lambda env: interp.current_kind
        if name == "checkArity" and len(args) == 1 and isinstance(args[0], ast.Num):
            want = int(args[0].value)

            def run(env):
                got = len(interp.current_args)
                if got != want:
                    fn = interp.current_closure
                    raise MsError(
                        f"arity mismatch: {fn.name or 'function'} expects "
                        f"{want} arguments, got {got} (args=false)")
                return None

            return run
        if name == "isSignal" and len(args) == 1:
            v = self.expr(args[0])

            def run(env):
                rt = interp.rt
                return rt.is_signal(v(env)) if rt is not None else no_rt()
            return run
        if name == "isRecord" and len(args) == 1:
            v = self.expr(args[0])
            return lambda env: type(v(env)) is Record
        if name == "hasField" and len(args) == 2:
            v = self.expr(args[0])
            k = self.expr(args[1])

            def run(env):
                obj = v(env)
                return type(obj) is Record and k(env) in obj.fields

            return run
        if name == "reapply" and len(args) == 4:
            f0, f1, f2, f3 = (self.expr(a) for a in args)

            def run(env):
                rt = interp.rt
                if rt is None:
                    no_rt()
                return rt.reapply(f0(env), f1(env), f2(env), f3(env))
            return run
        if name == "stackDepth" and not args:
            def run(env):
                rt = interp.rt
                return float(len(rt.stack)) if rt is not None else no_rt()
            return run
        if name == "truncateStack" and len(args) == 1:
            d = self.expr(args[0])

            def run(env):
                rt = interp.rt
                if rt is None:
                    no_rt()
                del rt.stack[int(d(env)):]
                return None

            return run
        if name == "control" and len(args) == 1:
            v = self.expr(args[0])

            def run(env):
                rt = interp.rt
                return rt.control(v(env)) if rt is not None else no_rt()
            return run
        if name == "enterCall" and not args:
            def run(env):
                rt = interp.rt
                return rt.enter_call() if rt is not None else no_rt()
            return run
        if name == "exitCall" and not args:
            def run(env):
                rt = interp.rt
                return rt.exit_call() if rt is not None else no_rt()
            return run
        return None

    # ---------------------------------------------------------------- binops

    @staticmethod
    def _is_mode_call(e) -> bool:
        return (isinstance(e, ast.Call) and not e.args
                and isinstance(e.callee, ast.FieldGet)
                and e.callee.name == "mode"
                and isinstance(e.callee.obj, ast.Var)
                and e.callee.obj.name == "$rt")

    def _binop(self, e: ast.BinOp):
        interp = self.interp
        op = e.op
        loc = e.loc
        if op == "&&":
            lhs = self.expr(e.lhs)
            rhs = self.expr(e.rhs)
            if _static_bool(e.lhs) and _static_bool(e.rhs):
                return lambda env: lhs(env) and rhs(env)

            def run(env):
                v = lhs(env)
                return rhs(env) if truthy(v) else v

            return run
        if op == "||":
            lhs = self.expr(e.lhs)
            rhs = self.expr(e.rhs)
            if _static_bool(e.lhs) and _static_bool(e.rhs):
                return lambda env: lhs(env) or rhs(env)

            def run(env):
                v = lhs(env)
                return v if truthy(v) else rhs(env)

            return run
        lhs = self.expr(e.lhs)
        rhs = self.expr(e.rhs)
        if op == "==" or op == "!=":
            want = op == "=="
            if isinstance(e.rhs, ast.Str):
                const = e.rhs.value
                # `$rt.mode() == "..."`: the guard the instrumenter emits
                # before nearly every statement; fold it into one closure
                if self._is_mode_call(e.lhs):
                    if want:
                        def run(env):
                            rt = interp.rt
                            if rt is None:
                                raise MsError("runtime intrinsics require "
                                              "the driver")
                            return rt.mode == const
                        return run

                    def run(env):
                        rt = interp.rt
                        if rt is None:
                            raise MsError("runtime intrinsics require the driver")
                        return rt.mode != const
                    return run
                if want:
                    return lambda env: lhs(env) == const
                return lambda env: lhs(env) != const
            if isinstance(e.rhs, ast.Num):
                const = e.rhs.value

                def run(env):
                    v = lhs(env)
                    eq = type(v) is float and v == const
                    return eq if want else not eq

                return run
            if isinstance(e.rhs, ast.Null):
                if want:
                    return lambda env: lhs(env) is None
                return lambda env: lhs(env) is not None

            def run(env):
                eq = values_equal(lhs(env), rhs(env))
                return eq if want else not eq

            return run

        if op == "+":
            def run(env):
                a = lhs(env)
                b = rhs(env)
                if type(a) is float and type(b) is float:
                    return a + b
                a = interp.to_primitive(a, "+", loc)
                b = interp.to_primitive(b, "+", loc)
                if isinstance(a, str) or isinstance(b, str):
                    return interp.display_of(a, loc) + interp.display_of(b, loc)
                return interp.num_of(a, "+", loc) + interp.num_of(b, "+", loc)

            return run

        if op in ("<", "<=", ">", ">="):
            import operator
            fn = {"<": operator.lt, "<=": operator.le,
                  ">": operator.gt, ">=": operator.ge}[op]

            def run(env):
                a = lhs(env)
                b = rhs(env)
                if type(a) is float and type(b) is float:
                    return fn(a, b)
                a = interp.to_primitive(a, op, loc)
                b = interp.to_primitive(b, op, loc)
                if isinstance(a, str) and isinstance(b, str):
                    return fn(a, b)
                return fn(interp.num_of(a, op, loc), interp.num_of(b, op, loc))

            return run

        if op == "-":
            def run(env):
                a = lhs(env)
                b = rhs(env)
                if type(a) is float and type(b) is float:
                    return a - b
                return (interp.num_of(interp.to_primitive(a, "-", loc), "-", loc)
                        - interp.num_of(interp.to_primitive(b, "-", loc), "-", loc))
            return run
        if op == "*":
            def run(env):
                a = lhs(env)
                b = rhs(env)
                if type(a) is float and type(b) is float:
                    return a * b
                return (interp.num_of(interp.to_primitive(a, "*", loc), "*", loc)
                        * interp.num_of(interp.to_primitive(b, "*", loc), "*", loc))
            return run
        if op == "/":
            def run(env):
                a = lhs(env)
                b = rhs(env)
                if type(a) is not float:
                    a = interp.num_of(interp.to_primitive(a, "/", loc), "/", loc)
                if type(b) is not float:
                    b = interp.num_of(interp.to_primitive(b, "/", loc), "/", loc)
                if b == 0.0:
                    if a == 0.0 or a != a:
                        return math.nan
                    return math.inf * math.copysign(1.0, a) * math.copysign(1.0, b)
                return a / b
            return run
        if op == "%":
            def run(env):
                a = lhs(env)
                b = rhs(env)
                if type(a) is not float:
                    a = interp.num_of(interp.to_primitive(a, "%", loc), "%", loc)
                if type(b) is not float:
                    b = interp.num_of(interp.to_primitive(b, "%", loc), "%", loc)
                if b == 0.0 or a != a or math.isinf(a):
                    return math.nan
                return math.fmod(a, b)
            return run
        raise MsError(f"unknown operator {op}", loc.line, loc.col)


def _static_bool(e) -> bool:
    """True when the expression always evaluates to a boolean, so `truthy`
    and operand-returning ||/&& semantics can be skipped."""
    if isinstance(e, ast.Bool):
        return True
    if isinstance(e, ast.BinOp):
        if e.op in ("==", "!=", "<", "<=", ">", ">="):
            return True
        if e.op in ("&&", "||"):
            return _static_bool(e.lhs) and _static_bool(e.rhs)
    return False


def _walk_returns(stmts):
    """All Return statements lexically inside stmts, nested functions excluded."""
    for s in stmts:
        if isinstance(s, ast.Return):
            yield s
        elif isinstance(s, ast.If):
            yield from _walk_returns(s.then.stmts)
            if s.orelse:
                yield from _walk_returns(s.orelse.stmts)
        elif isinstance(s, ast.While):
            yield from _walk_returns(s.body.stmts)
        elif isinstance(s, ast.Try):
            yield from _walk_returns(s.body.stmts)
            if s.handler:
                yield from _walk_returns(s.handler.stmts)
            if s.finalbody:
                yield from _walk_returns(s.finalbody.stmts)
        elif isinstance(s, ast.Block):
            yield from _walk_returns(s.stmts)


def run_plain(program: ast.Program | str, config: InterpConfig | None = None,
              trace: bool = False):
    """Interpret a plain program; returns Outcome (and the trace if asked)."""
    if isinstance(program, str):
        from stopkit.parser import parse
        program = parse(program)
    interp = Interp(config, trace=trace)
    outcome = interp.run_program(program)
    if trace:
        return outcome, list(interp.trace)
    return outcome


def statement_trace(program: ast.Program | str,
                    config: InterpConfig | None = None) -> list[ast.SourceLoc]:
    """Source-order statement execution sequence of a plain run.

    The oracle for single-stepping: an instrumented program stepped to
    completion must pause at exactly these locations in this order.
    """
    outcome, trace = run_plain(program, config, trace=True)
    if not outcome.ok:
        raise MsError(f"trace oracle failed: {outcome.error}")
    return trace

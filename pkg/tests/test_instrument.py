"""Shapes of instrumented output and static validation."""

import re

import pytest

from stopkit import ast
from stopkit.ast import structurally_equal
from stopkit.errors import CompileError
from stopkit.instrument import (compile_source, insert_suspend_points,
                                instrument, validate_user_source)
from stopkit.options import CompileOptions
from stopkit.parser import parse
from stopkit.printer import to_source
from stopkit.runtime import Handle, run_instrumented
from stopkit.interp import InterpConfig

FIG_LIKE = "function P(f, g, x) { return f(g(x)); }\nP(function(a) { return a; }, function(b) { return b + 1; }, 1);"


def compiled_text(src, **kw):
    return to_source(compile_source(src, CompileOptions(**kw)))


def find_fn(program, name):
    for node in ast.walk(program):
        if isinstance(node, ast.Function) and node.name == name:
            return node
    raise AssertionError(f"no function {name}")


def test_checked_site_shape():
    text = compiled_text(FIG_LIKE, cont="checked")
    # restore prologue reads the popped frame...
    assert '$k = $rt.popFrame()' in text
    assert "$k.locals[0]" in text
    assert "$l = $k.label" in text
    assert "$k = $rt.topFrame()" in text
    # ...the call is guarded, capture pushes a frame and bails out
    assert '$rt.mode() == "capture"' in text
    assert "$rt.pushFrame({ label:" in text
    # the tail call survives uninstrumented
    assert re.search(r"return f\(\$t\d+\);", text)


def test_exceptional_site_shape():
    text = compiled_text(FIG_LIKE, cont="exceptional")
    assert "catch ($e" in text
    assert "$rt.pushFrame" in text
    # user try/catch handlers pass the capture signal through untouched
    guarded = compiled_text("try { f(); } catch (e) { print(e); }",
                            cont="exceptional")
    assert "$rt.isSignal" in guarded


def test_eager_site_shape():
    prog = compile_source(FIG_LIKE, CompileOptions(cont="eager"))
    text = to_source(ast.Program([ast.FuncDecl(find_fn(prog, "P").loc,
                                               find_fn(prog, "P"))]))
    # at the g(x) site the frame is pushed before the call, popped after
    site = text[text.index("$l == 1"):]
    assert (site.index("$rt.pushFrame") < site.index("g(x)")
            < site.index("$rt.popFrame()"))


def test_locals_and_reenter_thunks_emitted():
    prog = compile_source(FIG_LIKE, CompileOptions())
    p = find_fn(prog, "P")
    text = to_source(ast.Program([ast.FuncDecl(p.loc, p)]))
    assert "let $locals = function() {" in text
    assert "let $reenter = function() {" in text
    assert "$rt.reapply($self, [f, g, x], $this" in text


def test_zero_local_function_snapshot_is_empty():
    # without suspend points (which add a temp), a leaf function has no
    # locals and its snapshot thunk returns the empty list
    from stopkit.anf import normalize
    from stopkit.instrument import instrument_function
    p = normalize(parse("function id(x) { return x; }"))
    fn = instrument_function(p.stmts[0].func, CompileOptions())
    text = to_source(ast.Program([ast.FuncDecl(fn.loc, fn)]))
    assert "return [];" in text


def test_straight_line_program_only_guards_and_suspends():
    src = "let a = 1;\nlet b = a + 2;\nb = b * 2;"
    prog = compile_source(src, CompileOptions())
    # every labeled site belongs to an inserted suspend call, not user code
    labeled = [n for n in ast.walk(prog)
               if isinstance(n, ast.Let) and n.label is not None]
    assert labeled == []
    text = to_source(prog)
    assert 'if ($rt.mode() == "normal")' in text


def test_statement_granularity_counts():
    src = "\n".join(f"let v{i} = {i};" for i in range(7))
    prog = compile_source(src, CompileOptions(
        suspend_granularity="every-statement"))
    text = to_source(prog)
    assert text.count('"stmt"') == 7
    assert text.count('"entry"') == 1  # the top-level entry


def test_while_true_gains_one_edge_point():
    text = compiled_text("while (true) { }")
    assert text.count('"edge"') == 1


def test_insert_suspend_points_on_empty_program():
    p = insert_suspend_points(parse(""), CompileOptions())
    assert p.stmts == []


def test_instrumented_output_reparses_identically():
    for src in (FIG_LIKE, "try { f(); } catch (e) { print(e); } finally { print(1); }",
                "let o = { valueOf: function() { return 3; } };\nprint(o - 1);"):
        for cont in ("checked", "exceptional", "eager"):
            prog = compile_source(src, CompileOptions(cont=cont, implicits="true"))
            text = to_source(prog)
            assert structurally_equal(prog, parse(text))


def test_reserved_names_rejected():
    for bad in ("let $x = 1;", "function f($a) { return $a; }",
                "let o = { $k: 1 };", "print($rt);"):
        with pytest.raises(CompileError, match="reserved"):
            compile_source(bad, CompileOptions())


def test_arguments_rejected_under_args_false():
    src = "function f() { return arguments.length; }\nprint(f(1));"
    with pytest.raises(CompileError, match="arguments"):
        compile_source(src, CompileOptions(args="false"))
    compile_source(src, CompileOptions(args="varargs"))  # fine


def test_return_in_finally_rejected():
    src = "function f() { try { return 1; } finally { return 2; } }"
    with pytest.raises(CompileError, match="finally"):
        compile_source(src, CompileOptions())


def test_static_arity_check_under_args_false():
    src = "function f(a, b) { return a; }\nprint(f(1));"
    with pytest.raises(CompileError, match="arity"):
        compile_source(src, CompileOptions(args="false"))
    compile_source(src, CompileOptions(args="varargs"))


def test_runtime_arity_check_under_args_false():
    src = "let fs = [function(a, b) { return a; }];\nlet g = fs[0];\nprint(g(1));"
    out = run_instrumented(src, CompileOptions(args="false"))
    assert not out.ok and "arity mismatch" in out.error


def test_wrapped_mode_output_has_no_new():
    text = compiled_text("function C() { this.a = 1; }\nlet c = new C();\nprint(c.a);",
                         ctor="wrapped")
    assert "new " not in text


def test_direct_mode_keeps_new_and_kind_register():
    text = compiled_text("function C() { this.a = 1; }\nlet c = new C();\nprint(c.a);",
                         ctor="direct")
    assert "new C()" in text
    assert "$rt.currentCallKind()" in text


def test_intrinsic_namespace_is_complete():
    opts = CompileOptions()
    h = Handle(compile_source("print(1);", opts), opts)
    ns = h.interp.globals.vars["$rt"].fields
    for name in ("mode", "pushFrame", "popFrame", "topFrame", "control",
                 "maySuspend", "deepCheck", "reapply", "currentFunction",
                 "currentCallKind", "isRecord", "hasField", "isSignal",
                 "stackDepth", "truncateStack", "checkArity", "enterCall",
                 "exitCall"):
        assert name in ns, name


def test_capture_through_deep_tail_chain_keeps_o1_frames():
    src = """
    function spin(n) {
      if (n == 0) { return control(function(k) { return k(7); }); }
      return spin(n - 1);
    }
    print(spin(50000));
    """
    opts = CompileOptions()
    h = Handle(compile_source(src, opts), opts, InterpConfig(host_stack_limit=64))
    frames = []
    h.rt.capture_hook = lambda recv, kv: frames.append(len(kv.frames))
    h.run()
    out = h.pump_to_completion(max_turns=100000)
    assert out.ok and out.outputs == ["7"]
    assert frames and max(frames) <= 3  # the tail chain reified no frames

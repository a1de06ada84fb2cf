"""Control-operator semantics: capture, restore, delivery, multi-shot."""

import pytest

from oracle_control import run as oracle_run
from stopkit.errors import MsError
from stopkit.instrument import compile_source
from stopkit.interp import run_plain
from stopkit.options import CompileOptions
from stopkit.runtime import Handle, run_instrumented
from stopkit.values import Continuation

from conftest import SIX_CONFIGS, CONTS

DISCARD = "10 + control(function(k) { return 0; });"
RESUME = "10 + control(function(k) { return k(1) + 2; });"


@pytest.mark.parametrize("cont,ctor", SIX_CONFIGS)
def test_discard_yields_receiver_result(cont, ctor):
    out = run_instrumented(DISCARD, CompileOptions(cont=cont, ctor=ctor))
    assert out.ok and out.result == 0.0


@pytest.mark.parametrize("cont,ctor", SIX_CONFIGS)
def test_apply_discards_receiver_context(cont, ctor):
    out = run_instrumented(RESUME, CompileOptions(cont=cont, ctor=ctor))
    assert out.ok and out.result == 11.0


def test_oracle_agrees_on_core_programs():
    # the receiver's body runs in an empty continuation: "10 +" is discarded
    t1 = ("+", ("num", 10), ("control", "k", ("num", 0)))
    r1, _ = oracle_run(t1)
    assert r1 == 0
    # applying k abandons the "+ 2" context and resumes "10 + [.]" with 1
    t2 = ("+", ("num", 10),
          ("control", "k", ("+", ("app", ("var", "k"), ("num", 1)), ("num", 2))))
    r2, _ = oracle_run(t2)
    assert r2 == 11


def test_multi_shot_matches_oracle():
    # apply the same continuation three times; a heap cell observes each pass
    src = """
    let cell = { k: null, n: 0 };
    let x = 10 + control(function(k) { cell.k = k; return k(10); });
    cell.n = cell.n + 1;
    print(x);
    if (cell.n < 3) {
      let kk = cell.k;
      kk(x + 1);
    }
    print(99);
    """
    term = ("seq",
            ("app", ("lam", "saved", ("app", ("lam", "count", ("seq",
                ("app", ("lam", "x", ("seq",
                    ("setbox", ("var", "count"), ("+", ("unbox", ("var", "count")), ("num", 1))),
                    ("print", ("var", "x")),
                    ("if", ("<", ("unbox", ("var", "count")), ("num", 3)),
                        ("app", ("unbox", ("var", "saved")), ("+", ("var", "x"), ("num", 1))),
                        ("num", 0)),
                    ("print", ("num", 99)))),
                 ("+", ("num", 10),
                  ("control", "k", ("seq",
                      ("setbox", ("var", "saved"), ("var", "k")),
                      ("app", ("var", "k"), ("num", 10)))))))),
             ("box", ("num", 0)))),
            ("box", ("num", 0))))
    _, oracle_out = oracle_run(term)
    expected = [str(int(v)) for v in oracle_out]
    for cont in CONTS:
        out = run_instrumented(src, CompileOptions(cont=cont))
        assert out.ok, out.error
        assert out.outputs == expected, (cont, out.outputs, expected)


def test_multishot_restores_identical_locals_each_time():
    src = """
    let cell = { k: null, n: 0 };
    let a = 7;
    let b = control(function(k) { cell.k = k; return k(1); });
    print(a, b);
    cell.n = cell.n + 1;
    a = a + 100;
    if (cell.n < 3) {
      let kk = cell.k;
      kk(b + 1);
    }
    """
    out = run_instrumented(src, CompileOptions())
    assert out.ok
    # `a` is restored to its captured value 7 on every application
    assert out.outputs == ["7 1", "7 2", "7 3"]


@pytest.mark.parametrize("cont", CONTS)
def test_capture_depth_three_frames(cont):
    src = """
    function f3() { let v = control(function(k) { return k(5); }); return v; }
    function f2() { let v = f3(); return v + 1; }
    function f1() { let v = f2(); return v + 1; }
    print(f1());
    """
    opts = CompileOptions(cont=cont)
    captured = []
    prog = compile_source(src, opts)
    h = Handle(prog, opts)
    h.rt.capture_hook = lambda recv, kv: captured.append((recv, kv))
    h.run()
    out = h.pump_to_completion(max_turns=10000)
    assert out.ok and out.outputs == ["7"]
    recv, kv = captured[0]
    # three user frames plus $main, innermost first, receiver kept separate
    assert len(kv.frames) == 4
    labels = [f.fields["label"] for f in kv.frames]
    assert all(isinstance(l, float) for l in labels)
    assert "reenter" in recv.fields and recv.fields.get("label") is None


def test_reified_stack_order_innermost_first():
    src = """
    function inner() { return control(function(k) { return k(1); }); }
    function outer() { let v = inner(); return v; }
    print(outer());
    """
    for cont in CONTS:
        opts = CompileOptions(cont=cont)
        seen = []
        h = Handle(compile_source(src, opts), opts)
        h.rt.capture_hook = lambda recv, kv: seen.append(kv)
        h.run()
        out = h.pump_to_completion(max_turns=10000)
        assert out.ok
        kv = seen[0]
        # locals arrays grow toward the outside: $main has the most locals
        sizes = [len(f.fields["locals"].items) for f in kv.frames]
        assert sizes[-1] == max(sizes)


def test_apply_continuation_with_empty_frames_returns_value():
    opts = CompileOptions()
    prog = compile_source("print(1);", opts)
    h = Handle(prog, opts)
    h.run()
    h.rt.queue.clear()
    h.rt.queue.append(lambda: h.rt.apply_continuation(Continuation((), ()), 42.0))
    out = h.pump_to_completion(max_turns=10)
    assert out.ok and out.result == 42.0


def test_mode_protocol_sequence():
    src = """
    let x = 1 + control(function(k) { return k(2); });
    print(x);
    """
    for cont in CONTS:
        opts = CompileOptions(cont=cont)
        h = Handle(compile_source(src, opts), opts)
        h.run()
        out = h.pump_to_completion(max_turns=1000)
        assert out.ok
        log = h.rt.mode_log
        assert log[0] == "normal" and log[-1] == "normal"
        for prev, cur in zip(log, log[1:]):
            assert (prev, cur) in {("normal", "capture"), ("capture", "restore"),
                                   ("restore", "normal")}, log


def test_strategy_equivalence_battery():
    programs = [
        DISCARD,
        RESUME,
        """
        function dig(n) {
          if (n == 0) { return control(function(k) { return k(100); }); }
          let r = dig(n - 1);
          return r + 1;
        }
        print(dig(5));
        """,
        """
        let trace = [];
        function t(v) { trace[trace.length] = v; return v; }
        t(1);
        let x = t(2) + control(function(k) { t(3); return k(t(4)); });
        t(x);
        print(trace);
        """,
    ]
    for src in programs:
        results = set()
        for cont in CONTS:
            out = run_instrumented(src, CompileOptions(cont=cont))
            assert out.ok, (cont, out.error)
            results.add(out.observable())
        assert len(results) == 1


def test_capture_in_uninstrumented_coercion_is_loud():
    src = """
    let r = { valueOf: function() { return control(function(k) { return k(5); }); } };
    print(r - 1);
    """
    out = run_instrumented(src, CompileOptions(implicits="false"))
    assert not out.ok and "uninstrumented" in out.error


def test_plain_interpreter_rejects_control():
    out = run_plain(DISCARD)
    assert not out.ok and "instrumented" in out.error


def test_control_requires_function_argument():
    out = run_instrumented("control(5);", CompileOptions())
    assert not out.ok and "function" in out.error


def test_onDone_fires_exactly_once_across_resumes():
    src = """
    let cell = { n: 0 };
    let x = control(function(k) { return k(0); });
    cell.n = cell.n + 1;
    if (cell.n < 3) {
      let again = control(function(k) { return k(0); });
    }
    print(cell.n);
    """
    opts = CompileOptions()
    fired = []
    out = run_instrumented(src, opts,
                           handle_callbacks={"on_done": lambda o: fired.append(o)})
    assert out.ok
    assert len(fired) == 1

"""Differential transparency: for control-free programs, the instrumented
driver is observably identical to the plain interpreter."""

import pytest

from stopkit.gen import ProgramGenerator, generate_corpus, seed_from_env
from stopkit.interp import run_plain
from stopkit.options import CompileOptions
from stopkit.runtime import run_instrumented

from conftest import SIX_CONFIGS, assert_transparent

BASE_FEATURES = ("closures", "boxing", "exceptions", "finally_return",
                 "constructors", "implicits_num", "implicits_str")

CORPUS = generate_corpus(40, features=BASE_FEATURES)
VARARG_CORPUS = generate_corpus(10, seed=seed_from_env() + 1000,
                                features=BASE_FEATURES + ("varargs",))

HANDWRITTEN = [
    # exceptions crossing frames, rethrow, nested finally
    """
    function a(n) { if (n > 1) { throw "deep" + n; } return n; }
    function b(n) { try { return a(n); } finally { print("fin-b", n); } }
    let i = 0;
    while (i < 4) {
      try { print(b(i)); } catch (e) { print("caught", e); }
      i = i + 1;
    }
    """,
    # uncaught throw surfaces the same way
    'print("before");\nthrow "kaboom";\n',
    # rethrow from catch
    """
    try {
      try { throw 1; } catch (e) { throw e + 1; }
    } catch (e) { print(e); }
    """,
    # constructors with methods, identity, record-returning constructor
    """
    function N(x, f) { this.x = x; this.y = f(); return 0; }
    function mk() { return 7; }
    let o = new N(3, mk);
    print(o.x, o.y);
    function R() { this.a = 1; return { b: 2 }; }
    print((new R()).b);
    """,
    # closures over loop variables share one cell (function-scoped let)
    """
    let fs = [];
    let i = 0;
    while (i < 3) {
      let x = i;
      fs[i] = function() { return x; };
      i = i + 1;
    }
    print(fs[0](), fs[1](), fs[2]());
    """,
    # deep expression nesting and mixed arithmetic
    """
    function sq(x) { return x * x; }
    print(sq(sq(2)) + sq(1 + sq(2)) - 3 % 2, "s" + (1 + 2), 7 / 2);
    """,
    # mutual recursion
    """
    function even(n) { if (n == 0) { return true; } return odd(n - 1); }
    function odd(n) { if (n == 0) { return false; } return even(n - 1); }
    print(even(10), odd(7));
    """,
    # records as arguments, aliasing visible
    """
    function poke(r) { r.hits = r.hits + 1; return r; }
    let r = { hits: 0 };
    let s = poke(poke(r));
    print(r.hits, s == r);
    """,
    # arrays: growth, iteration, nested
    """
    let grid = [];
    let i = 0;
    while (i < 3) {
      let row = [];
      let j = 0;
      while (j < 3) { row[j] = i * 3 + j; j = j + 1; }
      grid[i] = row;
      i = i + 1;
    }
    print(grid[2][1], grid.length, grid[0]);
    """,
    # string building and comparisons
    """
    let s = "";
    let i = 0;
    while (i < 5) { s = s + i; i = i + 1; }
    print(s, s.length, "abc" < "abd", "b" >= "a");
    """,
    # division/modulo edges are deterministic
    "print(1 / 0, 0 - 1 / 0, 0 / 0, 5 % 3, 0 - 7 % 4);",
    # coercion-heavy program (valid under every implicits mode)
    """
    let m = { valueOf: function() { return 6; } };
    let s = { toString: function() { return "S"; } };
    print(m - 1, m * m, m < 10, "x" + s);
    """,
    # higher-order: function returned from function, passed around
    """
    function compose(f, g) { return function(x) { return f(g(x)); }; }
    function inc(x) { return x + 1; }
    function dbl(x) { return x * 2; }
    let h = compose(inc, dbl);
    print(h(10), compose(dbl, inc)(10));
    """,
    # shadowing-free nested blocks, function-scoped lets
    """
    function f() {
      if (true) { let t = 1; }
      { let u = 2; }
      return t + u;
    }
    print(f());
    """,
    # early return from loops inside functions
    """
    function find(xs, want) {
      let i = 0;
      while (i < xs.length) {
        if (xs[i] == want) { return i; }
        i = i + 1;
      }
      return 0 - 1;
    }
    print(find([4, 5, 6], 5), find([4], 9));
    """,
    # method calls bind this through field and index callees
    """
    let obj = { n: 5, get: function() { return this.n; } };
    let tbl = { m: obj.get };
    print(obj.get(), obj["get"]());
    """,
]


@pytest.mark.parametrize("idx", range(len(HANDWRITTEN)))
def test_handwritten_transparency(idx):
    src = HANDWRITTEN[idx]
    for cont, ctor in SIX_CONFIGS:
        for imp in ("false", "true", "plus"):
            opts = CompileOptions(cont=cont, ctor=ctor, implicits=imp)
            assert_transparent(src, opts)


@pytest.mark.parametrize("idx", range(len(CORPUS)))
def test_generated_transparency(idx):
    src = CORPUS[idx]
    for cont, ctor in SIX_CONFIGS:
        opts = CompileOptions(cont=cont, ctor=ctor)
        assert_transparent(src, opts)
    # coercion-bearing programs additionally run in the rewriting modes
    if "valueOf" in src or "toString" in src:
        for imp in ("true", "plus"):
            assert_transparent(src, CompileOptions(implicits=imp))


@pytest.mark.parametrize("idx", range(len(VARARG_CORPUS)))
def test_vararg_transparency(idx):
    src = VARARG_CORPUS[idx]
    for cont in ("checked", "exceptional", "eager"):
        for mode in ("varargs", "mixed"):
            opts = CompileOptions(cont=cont, args=mode)
            assert_transparent(src, opts)


def test_corpus_is_big_enough():
    assert len(CORPUS) + len(VARARG_CORPUS) + len(HANDWRITTEN) >= 50


def test_corpus_covers_required_features():
    joined = "\n".join(CORPUS) + "\n".join(VARARG_CORPUS)
    for marker in ("function", "while", "try", "finally", "new ",
                   "valueOf", "toString", "arguments"):
        assert marker in joined, f"corpus never exercises {marker}"


def test_seed_env_pins_corpus(monkeypatch):
    monkeypatch.setenv("STOPKIT_SEED", "12345")
    a = generate_corpus(3)
    b = generate_corpus(3)
    assert a == b
    monkeypatch.setenv("STOPKIT_SEED", "54321")
    c = generate_corpus(3)
    assert a != c

"""The generated-Python backend must match the closure backend exactly:
same results, same outputs, same errors, same statement traces."""

import pytest

from stopkit.gen import generate_corpus
from stopkit.interp import InterpConfig, run_plain, statement_trace
from stopkit.options import CompileOptions
from stopkit.runtime import run_instrumented

import test_capture_fidelity
import test_differential

CORPUS = generate_corpus(25, seed=4242,
                         features=("closures", "boxing", "exceptions",
                                   "finally_return", "constructors",
                                   "implicits_num", "implicits_str"))


def both_backends(fn):
    a = fn(InterpConfig(backend="codegen"))
    b = fn(InterpConfig(backend="closures"))
    return a, b


@pytest.mark.parametrize("idx", range(len(CORPUS)))
def test_plain_runs_agree(idx):
    src = CORPUS[idx]
    a, b = both_backends(lambda cfg: run_plain(src, cfg).observable())
    assert a == b, src


@pytest.mark.parametrize("idx", range(0, len(test_differential.HANDWRITTEN)))
def test_handwritten_plain_agree(idx):
    src = test_differential.HANDWRITTEN[idx]
    a, b = both_backends(lambda cfg: run_plain(src, cfg).observable())
    assert a == b, src


@pytest.mark.parametrize("idx", range(0, len(CORPUS), 3))
def test_instrumented_runs_agree(idx):
    src = CORPUS[idx]
    for cont in ("checked", "eager"):
        opts = CompileOptions(cont=cont)
        a, b = both_backends(
            lambda cfg: run_instrumented(src, opts, cfg,
                                         max_turns=2_000_000).observable())
        assert a == b, (cont, src)


@pytest.mark.parametrize("idx", range(0, len(test_capture_fidelity.PAIRS), 4))
def test_capture_programs_agree(idx):
    src = test_capture_fidelity.PAIRS[idx][0]
    opts = test_capture_fidelity._opts_for(src, "checked")
    a, b = both_backends(
        lambda cfg: run_instrumented(src, opts, cfg,
                                     max_turns=200_000).observable())
    assert a == b, src


def test_traces_agree():
    for src in CORPUS[:8]:
        a = statement_trace(src, InterpConfig(backend="codegen"))
        b = statement_trace(src, InterpConfig(backend="closures"))
        assert a == b, src


def test_error_paths_agree():
    cases = [
        "throw {code: 3};",
        "let x = 1 + {};",
        "print(undefinedName);",
        "let xs = [1]; print(xs[5]);",
        "function f() { return f() + 1; } f();",
    ]
    for src in cases:
        a, b = both_backends(
            lambda cfg: run_plain(src, InterpConfig(
                host_stack_limit=64, backend=cfg.backend)).observable())
        assert a == b, src

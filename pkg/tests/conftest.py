import itertools

import pytest

from stopkit.interp import InterpConfig, run_plain
from stopkit.options import CompileOptions
from stopkit.runtime import run_instrumented

CONTS = ("checked", "exceptional", "eager")
CTORS = ("direct", "wrapped")
SIX_CONFIGS = list(itertools.product(CONTS, CTORS))


def assert_transparent(src, opts=None, config=None, max_turns=2_000_000):
    """Instrumented-driver run must match the plain interpreter exactly."""
    plain = run_plain(src, config).observable()
    inst = run_instrumented(src, opts, config, max_turns=max_turns).observable()
    assert inst == plain, (
        f"divergence under {opts.fingerprint() if opts else 'defaults'}\n"
        f"  plain: {plain}\n  instr: {inst}\n--- program ---\n{src}")
    return plain


def run_all_configs(src, config=None, implicits=("false",), args="false"):
    for cont, ctor in SIX_CONFIGS:
        for imp in implicits:
            opts = CompileOptions(cont=cont, ctor=ctor, implicits=imp, args=args)
            assert_transparent(src, opts, config)


@pytest.fixture(scope="session")
def fast_config():
    return InterpConfig(step_cost_micros=1.0)

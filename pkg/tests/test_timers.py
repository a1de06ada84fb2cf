"""Inter-yield interval statistics for the three time estimators, under the
virtual clock so every number is reproducible."""

import statistics

from stopkit.instrument import compile_source
from stopkit.interp import InterpConfig
from stopkit.options import CompileOptions
from stopkit.runtime import Handle

DELTA = 100.0

CHEAP_LOOP = """
let i = 0;
while (i < %d) { i = i + 1; }
print(i);
"""

EXPENSIVE_LOOP = """
function work(a, b) {
  let x = a * 3 %% 7;
  let y = b + x * 2;
  let z = y %% 13 + a %% 5;
  return z %% 11;
}
let i = 0;
let junk = 0;
while (i < %d) {
  junk = junk + work(i, junk);
  junk = junk + work(junk, i);
  i = i + 1;
}
print(i);
"""


def run_loop(src, timer, step_cost=50.0, countdown_n=2000):
    opts = CompileOptions(timer=timer, yield_interval_ms=DELTA,
                          countdown_n=countdown_n)
    prog = compile_source(src, opts)
    h = Handle(prog, opts, InterpConfig(step_cost_micros=step_cost))
    h.run()
    out = h.pump_to_completion(max_turns=1_000_000)
    assert out.ok, out.error
    return out.metrics["interYieldIntervals"]


def test_approx_mean_within_quarter_of_delta():
    intervals = run_loop(CHEAP_LOOP % 500_000, "approx")
    assert len(intervals) >= 200
    mean = statistics.fmean(intervals)
    assert 0.75 * DELTA <= mean <= 1.25 * DELTA, mean


def test_approx_p95_bounded():
    intervals = run_loop(CHEAP_LOOP % 500_000, "approx")
    p95 = sorted(intervals)[int(0.95 * len(intervals))]
    assert p95 <= 5.6 * DELTA, p95


def test_exact_mean_barely_overshoots_delta():
    intervals = run_loop(CHEAP_LOOP % 300_000, "exact")
    assert len(intervals) >= 50
    mean = statistics.fmean(intervals)
    assert DELTA <= mean <= 1.15 * DELTA, mean


def test_countdown_interval_scales_with_iteration_cost():
    cheap = run_loop(CHEAP_LOOP % 120_000, "countdown")
    costly = run_loop(EXPENSIVE_LOOP % 120_000, "countdown")
    assert len(cheap) >= 5 and len(costly) >= 5
    ratio = statistics.fmean(costly) / statistics.fmean(cheap)
    assert ratio >= 2.0, ratio


def test_approx_interval_statistics_are_reproducible():
    a = run_loop(CHEAP_LOOP % 200_000, "approx")
    b = run_loop(CHEAP_LOOP % 200_000, "approx")
    assert a == b


def test_yield_count_matches_interval_length():
    opts = CompileOptions(timer="exact", yield_interval_ms=DELTA)
    prog = compile_source(CHEAP_LOOP % 100_000, opts)
    h = Handle(prog, opts, InterpConfig(step_cost_micros=50.0))
    h.run()
    out = h.pump_to_completion(max_turns=100000)
    m = out.metrics
    assert len(m["interYieldIntervals"]) == m["yieldCount"] - 1

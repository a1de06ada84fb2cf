"""Benchmark harness: sweep compile options over a directory of programs.

Slowdown is the ratio of interpreter step counts (instrumented / plain), so
reports are deterministic and hardware independent. Interval statistics per
timer come from the virtual clock.
"""

from __future__ import annotations

import csv
import itertools
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from stopkit.instrument import compile_source
from stopkit.interp import InterpConfig, run_plain
from stopkit.options import CompileOptions
from stopkit.runtime import Handle

CSV_COLUMNS = ["benchmark", "cont", "ctor", "timer", "implicits", "args",
               "stacks", "steps", "slowdown", "intervalMeanMs", "intervalStdMs"]


@dataclass
class BenchRow:
    benchmark: str
    cont: str
    ctor: str
    timer: str
    implicits: str
    args: str
    stacks: str
    steps: int = 0
    slowdown: float = 0.0
    interval_mean_ms: float | None = None
    interval_std_ms: float | None = None
    error: str | None = None

    def as_csv(self) -> list:
        return [self.benchmark, self.cont, self.ctor, self.timer,
                self.implicits, self.args, self.stacks, self.steps,
                f"{self.slowdown:.4f}" if not self.error else "",
                "" if self.interval_mean_ms is None else f"{self.interval_mean_ms:.3f}",
                "" if self.interval_std_ms is None else f"{self.interval_std_ms:.3f}"]

    def as_json(self) -> dict:
        return {
            "benchmark": self.benchmark, "cont": self.cont, "ctor": self.ctor,
            "timer": self.timer, "implicits": self.implicits, "args": self.args,
            "stacks": self.stacks, "steps": self.steps, "slowdown": self.slowdown,
            "intervalMeanMs": self.interval_mean_ms,
            "intervalStdMs": self.interval_std_ms, "error": self.error,
        }


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in self.rows:
                w.writerow(row.as_csv())

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump([r.as_json() for r in self.rows], fh, indent=2)
            fh.write("\n")


def _config_product(sweep: dict) -> list[CompileOptions]:
    keys = ("cont", "ctor", "timer", "implicits", "args", "stacks")
    values = [sweep.get(k) or [CompileOptions().to_dict()[k]] for k in keys]
    combos = []
    for combo in itertools.product(*values):
        kw = dict(zip(keys, combo))
        combos.append(CompileOptions(
            yield_interval_ms=sweep.get("yield_interval_ms", 100.0),
            countdown_n=sweep.get("countdown_n", 25000),
            **kw))
    return combos


def run_bench(bench_dir, sweep: dict | None = None,
              step_cost_micros: float = 10.0,
              max_turns: int = 2_000_000) -> BenchReport:
    """Cross-product of the requested option values over every `.ms` file.
    Per-benchmark failures are recorded and the sweep continues."""
    sweep = sweep or {}
    report = BenchReport()
    files = sorted(Path(bench_dir).glob("*.ms"))
    configs = _config_product(sweep)
    cfg = InterpConfig(step_cost_micros=step_cost_micros)
    for path in files:
        source = path.read_text()
        try:
            plain_steps = _plain_steps(source, cfg)
        except Exception as exc:  # record and move on
            for opts in configs:
                report.rows.append(_error_row(path.stem, opts, str(exc)))
            continue
        for opts in configs:
            report.rows.append(
                _bench_one(path.stem, source, opts, cfg, plain_steps, max_turns))
    return report


def _plain_steps(source, cfg) -> int:
    out = run_plain(source, InterpConfig(
        step_cost_micros=cfg.step_cost_micros,
        host_stack_limit=cfg.host_stack_limit))
    if not out.ok:
        raise RuntimeError(f"plain run failed: {out.error}")
    return out.metrics["steps"]


def _error_row(name, opts, message) -> BenchRow:
    row = BenchRow(name, opts.cont, opts.ctor, opts.timer, opts.implicits,
                   opts.args, opts.stacks)
    row.error = message
    return row


def _bench_one(name, source, opts, cfg, plain_steps, max_turns) -> BenchRow:
    row = BenchRow(name, opts.cont, opts.ctor, opts.timer, opts.implicits,
                   opts.args, opts.stacks)
    try:
        prog = compile_source(source, opts)
        handle = Handle(prog, opts, InterpConfig(
            step_cost_micros=cfg.step_cost_micros,
            host_stack_limit=cfg.host_stack_limit))
        handle.run()
        out = handle.pump_to_completion(max_turns=max_turns)
        if not out.ok:
            row.error = out.error
            return row
        row.steps = out.metrics["steps"]
        row.slowdown = row.steps / plain_steps if plain_steps else 0.0
        intervals = out.metrics["interYieldIntervals"]
        if intervals:
            row.interval_mean_ms = statistics.fmean(intervals)
            row.interval_std_ms = (statistics.pstdev(intervals)
                                   if len(intervals) > 1 else 0.0)
    except Exception as exc:
        row.error = str(exc)
    return row

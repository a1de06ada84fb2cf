"""Command-line entry points: compile, run, bench, debug."""

from __future__ import annotations

import argparse
import json
import sys

from stopkit.bench import run_bench
from stopkit.errors import CompileError, MsError, MsSyntaxError
from stopkit.instrument import compile_source, is_instrumented
from stopkit.interp import InterpConfig, run_plain
from stopkit.options import CompileOptions
from stopkit.parser import parse
from stopkit.printer import to_source
from stopkit.runtime import Handle
from stopkit.values import format_value

OPTIONS_HEADER = "// stopkit-options:"

_GRANULARITY = {"loops": "loops-and-functions", "statements": "every-statement"}


def _add_compile_flags(p: argparse.ArgumentParser):
    p.add_argument("--cont", choices=["checked", "exceptional", "eager"],
                   help="continuation strategy")
    p.add_argument("--ctor", choices=["direct", "wrapped"],
                   help="constructor strategy")
    p.add_argument("--timer", choices=["exact", "countdown", "approx"],
                   help="time estimator")
    p.add_argument("--implicits", choices=["true", "false", "plus"],
                   help="expose implicit conversions")
    p.add_argument("--args", dest="args_mode",
                   choices=["false", "varargs", "mixed"],
                   help="arity-mismatch sub-language")
    p.add_argument("--stacks", choices=["normal", "deep"])
    p.add_argument("--granularity", choices=["loops", "statements"],
                   help="suspend-point granularity")
    p.add_argument("--delta", type=float, metavar="MS",
                   help="yield interval in ms")
    p.add_argument("--resample", type=float, metavar="MS",
                   help="estimator resample target in ms")
    p.add_argument("--countdown-n", type=int, metavar="N",
                   help="checks per yield for the countdown timer")
    p.add_argument("--depth-limit", type=int, metavar="L",
                   help="deep-stack segment size")


def _options_from(ns) -> CompileOptions:
    data = {}
    for flag, key in [("cont", "cont"), ("ctor", "ctor"), ("timer", "timer"),
                      ("implicits", "implicits"), ("args_mode", "args"),
                      ("stacks", "stacks"), ("delta", "yield_interval_ms"),
                      ("resample", "resample_target_ms"),
                      ("countdown_n", "countdown_n"),
                      ("depth_limit", "stack_depth_limit")]:
        v = getattr(ns, flag, None)
        if v is not None:
            data[key] = v
    if getattr(ns, "granularity", None):
        data["suspend_granularity"] = _GRANULARITY[ns.granularity]
    return CompileOptions.from_dict(data)


def _interp_config(ns) -> InterpConfig:
    return InterpConfig(
        host_stack_limit=ns.stack_limit,
        step_cost_micros=ns.step_cost,
        real_clock=ns.real_clock,
        proper_tail_calls=not ns.no_ptc)


def _options_header(opts: CompileOptions) -> str:
    pairs = " ".join(f"{k}={v}" for k, v in opts.to_dict().items())
    return f"{OPTIONS_HEADER} {pairs}"


def _options_from_header(text: str) -> CompileOptions | None:
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(OPTIONS_HEADER):
            data = {}
            for pair in line[len(OPTIONS_HEADER):].split():
                k, _, v = pair.partition("=")
                data[k] = v
            for key in ("yield_interval_ms", "resample_target_ms"):
                if key in data:
                    data[key] = float(data[key])
            for key in ("stack_depth_limit", "countdown_n"):
                if key in data:
                    data[key] = int(data[key])
            return CompileOptions.from_dict(data)
        break
    return None


def cmd_compile(ns) -> int:
    source = _read(ns.input)
    opts = _options_from(ns)
    if ns.emit == "anf":
        from stopkit.anf import normalize
        text = to_source(normalize(parse(source)))
    else:
        text = _options_header(opts) + "\n" + to_source(compile_source(source, opts))
    if ns.output:
        with open(ns.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(ns) -> int:
    source = _read(ns.input)
    program = parse(source)
    cfg = _interp_config(ns)
    if ns.plain:
        out = run_plain(program, cfg)
        for line in out.outputs:
            print(line)
    elif is_instrumented(program):
        opts = _options_from_header(source) or _options_from(ns)
        out = _drive(program, opts, cfg, ns)
    else:
        opts = _options_from(ns)
        out = _drive(compile_source(source, opts), opts, cfg, ns)
    if out.error is not None:
        print(f"error: {out.error}", file=sys.stderr)
        return 1
    print("=>", format_value(out.result))
    if ns.metrics == "json":
        print(json.dumps(_metrics_json(out.metrics)))
    return 0


def _drive(program, opts, cfg, ns):
    handle = Handle(program, opts, cfg,
                    on_output=lambda text: print(text, flush=True))
    handle.run()
    return handle.pump_to_completion(max_turns=ns.max_turns)


def _metrics_json(m: dict) -> dict:
    return {
        "steps": m["steps"],
        "maxHostDepth": m["maxHostDepth"],
        "yieldCount": m["yieldCount"],
        "intervals": m["interYieldIntervals"],
        "pauseLatencyMs": m["pauseLatencyMs"],
    }


def cmd_bench(ns) -> int:
    sweep = {}
    for flag, key in [("cont", "cont"), ("ctor", "ctor"), ("timer", "timer"),
                      ("implicits", "implicits"), ("args_mode", "args"),
                      ("stacks", "stacks")]:
        v = getattr(ns, flag)
        if v:
            sweep[key] = v.split(",")
    if ns.delta is not None:
        sweep["yield_interval_ms"] = ns.delta
    if ns.countdown_n is not None:
        sweep["countdown_n"] = ns.countdown_n
    report = run_bench(ns.dir, sweep, step_cost_micros=ns.step_cost,
                       max_turns=ns.max_turns)
    if ns.csv:
        report.to_csv(ns.csv)
    if ns.json:
        report.to_json(ns.json)
    if not ns.csv and not ns.json:
        for row in report.rows:
            print(",".join(str(c) for c in row.as_csv()))
    failures = [r for r in report.rows if r.error]
    for r in failures:
        print(f"note: {r.benchmark} [{r.cont}/{r.timer}]: {r.error}",
              file=sys.stderr)
    return 0


def cmd_debug(ns) -> int:
    from stopkit import debugserver
    if ns.transport == "stdio":
        debugserver.serve_stdio()
    else:
        print(f"listening on ws://{ns.host}:{ns.port}", file=sys.stderr)
        debugserver.serve_websocket(ns.host, ns.port)
    return 0


def _read(path) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="stopkit",
        description="Execution control for MiniScript: compile programs to "
                    "support pausing, stepping, deep stacks, and cooperative "
                    "yielding; run them on the included interpreter.")
    sub = top.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="instrument a program (source to source)")
    c.add_argument("input")
    c.add_argument("-o", "--output")
    c.add_argument("--emit", choices=["anf"],
                   help="emit an intermediate form instead")
    _add_compile_flags(c)
    c.set_defaults(fn=cmd_compile)

    r = sub.add_parser("run", help="compile in memory and run under the driver")
    r.add_argument("input")
    r.add_argument("--plain", action="store_true",
                   help="run the plain interpreter with no instrumentation")
    r.add_argument("--metrics", choices=["json"], help="print metrics at exit")
    r.add_argument("--max-turns", type=int, default=None,
                   help="abort after this many event-loop turns")
    r.add_argument("--stack-limit", type=int, default=1000)
    r.add_argument("--step-cost", type=float, default=1.0,
                   help="virtual microseconds per interpreter step")
    r.add_argument("--real-clock", action="store_true")
    r.add_argument("--no-ptc", action="store_true",
                   help="disable host proper tail calls (exercise bouncing)")
    _add_compile_flags(r)
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", help="sweep options over a benchmark directory")
    b.add_argument("dir")
    b.add_argument("--csv", help="write the report as CSV")
    b.add_argument("--json", help="write the report as JSON")
    b.add_argument("--max-turns", type=int, default=2_000_000)
    b.add_argument("--step-cost", type=float, default=10.0)
    for name in ("--cont", "--ctor", "--timer", "--implicits", "--stacks"):
        b.add_argument(name, help="comma-separated values to sweep")
    b.add_argument("--args", dest="args_mode", help="comma-separated values")
    b.add_argument("--delta", type=float, default=None)
    b.add_argument("--countdown-n", type=int, default=None)
    b.set_defaults(fn=cmd_bench)

    d = sub.add_parser("debug", help="serve the debugger protocol")
    d.add_argument("--transport", choices=["stdio", "websocket"],
                   default="stdio")
    d.add_argument("--port", type=int, default=8765)
    d.add_argument("--host", default="127.0.0.1")
    d.set_defaults(fn=cmd_debug)
    return top


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.fn(ns)
    except MsSyntaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CompileError, MsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

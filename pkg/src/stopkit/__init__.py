"""MiniScript execution-control toolkit.

A source-to-source compiler that rewrites MiniScript programs so their
stacks can be reified into first-class continuations, plus a deterministic
interpreter with a simulated event loop that runs the rewritten programs
with cooperative yielding, pause/resume, deep stacks, breakpoints, and
single-stepping.
"""

from stopkit.ast import SourceLoc, Program
from stopkit.errors import MsSyntaxError, MsError, CompileError
from stopkit.parser import parse
from stopkit.printer import to_source
from stopkit.options import CompileOptions
from stopkit.anf import anf, box_assignables, label_call_sites
from stopkit.instrument import instrument, compile_source
from stopkit.interp import InterpConfig, Outcome, run_plain, statement_trace
from stopkit.runtime import Handle, run_instrumented

__version__ = "0.1.0"

__all__ = [
    "SourceLoc",
    "Program",
    "MsSyntaxError",
    "MsError",
    "CompileError",
    "parse",
    "to_source",
    "CompileOptions",
    "anf",
    "box_assignables",
    "label_call_sites",
    "instrument",
    "compile_source",
    "InterpConfig",
    "Outcome",
    "run_plain",
    "statement_trace",
    "Handle",
    "run_instrumented",
]

"""Compile-time option record and validation."""

from __future__ import annotations

from dataclasses import dataclass, fields

from stopkit.errors import CompileError

CONT_STRATEGIES = ("checked", "exceptional", "eager")
CTOR_STRATEGIES = ("direct", "wrapped")
TIMERS = ("exact", "countdown", "approx")
STACKS = ("normal", "deep")
IMPLICITS = ("true", "false", "plus")
ARGS_MODES = ("false", "varargs", "mixed")
GRANULARITIES = ("loops-and-functions", "every-statement")

_UNSUPPORTED_KEYS = ("getters", "eval")


@dataclass
class CompileOptions:
    cont: str = "checked"              # continuation representation
    ctor: str = "wrapped"              # constructor representation
    timer: str = "approx"              # time estimator
    yield_interval_ms: float = 100.0   # target time between yields
    stacks: str = "normal"
    stack_depth_limit: int = 500       # segment size when stacks == "deep"
    implicits: str = "false"           # rewrite operators to expose conversions
    args: str = "false"                # arity-mismatch sub-language
    suspend_granularity: str = "loops-and-functions"
    resample_target_ms: float = 100.0  # how often the estimator reads the clock
    countdown_n: int = 25000           # calls per yield for the countdown timer

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            ("cont", CONT_STRATEGIES), ("ctor", CTOR_STRATEGIES),
            ("timer", TIMERS), ("stacks", STACKS),
            ("implicits", IMPLICITS), ("args", ARGS_MODES),
            ("suspend_granularity", GRANULARITIES),
        ]
        for name, allowed in checks:
            if getattr(self, name) not in allowed:
                raise CompileError(
                    f"invalid value {getattr(self, name)!r} for option {name}; "
                    f"one of {', '.join(allowed)}")
        if self.yield_interval_ms <= 0:
            raise CompileError("yield_interval_ms must be positive")
        if self.resample_target_ms <= 0:
            raise CompileError("resample_target_ms must be positive")
        if self.stack_depth_limit <= 0:
            raise CompileError("stack_depth_limit must be positive")
        if self.countdown_n <= 0:
            raise CompileError("countdown_n must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "CompileOptions":
        for key in _UNSUPPORTED_KEYS:
            if data.get(key):
                raise CompileError(f"option {key!r} is not supported by this toolkit")
        known = {f.name for f in fields(cls)}
        opts = {k: v for k, v in data.items() if k in known and v is not None}
        for k in data:
            if k not in known and k not in _UNSUPPORTED_KEYS:
                raise CompileError(f"unknown compile option {k!r}")
        return cls(**opts)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def fingerprint(self) -> str:
        return (f"cont={self.cont},ctor={self.ctor},timer={self.timer},"
                f"implicits={self.implicits},args={self.args},stacks={self.stacks},"
                f"granularity={self.suspend_granularity}")

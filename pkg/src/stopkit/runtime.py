"""Execution semantics for instrumented programs.

Holds the mode protocol (normal -> capture -> restore -> normal), the
reified stack, the control operator, the driver that runs turns off a
simulated event queue, time estimators, deep-stack segmentation, and the
run/pause/resume/step/breakpoint surface.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

from stopkit import ast
from stopkit.errors import HostUnwind, MsError, MsThrow
from stopkit.instrument import MAIN, compile_source, is_instrumented
from stopkit.interp import Interp, InterpConfig, Outcome
from stopkit.options import CompileOptions
from stopkit.values import (Array, Closure, Continuation, Native, Record,
                            format_value)

# the distinguished capture signal thrown by exceptional/eager control
CAPTURE_SIGNAL = Record({"$signal": "capture"})

NORMAL, CAPTURE, RESTORE = "normal", "capture", "restore"


# ------------------------------------------------------------------ estimators

class ExactTimer:
    """Reads the clock on every check; precise and the most expensive."""

    def __init__(self, clock):
        self.clock = clock
        self.start = clock()

    def elapsed(self) -> float:
        return self.clock() - self.start

    def reset(self):
        self.start = self.clock()


class CountdownTimer:
    """Pure call counting: yields after a fixed number of checks, however
    long those checks actually took."""

    def __init__(self, n: int, interval_ms: float):
        self.n = n
        self.interval_ms = interval_ms
        self.count = 0

    def elapsed(self) -> float:
        self.count += 1
        return self.interval_ms if self.count >= self.n else 0.0

    def reset(self):
        self.count = 0


class ApproxTimer:
    """Sampling estimator: counts checks (distance) and periodically reads
    the clock to fit the check rate (velocity); elapsed time is estimated as
    distance/velocity between samples."""

    def __init__(self, clock, resample_target_ms: float, floor_velocity: float = 1.0):
        self.clock = clock
        self.t = resample_target_ms
        self.floor = floor_velocity  # calls per ms until the second sample
        self.distance = 0.0
        self.counter = 0.0
        self.ticks = 0.0
        self.last_time = 0.0
        self.velocity = 0.0
        self.seeded = False

    def elapsed(self) -> float:
        self.distance += 1
        if not self.seeded:
            self.seeded = True
            self.last_time = self.clock()
            self.velocity = self.floor
            self.ticks = self.t * self.velocity
            self.counter = self.ticks
            return self.distance / self.velocity
        self.counter -= 1
        if self.counter <= 0:
            now = self.clock()
            dt = now - self.last_time
            if dt > 0:
                self.velocity = self.ticks / dt
            self.last_time = now
            self.ticks = self.t * self.velocity
            self.counter = self.ticks
        return self.distance / self.velocity

    def reset(self):
        self.distance = 0.0


def make_estimator(opts: CompileOptions, clock):
    if opts.timer == "exact":
        return ExactTimer(clock)
    if opts.timer == "countdown":
        return CountdownTimer(opts.countdown_n, opts.yield_interval_ms)
    return ApproxTimer(clock, opts.resample_target_ms)


# ------------------------------------------------------------------- the bridge

class Runtime:
    """The `$rt` intrinsic namespace plus all driver state. One per run."""

    def __init__(self, interp: Interp, opts: CompileOptions,
                 on_done=None, on_pause=None, on_break=None, on_output=None):
        self.interp = interp
        self.opts = opts
        self.mode = NORMAL
        self.stack: list[Record] = []          # capture / eager shadow stack
        self.restore_stack: list[Record] = []  # frames being re-entered
        self.segments: list[Continuation] = []  # parked deep-stack segments
        self.resume_value = None
        self.must_pause = False
        self.pause_requested_at: float | None = None
        self.saved: Continuation | None = None
        self.paused = False
        self.user_pause_seen = False
        self.breakpoints: set[int] = set()
        self.stepping = False
        self.queue: deque = deque()
        self.commands: deque = deque()
        self.cmd_lock = threading.Lock()
        self.depth_mirror = 0
        self.last_suspend_line: int | None = None
        self.estimator = make_estimator(opts, interp.now_ms)
        self.yield_times: list[float] = []
        self.pause_latency_ms: float | None = None
        self.mode_log: list[str] = [NORMAL]
        self.mode_log_limit = 50_000
        self.on_done = on_done
        self.on_pause = on_pause
        self.on_break = on_break
        self.on_output_cb = on_output
        self.capture_hook = None  # test hook: called with (receiver_frame, kval)
        self.bounce_threshold = max(16, interp.cfg.host_stack_limit // 2)
        self.bottom_frame = Record({
            "label": None,
            "locals": Array([]),
            "reenter": Native("resume", self._bottom_reenter),
        })
        interp.rt = self
        interp.globals.vars["$rt"] = self._make_namespace()
        interp.globals.vars["control"] = Native("control", self._control_native)

    # ------------------------------------------------------------- mode keeping

    def _set_mode(self, m):
        self.mode = m
        if len(self.mode_log) < self.mode_log_limit:
            self.mode_log.append(m)

    # ---------------------------------------------------------------- intrinsics

    def _make_namespace(self) -> Record:
        def native(name, fn):
            return Native(name, fn)

        ns = {
            "mode": native("mode", lambda a, t: self.mode),
            "pushFrame": native("pushFrame", lambda a, t: self.push_frame(a[0])),
            "popFrame": native("popFrame", lambda a, t: self.pop_frame()),
            "topFrame": native("topFrame", lambda a, t: self.top_frame()),
            "control": Native("control", self._control_native),
            "maySuspend": native("maySuspend", self._may_suspend_native),
            "deepCheck": native("deepCheck", lambda a, t: self.deep_check()),
            "reapply": native("reapply",
                              lambda a, t: self.reapply(a[0], a[1], a[2], a[3])),
            "currentFunction": native("currentFunction",
                                      lambda a, t: self.interp.current_closure),
            "currentCallKind": native("currentCallKind",
                                      lambda a, t: self.interp.current_kind),
            "isRecord": native("isRecord",
                               lambda a, t: isinstance(a[0], Record)),
            "hasField": native("hasField",
                               lambda a, t: isinstance(a[0], Record)
                               and a[1] in a[0].fields),
            "isSignal": native("isSignal", lambda a, t: self.is_signal(a[0])),
            "stackDepth": native("stackDepth", lambda a, t: float(len(self.stack))),
            "truncateStack": native("truncateStack", self._truncate_native),
            "checkArity": native("checkArity", self._check_arity_native),
            "enterCall": native("enterCall", lambda a, t: self.enter_call()),
            "exitCall": native("exitCall", lambda a, t: self.exit_call()),
        }
        return Record(ns)

    # frame stack -------------------------------------------------------------

    def push_frame(self, frame):
        self.stack.append(frame)
        return None

    def pop_frame(self):
        if self.mode == RESTORE:
            if not self.restore_stack:
                raise MsError("restore underflow: no frame to pop")
            return self.restore_stack.pop()
        if not self.stack:
            raise MsError("frame stack underflow")
        return self.stack.pop()

    def top_frame(self):
        if self.mode == RESTORE and self.restore_stack:
            return self.restore_stack[-1]
        return self.bottom_frame

    def _bottom_reenter(self, args, this):
        """Innermost frame reached: hand the resume value to the capture site."""
        self._set_mode(NORMAL)
        v, self.resume_value = self.resume_value, None
        return v

    def _truncate_native(self, args, this):
        depth = int(args[0])
        del self.stack[depth:]
        return None

    def _check_arity_native(self, args, this):
        want = int(args[0])
        got = len(self.interp.current_args)
        if got != want:
            fn = self.interp.current_closure
            raise MsError(f"arity mismatch: {fn.name or 'function'} "
                          f"expects {want} arguments, got {got} (args=false)")
        return None

    def is_signal(self, v) -> bool:
        return v is CAPTURE_SIGNAL

    # interpreter hooks ---------------------------------------------------------

    def enter_call(self):
        self.depth_mirror += 1
        return None

    def exit_call(self):
        self.depth_mirror -= 1
        return None

    def on_output(self, text):
        if self.on_output_cb:
            self.on_output_cb(text)

    # control / continuations ---------------------------------------------------

    def _control_native(self, args, this):
        return self.control(args[0] if args else None)

    def control(self, receiver):
        if receiver is None or not isinstance(receiver, (Closure, Native)):
            raise MsError("control expects a function argument")
        if self.interp.host_internal_depth > 0:
            raise MsError("capture in uninstrumented code: a conversion method "
                          "tried to capture its continuation (implicits=false)")
        if self.mode != NORMAL:
            raise MsError(f"control invoked in {self.mode} mode")
        self.stack.append(Record({"reenter": receiver}))
        self._set_mode(CAPTURE)
        if self.opts.cont in ("exceptional", "eager"):
            raise MsThrow(CAPTURE_SIGNAL)
        return None

    def apply_continuation(self, k: Continuation, value):
        self._set_mode(CAPTURE)
        raise HostUnwind(k, value)

    def tail_bounce(self, callee, args, this):
        """Host has no proper tail calls: route the tail call through the
        driver via the compiled $bounce helper."""
        holder = self.interp.globals.lookup_env("$bounce")
        if holder is None:
            raise MsError("tail call bounce helper missing from compiled program")
        bounce = holder.vars["$bounce"]
        return self.interp.call(bounce, [callee, Array(list(args)), this])

    def reapply(self, fn, argv, this_val, kind):
        """Call-kind-preserving re-invocation used by reenter thunks: a
        constructor frame is re-entered as a plain call against the original
        object, but the new/call distinction survives for the result fix-up."""
        items = list(argv.items) if isinstance(argv, Array) else list(argv)
        if kind == "new":
            return self.interp.call(fn, items, this_val, "new", pre_this=this_val)
        return self.interp.call(fn, items, this_val, "call")

    # suspending ----------------------------------------------------------------

    def _may_suspend_native(self, args, this):
        line = int(args[0])
        kind = args[2] if len(args) > 2 else "stmt"
        return self.may_suspend(line, kind)

    def may_suspend(self, line: int, kind: str):
        if kind != "entry" and (self.stepping or line in self.breakpoints):
            reason = "breakpoint" if line in self.breakpoints else "step"
            self.stepping = False
            self.last_suspend_line = line

            def pause_receiver(a, t):
                k = a[0]
                self.saved = k
                self.paused = True
                if self.on_break:
                    self.on_break(line, reason)
                return None

            return self.control(Native("breakReceiver", pause_receiver))
        if self.estimator.elapsed() >= self.opts.yield_interval_ms:
            self.estimator.reset()
            self.last_suspend_line = line
            now = self.interp.now_ms()
            self.yield_times.append(now)

            def yield_receiver(a, t):
                k = a[0]

                def resumption():
                    if self.must_pause:
                        self.must_pause = False
                        self.saved = k
                        self.paused = True
                        if self.pause_requested_at is not None:
                            self.pause_latency_ms = (self.interp.now_ms()
                                                     - self.pause_requested_at)
                            self.pause_requested_at = None
                        if self.on_pause:
                            self.on_pause()
                        return None
                    return self.apply_continuation(k, None)

                self.queue.append(resumption)
                return None

            return self.control(Native("yieldReceiver", yield_receiver))
        return None

    def deep_check(self):
        if self.opts.stacks != "deep" or self.mode != NORMAL:
            return None
        if self.interp.depth < self.opts.stack_depth_limit:
            return None

        def segment_receiver(a, t):
            k = a[0]
            rest = Continuation(k.frames[1:], k.segments)
            resume = Continuation(k.frames[:1], k.segments + (rest,))
            self.queue.append(lambda: self.apply_continuation(resume, None))
            return None

        return self.control(Native("segmentReceiver", segment_receiver))

    # metrics ---------------------------------------------------------------

    def metrics(self) -> dict:
        intervals = [b - a for a, b in zip(self.yield_times, self.yield_times[1:])]
        return {
            "yieldCount": len(self.yield_times),
            "interYieldIntervals": intervals,
            "pauseLatencyMs": self.pause_latency_ms,
        }


# ---------------------------------------------------------------------- handle

@dataclass
class _Done:
    value: object = None
    error: str | None = None


class Handle:
    """Drives one compiled program: run starts it, pump executes event-loop
    turns, pause/resume/step/breakpoints arrive between turns."""

    def __init__(self, program: ast.Program, opts: CompileOptions | None = None,
                 config: InterpConfig | None = None, on_done=None, on_pause=None,
                 on_break=None, on_output=None):
        self.opts = opts or getattr(program, "options", None) or CompileOptions()
        self.interp = Interp(config)
        self.rt = Runtime(self.interp, self.opts, on_done=on_done,
                          on_pause=on_pause, on_break=on_break,
                          on_output=on_output)
        self.program = program
        self.status = "idle"
        self.done: _Done | None = None
        self.turns = 0
        self.command_errors: list[str] = []
        self.on_command_error = None
        self._loaded = False

    # -------------------------------------------------------------- public API

    def run(self):
        """Start the program; returns immediately. Drive it with pump()."""
        if self.status not in ("idle",):
            raise MsError(f"run: program already {self.status}")
        self._load_top_level()
        main = self.interp.globals.vars.get(MAIN)
        if not isinstance(main, Closure):
            raise MsError("compiled program has no entry function")
        self.rt.queue.append(lambda: self.interp.call(main, []))
        self.status = "running"

    def pause(self):
        with self.rt.cmd_lock:
            self.rt.commands.append(("pause", None))

    def resume(self):
        with self.rt.cmd_lock:
            self.rt.commands.append(("resume", None))

    def step(self):
        with self.rt.cmd_lock:
            self.rt.commands.append(("step", None))

    def set_breakpoints(self, lines):
        if self.opts.suspend_granularity != "every-statement":
            raise MsError("breakpoints require compiling with "
                          "suspend_granularity=every-statement")
        with self.rt.cmd_lock:
            self.rt.commands.append(("breakpoints", set(int(x) for x in lines)))

    def pump(self, max_turns: int | None = None) -> str:
        """Run queued turns until done, paused, or out of turns/budget.
        Commands (pause/resume/step/breakpoints) are observed between turns."""
        while self.status in ("running", "paused"):
            self._process_commands()
            if self.rt.paused:
                self.status = "paused"
                return self.status
            if self.status == "paused":
                self.status = "running"  # a resume command arrived
            if self.status != "running" or not self.rt.queue:
                break
            if max_turns is not None and max_turns <= 0:
                return "budget"
            if max_turns is not None:
                max_turns -= 1
            thunk = self.rt.queue.popleft()
            self.turns += 1
            self._run_turn(thunk)
        return self.status

    def pump_to_completion(self, max_turns: int | None = None) -> Outcome:
        status = self.pump(max_turns)
        if status == "budget":
            self._finish(error=f"turn budget exhausted after {self.turns} turns")
        elif status == "running" and not self.rt.queue:
            self._finish(error="event queue starved without completing")
        elif status == "paused":
            self._finish(error="program paused and never resumed")
        return self.outcome()

    def outcome(self) -> Outcome:
        out = Outcome()
        if self.done is not None:
            out.result = self.done.value
            out.error = self.done.error
        out.outputs = list(self.interp.outputs)
        out.metrics = self.interp.metrics()
        return out

    # ----------------------------------------------------------------- internals

    def _load_top_level(self):
        if self._loaded:
            return
        self.interp.run_top_level(self.program)
        self._loaded = True

    def _process_commands(self):
        rt = self.rt
        while True:
            with rt.cmd_lock:
                if not rt.commands:
                    return
                cmd, arg = rt.commands.popleft()
            err = None
            if cmd == "pause":
                if rt.paused:
                    # already stopped (e.g. at a breakpoint): the user pause
                    # must not be lost; the stop state is preserved for resume
                    if not rt.user_pause_seen:
                        rt.user_pause_seen = True
                        if rt.on_pause:
                            rt.on_pause()
                elif not rt.must_pause:
                    rt.must_pause = True
                    rt.pause_requested_at = self.interp.now_ms()
            elif cmd == "resume":
                err = self._resume_now(step=False)
            elif cmd == "step":
                err = self._resume_now(step=True)
            elif cmd == "breakpoints":
                rt.breakpoints = arg
            if err is not None:
                self.command_errors.append(err)
                if self.on_command_error:
                    self.on_command_error(err)

    def _resume_now(self, step: bool) -> str | None:
        rt = self.rt
        if rt.saved is None:
            if step and self.status == "running":
                rt.stepping = True  # stepping from program start
                return None
            return "resume: program is not paused"
        k, rt.saved = rt.saved, None
        rt.paused = False
        rt.user_pause_seen = False
        rt.stepping = step
        if self.status == "paused":
            self.status = "running"
        rt.queue.append(lambda: rt.apply_continuation(k, None))
        return None

    def _run_turn(self, thunk):
        rt = self.rt
        while True:
            try:
                value = thunk()
            except HostUnwind as hu:
                rt.stack = []
                thunk = self._begin_restore(hu.continuation, hu.value)
                if thunk is None:
                    value = rt.resume_value
                    rt.resume_value = None
                    rt._set_mode(NORMAL)
                else:
                    continue
            except MsThrow as exc:
                if rt.mode == CAPTURE and exc.value is CAPTURE_SIGNAL:
                    value = None
                else:
                    self._finish(error="uncaught exception: "
                                 + format_value(exc.value))
                    return
            except MsError as exc:
                self._finish(error=str(exc))
                return
            if rt.mode == CAPTURE:
                thunk = self._finish_capture()
                continue
            # a value computed in normal mode
            if rt.segments:
                # underflow: the current (empty) continuation is abandoned in
                # favor of the parked segment below it; marking capture keeps
                # the mode protocol uniform with continuation application
                parked = rt.segments.pop()
                rt._set_mode(CAPTURE)
                thunk = self._begin_restore(parked, value)
                if thunk is None:
                    value = rt.resume_value
                    rt.resume_value = None
                    rt._set_mode(NORMAL)
                    continue
                continue
            if not rt.queue and not rt.paused:
                self._finish(value=value)
            return

    def _begin_restore(self, k: Continuation, value):
        """Set up restoration of k; returns the bootstrap thunk, or None when
        there is nothing to re-enter (the value lands directly)."""
        rt = self.rt
        rt._set_mode(RESTORE)
        rt.restore_stack = list(k.frames)
        rt.segments = list(k.segments)
        rt.resume_value = value
        if not rt.restore_stack:
            return None

        def bootstrap():
            bottom = rt.restore_stack[-1]
            return self.interp.call(bottom.fields["reenter"], [])

        return bootstrap

    def _finish_capture(self):
        rt = self.rt
        raw, rt.stack = rt.stack, []
        if self.opts.cont == "eager":
            receiver_frame = raw[-1]
            frames = tuple(reversed(raw[:-1]))
        else:
            receiver_frame = raw[0]
            frames = tuple(raw[1:])
        kval = Continuation(frames, tuple(rt.segments))
        rt.segments = []
        if rt.capture_hook:
            rt.capture_hook(receiver_frame, kval)
        # a vacuous restore: the receiver starts in an emptied continuation
        rt._set_mode(RESTORE)
        rt.restore_stack = []
        rt._set_mode(NORMAL)
        receiver = receiver_frame.fields["reenter"]
        return lambda: self.interp.call(receiver, [kval])

    def _finish(self, value=None, error=None):
        if self.done is not None:
            return
        self.done = _Done(value=value, error=error)
        self.status = "error" if error else "done"
        if self.rt.on_done:
            self.rt.on_done(self.outcome())


# ------------------------------------------------------------------ entry point

def run_instrumented(program: ast.Program | str,
                     opts: CompileOptions | None = None,
                     config: InterpConfig | None = None,
                     max_turns: int | None = None,
                     handle_callbacks: dict | None = None) -> Outcome:
    """Compile (if given source text) and run a program under the driver."""
    if isinstance(program, str):
        program = compile_source(program, opts)
    cbs = handle_callbacks or {}
    handle = Handle(program, opts, config, **cbs)
    handle.run()
    return handle.pump_to_completion(max_turns)

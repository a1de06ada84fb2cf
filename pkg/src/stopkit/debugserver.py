"""Debug server: the run/pause/resume/step/breakpoint surface over a wire.

Requests and events are JSON objects. stdio framing is one JSON document
per line; websocket framing is one JSON document per text frame. A single
client is served at a time; a disconnect resets the session to idle.

    requests: {"type": "loadProgram", "source": ..., "options": {...}}
              {"type": "run" | "pause" | "resume" | "step" | "status"}
              {"type": "setBreakpoints", "lines": [...]}
    events:   {"type": "loaded" | "running" | "resumed"}
              {"type": "breakpoints", "lines": [...]}
              {"type": "paused", "line": N, "reason": "breakpoint|step|pause"}
              {"type": "output", "value": ...}
              {"type": "done", "result": ...}
              {"type": "error", "message": ...}
              {"type": "status", "state": ..., "breakpoints": [...]}

Every request is answered by an effect event or an error event; paused is
the (asynchronous) effect of pause and step.
"""

from __future__ import annotations

import json
import queue
import sys
import threading
import time

from stopkit.errors import CompileError, MsError, MsSyntaxError
from stopkit.instrument import compile_source
from stopkit.interp import InterpConfig
from stopkit.options import CompileOptions
from stopkit.runtime import Handle
from stopkit.values import to_jsonable

TURN_SLICE = 400


class DebugSession:
    """Protocol state machine; transport-independent."""

    def __init__(self, send):
        self.send = send
        self.handle: Handle | None = None
        self.pending_lines: set[int] = set()

    # ------------------------------------------------------------------ events

    def _event(self, type_, **fields):
        fields["type"] = type_
        self.send(fields)

    def _error(self, message):
        self._event("error", message=str(message))

    # ---------------------------------------------------------------- requests

    def handle_request(self, msg):
        if not isinstance(msg, dict) or "type" not in msg:
            self._error("malformed request: expected an object with a type")
            return
        kind = msg["type"]
        fn = getattr(self, f"_req_{kind}", None)
        if fn is None:
            self._error(f"unknown request type {kind!r}")
            return
        try:
            fn(msg)
        except (CompileError, MsSyntaxError, MsError) as exc:
            self._error(exc)

    def _req_loadProgram(self, msg):
        source = msg.get("source")
        if not isinstance(source, str):
            self._error("loadProgram needs a source string")
            return
        raw = dict(msg.get("options") or {})
        raw.setdefault("suspend_granularity", "every-statement")
        opts = CompileOptions.from_dict(raw)
        program = compile_source(source, opts)
        self.handle = Handle(
            program, opts, InterpConfig(),
            on_done=lambda out: self._on_done(out),
            on_pause=lambda: self._event(
                "paused", line=self.handle.rt.last_suspend_line, reason="pause"),
            on_break=lambda line, reason: self._event("paused", line=line,
                                                      reason=reason),
            on_output=lambda text: self._event("output", value=text))
        self.handle.on_command_error = self._error
        self._event("loaded")

    def _on_done(self, out):
        if out.error is not None:
            self._event("error", message=out.error)
        else:
            self._event("done", result=to_jsonable(out.result))

    def _req_run(self, msg):
        if self.handle is None:
            self._error("no program loaded")
            return
        self.handle.run()
        if self.pending_lines:
            self.handle.set_breakpoints(self.pending_lines)
            self.pending_lines = set()
        self._event("running")

    def _req_pause(self, msg):
        if self.handle is None:
            self._error("no program loaded")
            return
        self.handle.pause()

    def _req_resume(self, msg):
        if self.handle is None:
            self._error("no program loaded")
            return
        self.handle.resume()
        self._event("resumed")

    def _req_step(self, msg):
        if self.handle is None:
            self._error("no program loaded")
            return
        self.handle.step()

    def _req_status(self, msg):
        if self.handle is None:
            self._event("status", state="idle", breakpoints=[])
            return
        state = self.handle.status
        self._event("status", state="loaded" if state == "idle" else state,
                    breakpoints=sorted(self.handle.rt.breakpoints
                                       or self.pending_lines))

    def _req_setBreakpoints(self, msg):
        lines = msg.get("lines")
        if not isinstance(lines, list):
            self._error("setBreakpoints needs a list of lines")
            return
        lines = sorted(int(x) for x in lines)
        if self.handle is None or self.handle.status == "idle":
            self.pending_lines = set(lines)  # applied when run starts
        else:
            self.handle.set_breakpoints(lines)
        self._event("breakpoints", lines=lines)

    # ------------------------------------------------------------------ driving

    def tick(self) -> bool:
        """Pump a slice of turns; True if the program made progress."""
        if self.handle is None or self.handle.status not in ("running", "paused"):
            return False
        before = self.handle.turns
        self.handle.pump(max_turns=TURN_SLICE)
        return self.handle.turns != before


def _decode(session, raw):
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as exc:
        session._error(f"malformed JSON: {exc}")
        return None
    return msg


# ------------------------------------------------------------------ transports

def serve_stdio(stdin=None, stdout=None, max_seconds: float | None = None):
    """Newline-delimited JSON over stdio; returns when stdin closes."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    lock = threading.Lock()

    def send(obj):
        with lock:
            stdout.write(json.dumps(obj) + "\n")
            stdout.flush()

    session = DebugSession(send)
    lines: queue.Queue = queue.Queue()
    eof = threading.Event()

    def reader():
        for line in stdin:
            lines.put(line)
        eof.set()

    t = threading.Thread(target=reader, daemon=True)
    t.start()
    start = time.monotonic()
    while True:
        if max_seconds is not None and time.monotonic() - start > max_seconds:
            return
        try:
            raw = lines.get(timeout=0.002)
        except queue.Empty:
            raw = None
        if raw is not None:
            raw = raw.strip()
            if raw:
                msg = _decode(session, raw)
                if msg is not None:
                    session.handle_request(msg)
        elif eof.is_set() and lines.empty():
            return
        session.tick()


def serve_websocket(host: str = "127.0.0.1", port: int = 8765,
                    ready_event=None, stop_event=None):
    """One JSON document per text frame; serves one client at a time."""
    try:
        from websockets.sync.server import serve
    except ImportError as exc:  # pragma: no cover
        raise MsError("websocket transport requires the 'websockets' package; "
                      "install stopkit[ws]") from exc

    busy = threading.Lock()

    def handler(conn):
        if not busy.acquire(blocking=False):
            conn.send(json.dumps({"type": "error",
                                  "message": "another client is connected"}))
            conn.close()
            return
        try:
            session = DebugSession(lambda obj: conn.send(json.dumps(obj)))
            while True:
                if stop_event is not None and stop_event.is_set():
                    return
                try:
                    raw = conn.recv(timeout=0.002)
                except TimeoutError:
                    raw = None
                except Exception:
                    return  # client went away; reset to idle
                if raw is not None:
                    msg = _decode(session, raw)
                    if msg is not None:
                        session.handle_request(msg)
                session.tick()
        finally:
            busy.release()

    with serve(handler, host, port) as server:
        if ready_event is not None:
            ready_event.set()
        if stop_event is None:
            server.serve_forever()
        else:
            t = threading.Thread(target=server.serve_forever, daemon=True)
            t.start()
            stop_event.wait()
            server.shutdown()

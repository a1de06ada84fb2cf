"""Debug protocol: sessions over the in-process API, stdio framing, and the
websocket transport."""

import io
import json
import socket
import threading
import time

import pytest

from stopkit.debugserver import DebugSession, serve_stdio, serve_websocket
from stopkit.interp import statement_trace

SRC = "let a = 1;\nlet b = 2;\nlet c = a + b;\nprint(c);\n"
LOOP = "let n = 0;\nwhile (true) {\n  n = n + 1;\n}\n"


class Client:
    """Drives a DebugSession directly; events are collected in order."""

    def __init__(self):
        self.events = []
        self.session = DebugSession(self.events.append)

    def send(self, **msg):
        self.session.handle_request(msg)

    def pump(self, n=200):
        for _ in range(n):
            self.session.tick()

    def pump_until(self, type_, n=5000):
        seen = len(self.events)
        for _ in range(n):
            self.session.tick()
            for ev in self.events[seen:]:
                if ev["type"] == type_:
                    return ev
            seen = len(self.events)
        raise AssertionError(f"no {type_} event; got {self.events}")

    def types(self):
        return [e["type"] for e in self.events]


def test_load_run_done():
    c = Client()
    c.send(type="loadProgram", source=SRC)
    c.send(type="run")
    ev = c.pump_until("done")
    assert ev["result"] is None
    assert c.types()[:2] == ["loaded", "running"]
    assert {"type": "output", "value": "3"} in c.events


def test_breakpoint_pauses_at_line():
    c = Client()
    c.send(type="loadProgram", source=SRC)
    c.send(type="setBreakpoints", lines=[3])
    c.send(type="run")
    ev = c.pump_until("paused")
    assert ev["line"] == 3 and ev["reason"] == "breakpoint"
    c.send(type="resume")
    done = c.pump_until("done")
    assert done is not None


def test_step_sequence_matches_trace():
    c = Client()
    c.send(type="loadProgram", source=SRC)
    c.send(type="run")
    c.send(type="step")
    lines = []
    while True:
        evs = [e for e in c.events if e["type"] in ("paused", "done", "error")]
        n = len(evs)
        c.pump(50)
        for e in [e for e in c.events if e["type"] in ("paused", "done", "error")][n:]:
            if e["type"] == "paused":
                lines.append(e["line"])
                c.send(type="step")
            elif e["type"] == "done":
                expected = [l.line for l in statement_trace(SRC)]
                assert lines == expected
                return
            else:
                raise AssertionError(e)


def test_pause_and_resume_infinite_loop():
    c = Client()
    c.send(type="loadProgram", source=LOOP,
           options={"timer": "exact", "yield_interval_ms": 5.0})
    c.send(type="run")
    c.pump(10)
    c.send(type="pause")
    ev = c.pump_until("paused")
    assert ev["reason"] == "pause"
    c.send(type="resume")
    c.pump(20)
    assert c.session.handle.status in ("running", "paused")
    assert c.session.handle.turns > 0


def test_replaying_a_transcript_reproduces_the_event_stream():
    # virtual clock + commands observed between turns => determinism
    script = [
        dict(type="loadProgram", source=SRC),
        dict(type="setBreakpoints", lines=[2, 4]),
        dict(type="run"),
        dict(type="resume"),
        dict(type="resume"),
    ]

    def one_session():
        c = Client()
        for msg in script[:3]:
            c.send(**msg)
        c.pump_until("paused")
        c.send(**script[3])
        c.pump_until("paused")
        c.send(**script[4])
        c.pump_until("done")
        return c.events

    assert one_session() == one_session()


def test_malformed_json_yields_error_event_and_session_survives():
    events = []
    session = DebugSession(events.append)
    from stopkit.debugserver import _decode
    assert _decode(session, "{nope") is None
    assert events and events[0]["type"] == "error"
    session.handle_request({"type": "loadProgram", "source": "print(1);"})
    assert events[-1]["type"] == "loaded"


def test_unknown_and_invalid_requests_get_error_events():
    c = Client()
    c.send(type="mystery")
    c.send(type="run")  # nothing loaded
    c.send(type="loadProgram")  # no source
    assert [e["type"] for e in c.events] == ["error", "error", "error"]


def test_compile_error_is_reported():
    c = Client()
    c.send(type="loadProgram", source="let $x = 1;")
    assert c.events[-1]["type"] == "error"
    assert "reserved" in c.events[-1]["message"]


def test_every_request_is_acknowledged():
    c = Client()
    c.send(type="loadProgram", source=SRC)
    c.send(type="setBreakpoints", lines=[2])
    c.send(type="run")
    c.pump_until("paused")
    c.send(type="setBreakpoints", lines=[])
    c.send(type="resume")
    c.pump_until("done")
    kinds = c.types()
    for expected in ("loaded", "breakpoints", "running", "paused", "resumed",
                     "done"):
        assert expected in kinds, kinds


def test_stdio_transport_round_trip():
    requests = "\n".join([
        json.dumps({"type": "loadProgram", "source": SRC}),
        json.dumps({"type": "setBreakpoints", "lines": [4]}),
        json.dumps({"type": "run"}),
        json.dumps({"type": "resume"}),
    ]) + "\n"
    stdin = io.StringIO(requests)
    stdout = io.StringIO()
    serve_stdio(stdin, stdout, max_seconds=10)
    events = [json.loads(line) for line in stdout.getvalue().splitlines()]
    kinds = [e["type"] for e in events]
    assert "loaded" in kinds and "paused" in kinds and "done" in kinds
    paused = next(e for e in events if e["type"] == "paused")
    assert paused["line"] == 4


@pytest.fixture
def ws_server():
    pytest.importorskip("websockets")
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    ready = threading.Event()
    stop = threading.Event()
    t = threading.Thread(target=serve_websocket,
                         args=("127.0.0.1", port, ready, stop), daemon=True)
    t.start()
    assert ready.wait(5)
    yield port
    stop.set()
    t.join(timeout=5)


def test_websocket_transport_session(ws_server):
    from websockets.sync.client import connect

    port = ws_server
    with connect(f"ws://127.0.0.1:{port}") as ws:
        def send(**msg):
            ws.send(json.dumps(msg))

        def recv_until(type_, limit=200):
            got = []
            for _ in range(limit):
                ev = json.loads(ws.recv(timeout=10))
                got.append(ev)
                if ev["type"] == type_:
                    return ev, got
            raise AssertionError(f"no {type_} in {got}")

        send(type="loadProgram", source=SRC)
        recv_until("loaded")
        send(type="setBreakpoints", lines=[3])
        recv_until("breakpoints")
        send(type="run")
        ev, _ = recv_until("paused")
        assert ev["line"] == 3
        send(type="resume")
        ev, got = recv_until("done")
        assert any(e["type"] == "output" and e["value"] == "3" for e in got)


def test_websocket_survives_disconnect_and_accepts_new_client(ws_server):
    from websockets.sync.client import connect

    port = ws_server
    with connect(f"ws://127.0.0.1:{port}") as ws:
        ws.send(json.dumps({"type": "loadProgram", "source": LOOP,
                            "options": {"timer": "exact",
                                        "yield_interval_ms": 5.0}}))
        json.loads(ws.recv(timeout=10))
        ws.send(json.dumps({"type": "run"}))
        json.loads(ws.recv(timeout=10))
    # the first client dropped mid-run; a new one gets a fresh session
    deadline = time.monotonic() + 10
    while True:
        try:
            with connect(f"ws://127.0.0.1:{port}") as ws:
                ws.send(json.dumps({"type": "loadProgram", "source": SRC}))
                ev = json.loads(ws.recv(timeout=10))
                if ev["type"] == "loaded":
                    break
        except Exception:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)

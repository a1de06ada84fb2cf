import { describe, expect, it } from "vitest";

import { SessionController, SocketLike } from "../src/controller.js";
import { Event } from "../src/protocol.js";
import { allowed, initialView, reduce, replay } from "../src/session.js";

const run = (events: Event[]) => replay(events);

describe("view reduction", () => {
  it("follows a load/run/pause/done lifecycle", () => {
    let v = run([{ type: "loaded" }]);
    expect(v.execution.state).toBe("loaded");
    v = reduce(v, { type: "running" });
    expect(v.execution.state).toBe("running");
    v = reduce(v, { type: "paused", line: 3, reason: "breakpoint" });
    expect(v.execution).toEqual({ state: "paused", line: 3, reason: "breakpoint" });
    expect(v.currentLine).toBe(3);
    v = reduce(v, { type: "resumed" });
    expect(v.currentLine).toBeNull();
    v = reduce(v, { type: "done", result: 7 });
    expect(v.execution).toEqual({ state: "done", result: 7 });
  });

  it("keeps at most one highlighted line", () => {
    let v = run([
      { type: "loaded" },
      { type: "running" },
      { type: "paused", line: 2, reason: "step" },
      { type: "paused", line: 5, reason: "step" },
    ]);
    expect(v.currentLine).toBe(5);
  });

  it("accumulates output and resets it on load", () => {
    let v = run([
      { type: "loaded" },
      { type: "output", value: "1" },
      { type: "output", value: "2" },
    ]);
    expect(v.output).toEqual(["1", "2"]);
    v = reduce(v, { type: "loaded" });
    expect(v.output).toEqual([]);
  });

  it("is a pure function of the event stream (replay)", () => {
    const events: Event[] = [
      { type: "loaded" },
      { type: "breakpoints", lines: [3] },
      { type: "running" },
      { type: "output", value: "x" },
      { type: "paused", line: 3, reason: "breakpoint" },
      { type: "resumed" },
      { type: "done", result: null },
    ];
    expect(run(events)).toEqual(run(events));
    expect(run(events)).toEqual(events.reduce(reduce, run([])));
  });

  it("mirrors only acknowledged breakpoints as solid markers", () => {
    const v = run([{ type: "loaded" }, { type: "breakpoints", lines: [2, 4] }]);
    expect(v.breakpoints).toEqual([2, 4]);
    expect(v.pendingBreakpoints).toEqual([]);
  });
});

describe("allowed actions", () => {
  it("disables actions outside their states", () => {
    const idle = run([]);
    expect(allowed({ ...idle })).toMatchObject({ run: false, pause: false });
    const loaded = run([{ type: "loaded" }]);
    expect(allowed(loaded)).toMatchObject({ run: true, pause: false, step: false });
    const running = run([{ type: "loaded" }, { type: "running" }]);
    expect(allowed(running)).toMatchObject({ run: false, pause: true });
    const paused = run([
      { type: "loaded" },
      { type: "running" },
      { type: "paused", line: 1, reason: "pause" },
    ]);
    expect(allowed(paused)).toMatchObject({ resume: true, step: true });
  });

  it("never starts disconnected-state actions", () => {
    expect(allowed(initialView())).toMatchObject({
      load: false,
      run: false,
      toggleBreakpoint: false,
    });
  });
});

class FakeSocket implements SocketLike {
  sent: string[] = [];
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((err: unknown) => void) | null = null;
  send(data: string) {
    this.sent.push(data);
  }
  close() {
    this.onclose?.();
  }
  reply(ev: Event) {
    this.onmessage?.({ data: JSON.stringify(ev) });
  }
}

describe("controller", () => {
  async function connected() {
    const sock = new FakeSocket();
    const controller = new SessionController(() => sock);
    const p = controller.connect("ws://test");
    sock.onopen!();
    await p;
    return { sock, controller };
  }

  it("renders optimistic breakpoints hollow until acknowledged", async () => {
    const { sock, controller } = await connected();
    sock.reply({ type: "loaded" });
    controller.toggleBreakpoint(3);
    expect(controller.view.pendingBreakpoints).toEqual([3]);
    expect(controller.view.breakpoints).toEqual([]);
    expect(JSON.parse(sock.sent.at(-1)!)).toEqual({
      type: "setBreakpoints",
      lines: [3],
    });
    sock.reply({ type: "breakpoints", lines: [3] });
    expect(controller.view.pendingBreakpoints).toEqual([]);
    expect(controller.view.breakpoints).toEqual([3]);
  });

  it("never sends disallowed actions", async () => {
    const { sock, controller } = await connected();
    const before = sock.sent.length;
    controller.runProgram(); // nothing loaded yet
    controller.resumeProgram();
    controller.stepOnce();
    expect(sock.sent.length).toBe(before);
  });

  it("sends a status request on connect for resynchronization", async () => {
    const { sock } = await connected();
    expect(JSON.parse(sock.sent[0]!)).toEqual({ type: "status" });
  });

  it("shows a banner and disables everything on drop", async () => {
    const { sock, controller } = await connected();
    sock.close();
    expect(controller.view.execution.state).toBe("disconnected");
    expect(controller.view.banner).toContain("retry");
  });
});

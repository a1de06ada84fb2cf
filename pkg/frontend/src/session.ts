// Session state: a pure reduction of the server's event stream, plus the
// connection status. Replaying the same events always rebuilds the same
// view, which is what the replay tests pin down.

import { Event, PauseReason } from "./protocol.js";

export type Execution =
  | { state: "disconnected" }
  | { state: "idle" }
  | { state: "loaded" }
  | { state: "running" }
  | { state: "paused"; line: number | null; reason: PauseReason }
  | { state: "done"; result: unknown }
  | { state: "error"; message: string };

export interface SessionView {
  execution: Execution;
  /** server-acknowledged breakpoints — these render solid */
  breakpoints: number[];
  /** clicked but not yet acknowledged — these render hollow */
  pendingBreakpoints: number[];
  /** at most one highlighted line: the paused line */
  currentLine: number | null;
  output: string[];
  banner: string | null;
}

export function initialView(): SessionView {
  return {
    execution: { state: "disconnected" },
    breakpoints: [],
    pendingBreakpoints: [],
    currentLine: null,
    output: [],
    banner: null,
  };
}

export function reduce(view: SessionView, ev: Event): SessionView {
  switch (ev.type) {
    case "loaded":
      return {
        ...view,
        execution: { state: "loaded" },
        currentLine: null,
        output: [],
        banner: null,
      };
    case "running":
    case "resumed":
      return { ...view, execution: { state: "running" }, currentLine: null };
    case "breakpoints":
      return { ...view, breakpoints: ev.lines.slice(), pendingBreakpoints: [] };
    case "paused":
      return {
        ...view,
        execution: { state: "paused", line: ev.line, reason: ev.reason },
        currentLine: ev.line,
      };
    case "output":
      return { ...view, output: [...view.output, String(ev.value)] };
    case "done":
      return {
        ...view,
        execution: { state: "done", result: ev.result },
        currentLine: null,
      };
    case "error":
      return {
        ...view,
        execution: { state: "error", message: ev.message },
        currentLine: null,
      };
    case "status": {
      const state = ev.state;
      const execution: Execution =
        state === "idle" || state === "loaded"
          ? { state: state as "idle" | "loaded" }
          : state === "running"
            ? { state: "running" }
            : state === "done"
              ? { state: "done", result: null }
              : state === "paused"
                ? { state: "paused", line: null, reason: "pause" }
                : { state: "error", message: "unknown server state" };
      return { ...view, execution, breakpoints: ev.breakpoints.slice() };
    }
  }
}

export function replay(events: Event[]): SessionView {
  return events.reduce(reduce, { ...initialView(), execution: { state: "idle" } });
}

/** Which controls are legal in the current state; illegal ones are disabled
 * in the view and never sent. */
export function allowed(view: SessionView) {
  const s = view.execution.state;
  return {
    load: s !== "disconnected",
    run: s === "loaded",
    pause: s === "running",
    resume: s === "paused",
    step: s === "paused",
    toggleBreakpoint: s !== "disconnected",
  };
}

// Wire protocol spoken with `stopkit debug --transport websocket`.
// One JSON document per websocket text frame.

export type Request =
  | { type: "loadProgram"; source: string; options?: Record<string, unknown> }
  | { type: "run" }
  | { type: "pause" }
  | { type: "resume" }
  | { type: "step" }
  | { type: "status" }
  | { type: "setBreakpoints"; lines: number[] };

export type PauseReason = "breakpoint" | "step" | "pause";

export type Event =
  | { type: "loaded" }
  | { type: "running" }
  | { type: "resumed" }
  | { type: "breakpoints"; lines: number[] }
  | { type: "paused"; line: number | null; reason: PauseReason }
  | { type: "output"; value: unknown }
  | { type: "done"; result: unknown }
  | { type: "error"; message: string }
  | { type: "status"; state: string; breakpoints: number[] };

export function parseEvent(raw: string): Event | null {
  try {
    const msg = JSON.parse(raw);
    if (msg && typeof msg.type === "string") return msg as Event;
  } catch {
    /* fall through */
  }
  return null;
}

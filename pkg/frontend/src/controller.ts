// Connection and command surface. The controller owns a socket and the
// current view; every view change comes from reducing a server event (or a
// connection transition) and is pushed to subscribers. User actions only
// send requests — the view updates when the server answers.

import { Event, Request, parseEvent } from "./protocol.js";
import { SessionView, allowed, initialView, reduce } from "./session.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

const defaultFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike;

export class SessionController {
  view: SessionView = initialView();
  events: Event[] = [];
  private socket: SocketLike | null = null;
  private listeners: Array<(v: SessionView) => void> = [];

  constructor(private factory: SocketFactory = defaultFactory) {}

  subscribe(fn: (v: SessionView) => void) {
    this.listeners.push(fn);
    fn(this.view);
  }

  private push(view: SessionView) {
    this.view = view;
    for (const fn of this.listeners) fn(view);
  }

  private apply(ev: Event) {
    this.events.push(ev);
    this.push(reduce(this.view, ev));
  }

  /** Opens the socket; resolves once connected, rejects on failure (the
   * view then shows a banner with the retry affordance). */
  connect(url: string): Promise<void> {
    return new Promise((resolve, reject) => {
      let settled = false;
      let sock: SocketLike;
      try {
        sock = this.factory(url);
      } catch (err) {
        this.push({ ...this.view, banner: `connection failed: ${err}` });
        reject(err);
        return;
      }
      sock.onopen = () => {
        settled = true;
        this.socket = sock;
        this.push({
          ...initialView(),
          execution: { state: "idle" },
          banner: null,
        });
        // after a reconnect the server may hold session state; resync
        this.send({ type: "status" });
        resolve();
      };
      sock.onmessage = (msg) => {
        const ev = parseEvent(String(msg.data));
        if (ev) this.apply(ev);
      };
      sock.onclose = () => {
        this.socket = null;
        this.push({
          ...this.view,
          execution: { state: "disconnected" },
          banner: "connection lost — retry to reconnect",
        });
        if (!settled) {
          settled = true;
          reject(new Error("connection failed"));
        }
      };
      sock.onerror = () => {
        if (!settled && sock.onclose) sock.onclose();
      };
    });
  }

  disconnect() {
    this.socket?.close();
  }

  send(req: Request) {
    if (!this.socket) return;
    this.socket.send(JSON.stringify(req));
  }

  // ------------------------------------------------------------- actions

  loadProgram(source: string, options?: Record<string, unknown>) {
    if (!allowed(this.view).load) return;
    this.send({ type: "loadProgram", source, options });
  }

  runProgram() {
    if (!allowed(this.view).run) return;
    this.send({ type: "run" });
  }

  pauseProgram() {
    if (!allowed(this.view).pause) return;
    this.send({ type: "pause" });
  }

  resumeProgram() {
    if (!allowed(this.view).resume) return;
    this.send({ type: "resume" });
  }

  stepOnce() {
    if (!allowed(this.view).step) return;
    this.send({ type: "step" });
  }

  /** Optimistic toggle: the click renders hollow until the server's
   * breakpoints event confirms the set. */
  toggleBreakpoint(line: number) {
    if (!allowed(this.view).toggleBreakpoint) return;
    const current = new Set([
      ...this.view.breakpoints,
      ...this.view.pendingBreakpoints,
    ]);
    if (current.has(line)) current.delete(line);
    else current.add(line);
    const lines = [...current].sort((a, b) => a - b);
    this.push({
      ...this.view,
      pendingBreakpoints: lines.filter(
        (l) => !this.view.breakpoints.includes(l),
      ),
    });
    this.send({ type: "setBreakpoints", lines });
  }

  /** Await a matching event (used by tests and scripted flows). */
  waitFor(pred: (ev: Event) => boolean, timeoutMs = 15000): Promise<Event> {
    return new Promise((resolve, reject) => {
      const seen = this.events.length;
      for (let i = 0; i < seen; i++) {
        // only future events count; history stays untouched
      }
      const timer = setTimeout(
        () => reject(new Error("timed out waiting for event")),
        timeoutMs,
      );
      const check = (v: SessionView) => {
        void v;
        for (let i = seen; i < this.events.length; i++) {
          if (pred(this.events[i])) {
            clearTimeout(timer);
            this.listeners = this.listeners.filter((f) => f !== check);
            resolve(this.events[i]);
            return;
          }
        }
      };
      this.listeners.push(check);
    });
  }
}

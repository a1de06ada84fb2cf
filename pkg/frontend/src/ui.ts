// DOM layer: a gutter with clickable breakpoint markers, the current-line
// highlight, transport controls, and the output console. Renders the
// SessionView only; program progress never depends on anything here.

import { SessionController } from "./controller.js";
import { SessionView, allowed } from "./session.js";

export function mount(root: HTMLElement, controller: SessionController,
                      source: string) {
  root.innerHTML = `
    <div class="banner" hidden></div>
    <div class="toolbar">
      <button data-act="load">Load</button>
      <button data-act="run">Run</button>
      <button data-act="pause">Pause</button>
      <button data-act="resume">Resume</button>
      <button data-act="step">Step</button>
      <button data-act="retry">Reconnect</button>
      <span class="status"></span>
    </div>
    <div class="code"></div>
    <div class="console"><h3>Output</h3><pre class="out"></pre></div>
  `;
  const banner = root.querySelector(".banner") as HTMLElement;
  const status = root.querySelector(".status") as HTMLElement;
  const code = root.querySelector(".code") as HTMLElement;
  const out = root.querySelector(".out") as HTMLElement;
  const buttons = new Map<string, HTMLButtonElement>();
  root.querySelectorAll("button").forEach((b) => {
    buttons.set(b.dataset.act!, b as HTMLButtonElement);
  });

  const lines = source.replace(/\n$/, "").split("\n");
  const rows: HTMLElement[] = [];
  const markers: HTMLElement[] = [];
  lines.forEach((text, i) => {
    const line = i + 1;
    const row = document.createElement("div");
    row.className = "row";
    const marker = document.createElement("span");
    marker.className = "gutter";
    marker.title = `toggle breakpoint on line ${line}`;
    marker.addEventListener("click", () => controller.toggleBreakpoint(line));
    const num = document.createElement("span");
    num.className = "lineno";
    num.textContent = String(line);
    const body = document.createElement("span");
    body.className = "src";
    body.textContent = text;
    row.append(marker, num, body);
    code.append(row);
    rows.push(row);
    markers.push(marker);
  });

  buttons.get("load")!.addEventListener("click", () =>
    controller.loadProgram(source));
  buttons.get("run")!.addEventListener("click", () => controller.runProgram());
  buttons.get("pause")!.addEventListener("click", () =>
    controller.pauseProgram());
  buttons.get("resume")!.addEventListener("click", () =>
    controller.resumeProgram());
  buttons.get("step")!.addEventListener("click", () => controller.stepOnce());

  function render(view: SessionView) {
    const can = allowed(view);
    buttons.get("load")!.disabled = !can.load;
    buttons.get("run")!.disabled = !can.run;
    buttons.get("pause")!.disabled = !can.pause;
    buttons.get("resume")!.disabled = !can.resume;
    buttons.get("step")!.disabled = !can.step;
    buttons.get("retry")!.hidden = view.execution.state !== "disconnected";
    banner.hidden = view.banner === null;
    banner.textContent = view.banner ?? "";
    status.textContent = describe(view);
    rows.forEach((row, i) => {
      row.classList.toggle("current", view.currentLine === i + 1);
    });
    markers.forEach((m, i) => {
      const line = i + 1;
      m.classList.toggle("breakpoint", view.breakpoints.includes(line));
      m.classList.toggle("pending", view.pendingBreakpoints.includes(line));
    });
    out.textContent = view.output.join("\n");
  }

  controller.subscribe(render);
  return { render };
}

function describe(view: SessionView): string {
  const e = view.execution;
  switch (e.state) {
    case "paused":
      return `paused at line ${e.line ?? "?"} (${e.reason})`;
    case "done":
      return `done: ${JSON.stringify(e.result)}`;
    case "error":
      return `error: ${e.message}`;
    default:
      return e.state;
  }
}

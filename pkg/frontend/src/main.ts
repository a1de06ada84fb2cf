import { SessionController } from "./controller.js";
import { mount } from "./ui.js";

const DEMO = `let total = 0;
let i = 0;
while (i < 5) {
  total = total + i;
  i = i + 1;
  print(total);
}
print("final " + total);
`;

const params = new URLSearchParams(location.search);
const url = params.get("server") ?? "ws://127.0.0.1:8765";

const controller = new SessionController();
const root = document.getElementById("app")!;
mount(root, controller, DEMO);

function connect() {
  controller.connect(url).catch(() => {
    /* banner already shows the failure; retry stays available */
  });
}

document.querySelector('[data-act="retry"]')!
  .addEventListener("click", connect);
connect();

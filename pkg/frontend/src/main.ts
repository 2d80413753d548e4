// Browser entry point: wires the panels, the action form and the advice
// controls to one Console instance.

import { Client } from "./api.js";
import { Console, debounce } from "./app.js";
import type { Action } from "./types.js";

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function currentAction(): Action | null {
  const line = (byId("line-select") as HTMLSelectElement).value;
  if (!line) return null;
  const close = (byId("line-close") as HTMLInputElement).checked;
  return { changes: [{ kind: "line_status", line, in_service: close }] };
}

export function boot(base = ""): Console {
  const app = new Console(new Client(base), {
    grid: byId("grid"),
    security: byId("security"),
    whatif: byId("whatif"),
    advice: byId("advice"),
    log: byId("log"),
    confirm: byId("confirm"),
  });

  const explore = debounce(() => {
    const action = currentAction();
    if (action) void app.exploreWhatif(action);
  }, 200);

  void app.refresh().then(() => {
    const select = byId("line-select") as HTMLSelectElement;
    select.replaceChildren();
    for (const line of app.grid?.lines ?? []) {
      const opt = document.createElement("option");
      opt.value = line.id;
      opt.textContent = `${line.id} (${line.in_service ? "closed" : "open"})`;
      select.append(opt);
    }
  });

  byId("line-select").addEventListener("change", explore);
  byId("line-close").addEventListener("change", explore);
  byId("advise-run").addEventListener("click", () => {
    const k = Number((byId("advise-k") as HTMLInputElement).value) || 3;
    const budget = Number((byId("advise-budget") as HTMLInputElement).value) || 50;
    void app.runAdvice(k, budget);
  });
  byId("advise-stop").addEventListener("click", () => void app.stopAdvice());
  byId("revert").addEventListener("click", () =>
    app.client.revert().then(() => app.refresh(), () => undefined),
  );
  return app;
}

if (typeof document !== "undefined" && document.getElementById("grid")) {
  boot();
}

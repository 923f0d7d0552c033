/** Page wiring: toolbar, canvas events, session lifecycle. */

import { MorphClient, RegionReport } from "./api.js";
import { Bounds, cellOf, pixelToData, Viewport } from "./coords.js";
import { render } from "./render.js";
import { Store } from "./state.js";
import { classColor } from "./palette.js";

const baseUrl =
  new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8765";

const client = new MorphClient(baseUrl);
const store = new Store(client);

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const reportEl = document.getElementById("report")!;
const toolSel = document.getElementById("tool") as HTMLSelectElement;
const classSel = document.getElementById("class") as HTMLSelectElement;
const stepsInput = document.getElementById("steps") as HTMLInputElement;

function describe(r: RegionReport): string {
  const acc = r.accuracy === null ? "—" : (100 * r.accuracy).toFixed(1) + "%";
  return `region ${r.region}: class ${r.class_label}, ` +
    `${r.count} pts, acc ${acc}${r.empty ? " (empty)" : ""}`;
}

store.subscribe((view) => {
  const s = view.state;
  statusEl.textContent = s
    ? `revision ${view.revision} · accuracy ${(100 * s.accuracy).toFixed(1)}%` +
      (view.busy ? " · working…" : "") +
      (view.lastError ? ` · ${view.lastError}` : "")
    : "no session";
  for (const el of [toolSel, classSel, stepsInput]) {
    (el as HTMLInputElement).disabled = view.busy;
  }
  if (s) {
    render(ctx, s);
    reportEl.innerHTML = s.region_report
      .map(
        (r) =>
          `<li style="color:${classColor(r.class_label)}">${describe(r)}</li>`,
      )
      .join("");
  }
});

canvas.addEventListener("click", async (ev) => {
  const view = store.view;
  if (!view.state || view.busy) return;
  const rect = canvas.getBoundingClientRect();
  const v: Viewport = {
    width: canvas.width,
    height: canvas.height,
    bounds: view.state.bounds as Bounds,
  };
  const { x, y } = pixelToData(v, ev.clientX - rect.left, ev.clientY - rect.top);
  if (view.tool.kind === "add") {
    await store.mutate({
      op: "add",
      x,
      y,
      class_label: view.tool.classLabel,
    });
  } else if (view.tool.kind === "remove") {
    const raster = view.state.region_raster;
    const { i, j } = cellOf(
      view.state.bounds,
      raster[0].length,
      raster.length,
      x,
      y,
    );
    await store.mutate({ op: "remove", region_id: raster[i][j] });
  }
});

toolSel.addEventListener("change", () => {
  const kind = toolSel.value;
  store.setTool(
    kind === "add"
      ? { kind: "add", classLabel: parseInt(classSel.value, 10) }
      : kind === "remove"
        ? { kind: "remove" }
        : { kind: "inspect" },
  );
});
classSel.addEventListener("change", () => {
  if (store.view.tool.kind === "add") {
    store.setTool({ kind: "add", classLabel: parseInt(classSel.value, 10) });
  }
});

document.getElementById("train")!.addEventListener("click", async () => {
  const steps = parseInt(stepsInput.value, 10) || 1000;
  await store.train(steps);
});

document.getElementById("new-session")!.addEventListener("click", async () => {
  const summary = await client.createSession({
    dataset: "clusters5",
    seed: 0,
    regions: 5,
    train_steps: 2000,
  });
  await store.open(summary.session_id);
});

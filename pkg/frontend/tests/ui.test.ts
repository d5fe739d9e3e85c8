// @vitest-environment happy-dom
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ControlServiceClient } from "../src/api.js";
import { SliderApp, createApp } from "../src/ui.js";
import { FakeService } from "./fakeService.js";

let service: FakeService;
let app: SliderApp;

async function mount(options: Record<string, unknown> = {}): Promise<SliderApp> {
  service = new FakeService();
  const root = document.createElement("div");
  document.body.append(root);
  app = createApp(root, new ControlServiceClient("", service.fetch), {
    debounceMs: 300,
    pollIntervalMs: 1,
    pollTimeoutMs: 5000,
    ...options,
  });
  await app.init();
  app.state.prompt = "a portrait of a person and a man";
  app.promptInput.value = app.state.prompt;
  app.state.seed = 99;
  app.seedInput.value = "99";
  return app;
}

afterEach(() => {
  app?.destroy();
  document.body.textContent = "";
});

describe("panel construction", () => {
  it("builds one slider row per registered delta", async () => {
    await mount();
    expect(app.rows).toHaveLength(2);
    expect(app.state.bindings.map((b) => b.deltaName)).toEqual([
      "age@toy-agg16",
      "smile@toy-agg16",
    ]);
    // Subject defaults to the first training noun of each delta.
    expect(app.state.bindings.map((b) => b.subjectWord)).toEqual(["man", "person"]);
  });

  it("pins the seed by default", async () => {
    await mount();
    expect(app.seedPinned.checked).toBe(true);
    expect(app.state.seedPinned).toBe(true);
  });

  it("shows the baseline indicator while every slider is at zero", async () => {
    await mount();
    expect(app.baselineIndicator.classList.contains("visible")).toBe(true);
    app.setScale(0, 1.5, { silent: true });
    expect(app.baselineIndicator.classList.contains("visible")).toBe(false);
    app.setScale(0, 0, { silent: true });
    expect(app.baselineIndicator.classList.contains("visible")).toBe(true);
  });
});

describe("slider interaction", () => {
  it("clamps scales to the slider range and updates the readout", async () => {
    await mount();
    app.setScale(0, 7.3, { silent: true });
    expect(app.state.bindings[0]!.scale).toBe(5);
    expect(app.rows[0]!.value.textContent).toBe("5.0");
    expect(app.rows[0]!.slider.value).toBe("5");
  });

  it("warns inline when an active subject is missing from the prompt", async () => {
    await mount();
    app.state.bindings[0]!.subjectWord = "astronaut";
    app.setScale(0, 2, { silent: true });
    app.promptInput.value = "a quiet street";
    app.promptInput.dispatchEvent(new Event("input"));
    expect(app.rows[0]!.warning.textContent).toContain("astronaut");
    // At scale 0 the binding is inert, so no warning.
    app.setScale(0, 0, { silent: true });
    app.promptInput.dispatchEvent(new Event("input"));
    expect(app.rows[0]!.warning.textContent).toBe("");
  });
});

describe("regeneration", () => {
  it("sends every binding, including zero-scale ones", async () => {
    await mount();
    app.setScale(1, 2.5, { silent: true });
    await app.regenerate();
    expect(service.generateBodies).toHaveLength(1);
    const body = service.generateBodies[0]!;
    expect(body.applications).toHaveLength(2);
    expect(body.applications[0]!.scale).toBe(0);
    expect(body.applications[1]!.scale).toBe(2.5);
    expect(body.seed).toBe(99);
    expect(app.resultImage.src).toContain("/image");
  });

  it("debounces 300ms after the last slider release", async () => {
    vi.useFakeTimers();
    try {
      await mount();
      const row = app.rows[0]!;
      row.slider.value = "1";
      row.slider.dispatchEvent(new Event("change"));
      vi.advanceTimersByTime(200);
      row.slider.value = "2";
      row.slider.dispatchEvent(new Event("change"));
      vi.advanceTimersByTime(299);
      expect(service.generateBodies).toHaveLength(0);
      vi.advanceTimersByTime(1);
      await vi.runOnlyPendingTimersAsync();
      expect(service.generateBodies).toHaveLength(1);
      expect(service.generateBodies[0]!.applications[0]!.scale).toBe(2);
    } finally {
      vi.useRealTimers();
    }
  });

  it("supersedes an in-flight render instead of queueing behind it", async () => {
    await mount();
    service.holdNextJob = true;
    app.setScale(0, 1, { silent: true });
    const first = app.regenerate();
    app.setScale(0, 3, { silent: true });
    const second = app.regenerate();
    service.release();
    await Promise.all([first, second]);
    expect(service.generateBodies).toHaveLength(2);
    // The surviving image comes from the second job, not the first.
    expect(app.resultImage.src).toContain("job-2");
    expect(app.statusLine.textContent).toContain("done");
  });

  it("adopts the server-drawn seed when unpinned", async () => {
    await mount();
    app.seedPinned.checked = false;
    app.seedPinned.dispatchEvent(new Event("change"));
    await app.regenerate();
    expect(service.generateBodies[0]!.seed).toBeNull();
    expect(app.state.seed).toBe(service.serverSeed);
    expect(app.seedInput.value).toBe(String(service.serverSeed));
  });

  it("reports a failed job in the status line", async () => {
    await mount();
    service.failNextGenerate = "subject word not found";
    await app.regenerate();
    expect(app.statusLine.textContent).toContain("subject word not found");
  });

  it("refuses to render an empty prompt without calling the service", async () => {
    await mount();
    app.state.prompt = "";
    await app.regenerate();
    expect(service.generateBodies).toHaveLength(0);
    expect(app.statusLine.textContent).toContain("prompt is empty");
  });
});

describe("sweep grid", () => {
  it("renders a strip with the unmodified cell outlined", async () => {
    await mount();
    await app.runSweep([0]);
    const tiles = app.sweepGrid.querySelectorAll("button.cell");
    expect(tiles).toHaveLength(5);
    const outlined = app.sweepGrid.querySelectorAll("button.cell.unmodified");
    expect(outlined).toHaveLength(1);
    expect(outlined[0]!.getAttribute("data-scales")).toBe("0");
  });

  it("loads a cell's scales into the sliders on click", async () => {
    await mount();
    await app.runSweep([1]);
    const tile = app.sweepGrid.querySelector('button.cell[data-scales="-2"]')!;
    expect(tile).toBeTruthy();
    (tile as HTMLButtonElement).click();
    expect(app.state.bindings[1]!.scale).toBe(-2);
    expect(app.rows[1]!.slider.value).toBe("-2");
    expect(app.rows[1]!.value.textContent).toBe("-2.0");
    // The untouched axis keeps its value.
    expect(app.state.bindings[0]!.scale).toBe(0);
  });

  it("re-renders after a cell click without waiting for the debounce", async () => {
    await mount();
    await app.runSweep([0]);
    const before = service.generateBodies.length;
    const tile = app.sweepGrid.querySelector('button.cell[data-scales="1"]')!;
    await app.applyCell({
      index: Number(tile.getAttribute("data-index")),
      row: 0,
      col: 3,
      scales: [1],
      unmodified: false,
      imageUrl: "",
    });
    expect(service.generateBodies.length).toBe(before + 1);
    expect(service.generateBodies.at(-1)!.applications[0]!.scale).toBe(1);
  });

  it("uses the checked axis boxes, capped at two", async () => {
    await mount();
    app.rows[0]!.axis.checked = true;
    app.rows[1]!.axis.checked = true;
    expect(app.chosenAxes()).toEqual([0, 1]);
    await app.runSweep();
    expect(service.sweepBodies[0]!.axes).toHaveLength(2);
    expect(app.sweepGrid.querySelectorAll("button.cell")).toHaveLength(9);
  });

  it("replaces a tile whose image fails with a placeholder", async () => {
    await mount();
    await app.runSweep([0]);
    const tile = app.sweepGrid.querySelector("button.cell")!;
    tile.querySelector("img")!.dispatchEvent(new Event("error"));
    expect(tile.classList.contains("failed")).toBe(true);
    expect(tile.querySelector("img")).toBeNull();
    expect(tile.querySelector(".placeholder")!.textContent).toBe("unavailable");
  });
});

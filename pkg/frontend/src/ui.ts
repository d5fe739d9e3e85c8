/**
 * Slider console UI.
 *
 * One panel = one prompt, one seed, one slider per registered attribute
 * delta, a result image, and a sweep grid.  No framework: the panel is
 * built with document.createElement and updated in place.
 *
 * Regeneration policy: slider drags update the panel state immediately, but
 * the render job fires only after the control has been quiet for 300 ms
 * (trailing debounce on the release event).  At most one job is in flight
 * per panel; a newer request aborts the older poll and its result is
 * dropped.  Sweep-cell clicks and explicit "render" actions bypass the
 * debounce since they are deliberate, discrete gestures.
 */

import {
  ApiError,
  ControlServiceClient,
  DeltaInfo,
  JobFailedError,
  JobStatus,
} from "./api.js";
import { Debounced, debounce, SupersedingRunner } from "./debounce.js";
import {
  PanelState,
  SCALE_MAX,
  SCALE_MIN,
  applyCellScales,
  clampScale,
  composeGenerateRequest,
  composeSweepRequest,
  defaultPanelState,
  isBaselineState,
  subjectInPrompt,
} from "./state.js";
import { CellPlacement, SweepLayout, layoutSweep } from "./sweep.js";

export interface AppOptions {
  /** Quiet period after the last slider release before regenerating. */
  debounceMs?: number;
  pollIntervalMs?: number;
  pollTimeoutMs?: number;
  document?: Document;
}

interface SliderRow {
  root: HTMLElement;
  subject: HTMLInputElement;
  slider: HTMLInputElement;
  value: HTMLOutputElement;
  delay: HTMLInputElement;
  axis: HTMLInputElement;
  warning: HTMLElement;
}

export class SliderApp {
  readonly state: PanelState = defaultPanelState();
  readonly client: ControlServiceClient;
  readonly root: HTMLElement;

  // Named elements, exposed for tests and for main().
  promptInput!: HTMLInputElement;
  seedInput!: HTMLInputElement;
  seedPinned!: HTMLInputElement;
  stepsInput!: HTMLInputElement;
  baselineIndicator!: HTMLElement;
  statusLine!: HTMLElement;
  resultImage!: HTMLImageElement;
  provenanceBox!: HTMLElement;
  sliderList!: HTMLElement;
  sweepButton!: HTMLButtonElement;
  sweepGrid!: HTMLElement;
  rows: SliderRow[] = [];

  /** Provenance of the last completed render, if any. */
  lastProvenance: Record<string, unknown> | null = null;
  /** Axis binding indexes of the sweep currently shown in the grid. */
  sweepAxisIndexes: number[] = [];
  /** Promise of the most recently started render; await it to settle the panel. */
  lastRender: Promise<void> = Promise.resolve();

  private readonly doc: Document;
  private readonly runner = new SupersedingRunner();
  private readonly scheduleRegenerate: Debounced<[]>;
  private readonly pollIntervalMs: number;
  private readonly pollTimeoutMs: number;

  constructor(root: HTMLElement, client: ControlServiceClient, options: AppOptions = {}) {
    this.root = root;
    this.client = client;
    this.doc = options.document ?? root.ownerDocument;
    this.pollIntervalMs = options.pollIntervalMs ?? 150;
    this.pollTimeoutMs = options.pollTimeoutMs ?? 60_000;
    this.scheduleRegenerate = debounce(() => {
      void this.regenerate();
    }, options.debounceMs ?? 300);
    this.buildSkeleton();
  }

  /** Fetch the delta registry and build one slider row per delta. */
  async init(): Promise<void> {
    const listing = await this.client.listDeltas();
    this.sliderList.textContent = "";
    this.rows = [];
    this.state.bindings = [];
    for (const info of listing.deltas) {
      this.addSliderRow(info);
    }
    this.state.seed = Math.floor(Math.random() * 2 ** 31);
    this.seedInput.value = String(this.state.seed);
    this.updateBaselineIndicator();
    this.setStatus(listing.deltas.length ? "ready" : "no deltas in registry");
  }

  // ------------------------------------------------------------------ DOM

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    attrs: Record<string, string> = {},
    text?: string,
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
    if (text !== undefined) node.textContent = text;
    return node;
  }

  private buildSkeleton(): void {
    this.root.classList.add("slider-app");

    const form = this.el("section", { class: "panel-form" });
    this.promptInput = this.el("input", {
      id: "prompt",
      type: "text",
      placeholder: "a portrait of a person in a park",
    });
    this.promptInput.addEventListener("input", () => {
      this.state.prompt = this.promptInput.value;
      this.refreshSubjectWarnings();
    });
    this.promptInput.addEventListener("change", () => this.scheduleRegenerate());

    this.seedInput = this.el("input", { id: "seed", type: "number", value: "0" });
    this.seedInput.addEventListener("change", () => {
      const v = Number.parseInt(this.seedInput.value, 10);
      if (Number.isFinite(v)) this.state.seed = v;
      this.scheduleRegenerate();
    });

    this.seedPinned = this.el("input", { id: "seed-pinned", type: "checkbox" });
    this.seedPinned.checked = true; // pinned by default: sliders explore one scene
    this.seedPinned.addEventListener("change", () => {
      this.state.seedPinned = this.seedPinned.checked;
    });

    this.stepsInput = this.el("input", { id: "steps", type: "number", value: "50" });
    this.stepsInput.addEventListener("change", () => {
      const v = Number.parseInt(this.stepsInput.value, 10);
      if (Number.isFinite(v) && v >= 1) this.state.steps = v;
      this.scheduleRegenerate();
    });

    const renderButton = this.el("button", { id: "render-button", type: "button" }, "render");
    renderButton.addEventListener("click", () => {
      this.scheduleRegenerate.cancel();
      void this.regenerate();
    });

    form.append(
      labelled(this.doc, "prompt", this.promptInput),
      labelled(this.doc, "seed", this.seedInput),
      labelled(this.doc, "pin seed", this.seedPinned),
      labelled(this.doc, "steps", this.stepsInput),
      renderButton,
    );

    this.sliderList = this.el("section", { id: "sliders" });

    this.baselineIndicator = this.el(
      "div",
      { id: "baseline-indicator", role: "status" },
      "baseline — no edits applied",
    );

    const render = this.el("section", { class: "render-pane" });
    this.resultImage = this.el("img", { id: "result-image", alt: "generated sample" });
    this.resultImage.addEventListener("error", () => {
      if (this.resultImage.src) this.setStatus("image failed to load");
    });
    this.statusLine = this.el("div", { id: "status-line" }, "idle");
    this.provenanceBox = this.el("pre", { id: "provenance" });
    render.append(this.resultImage, this.statusLine, this.provenanceBox);

    const sweep = this.el("section", { id: "sweep-panel" });
    this.sweepButton = this.el("button", { id: "sweep-button", type: "button" }, "sweep");
    this.sweepButton.addEventListener("click", () => {
      void this.runSweep();
    });
    this.sweepGrid = this.el("div", { id: "sweep-grid" });
    sweep.append(this.sweepButton, this.sweepGrid);

    this.root.append(form, this.sliderList, this.baselineIndicator, render, sweep);
  }

  private addSliderRow(info: DeltaInfo): void {
    const index = this.state.bindings.length;
    this.state.bindings.push({
      deltaName: info.key,
      subjectWord: info.training_nouns[0] ?? "person",
      occurrence: 0,
      scale: 0,
      delaySteps: 0,
    });

    const row = this.el("div", { class: "slider-row", "data-delta": info.key });
    const name = this.el("span", { class: "delta-name" }, info.name);

    const subject = this.el("input", { class: "subject", type: "text" });
    subject.value = this.state.bindings[index]!.subjectWord;
    subject.addEventListener("input", () => {
      this.state.bindings[index]!.subjectWord = subject.value;
      this.refreshSubjectWarnings();
    });
    subject.addEventListener("change", () => this.scheduleRegenerate());

    const slider = this.el("input", {
      class: "scale",
      type: "range",
      min: String(SCALE_MIN),
      max: String(SCALE_MAX),
      step: "0.1",
      value: "0",
    });
    const value = this.el("output", { class: "scale-value" }, "0.0");
    // Drags update state and the readout live; the render job waits for the
    // release ("change" fires once per adjustment, "input" per tick).
    slider.addEventListener("input", () => {
      this.setScale(index, Number.parseFloat(slider.value), { silent: true });
    });
    slider.addEventListener("change", () => {
      this.setScale(index, Number.parseFloat(slider.value));
    });

    const delay = this.el("input", { class: "delay", type: "number", value: "0", min: "0" });
    delay.addEventListener("change", () => {
      const v = Number.parseInt(delay.value, 10);
      this.state.bindings[index]!.delaySteps = Number.isFinite(v) && v >= 0 ? v : 0;
      this.scheduleRegenerate();
    });

    const axis = this.el("input", { class: "sweep-axis", type: "checkbox", title: "sweep this slider" });
    const warning = this.el("span", { class: "subject-warning" });

    row.append(
      name,
      labelled(this.doc, "subject", subject),
      slider,
      value,
      labelled(this.doc, "delay", delay),
      labelled(this.doc, "axis", axis),
      warning,
    );
    this.sliderList.append(row);
    this.rows.push({ root: row, subject, slider, value, delay, axis, warning });
  }

  // ---------------------------------------------------------------- state

  /**
   * Set one slider's scale.  Updates the DOM control, the readout, and the
   * baseline indicator; unless silent, also schedules a debounced render.
   */
  setScale(index: number, scale: number, opts: { silent?: boolean } = {}): void {
    const binding = this.state.bindings[index];
    const row = this.rows[index];
    if (!binding || !row) throw new Error(`no slider at index ${index}`);
    binding.scale = clampScale(scale);
    row.slider.value = String(binding.scale);
    row.value.textContent = binding.scale.toFixed(1);
    this.updateBaselineIndicator();
    if (!opts.silent) this.scheduleRegenerate();
  }

  /** Visible exactly when every slider sits at zero. */
  updateBaselineIndicator(): void {
    const baseline = isBaselineState(this.state.bindings);
    this.baselineIndicator.classList.toggle("visible", baseline);
    this.baselineIndicator.setAttribute("aria-hidden", baseline ? "false" : "true");
  }

  private refreshSubjectWarnings(): void {
    for (const [i, row] of this.rows.entries()) {
      const binding = this.state.bindings[i]!;
      const ok =
        binding.scale === 0 || subjectInPrompt(this.state.prompt, binding.subjectWord);
      row.warning.textContent = ok ? "" : `"${binding.subjectWord}" not in prompt`;
      row.root.classList.toggle("invalid-subject", !ok);
    }
  }

  private setStatus(text: string): void {
    this.statusLine.textContent = text;
  }

  // ------------------------------------------------------------- rendering

  /**
   * Compose a request from the panel and render it, superseding any job in
   * flight.  Resolves once the image is updated (or the run was dropped).
   */
  regenerate(): Promise<void> {
    const run = this.doRegenerate();
    this.lastRender = run;
    return run;
  }

  private async doRegenerate(): Promise<void> {
    let request;
    try {
      request = composeGenerateRequest(this.state);
    } catch (err) {
      this.setStatus((err as Error).message);
      return;
    }
    this.setStatus("rendering…");
    try {
      const status = await this.runner.run(async (signal) => {
        const accepted = await this.client.generate(request, signal);
        if (!this.state.seedPinned) {
          // Adopt the server-drawn seed so re-pinning freezes this scene.
          this.state.seed = accepted.seed;
          this.seedInput.value = String(accepted.seed);
        }
        return this.client.pollJob(accepted.job_id, {
          intervalMs: this.pollIntervalMs,
          timeoutMs: this.pollTimeoutMs,
          signal,
        });
      });
      if (status === null) return; // superseded by a newer request
      this.showResult(status);
    } catch (err) {
      this.showError(err);
    }
  }

  private showResult(status: JobStatus): void {
    if (!status.image_url) {
      this.setStatus("job finished without an image");
      return;
    }
    this.resultImage.src = this.client.imageSrc(status.image_url);
    this.lastProvenance = (status.provenance as Record<string, unknown>) ?? null;
    this.provenanceBox.textContent = this.lastProvenance
      ? JSON.stringify(this.lastProvenance, null, 1)
      : "";
    const baseline = isBaselineState(this.state.bindings);
    this.resultImage.classList.toggle("baseline-render", baseline);
    this.setStatus(`done (seed ${status.seed}${baseline ? ", baseline" : ""})`);
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.setStatus(`request rejected: ${err.message}`);
    } else if (err instanceof JobFailedError) {
      this.setStatus(`render failed: ${err.message}`);
    } else {
      this.setStatus(`error: ${(err as Error).message}`);
    }
  }

  // ----------------------------------------------------------------- sweep

  /** Binding indexes to sweep: the checked axis boxes, else the first row. */
  chosenAxes(): number[] {
    const checked = this.rows
      .map((row, i) => (row.axis.checked ? i : -1))
      .filter((i) => i >= 0);
    if (checked.length > 0) return checked.slice(0, 2);
    return this.rows.length > 0 ? [0] : [];
  }

  async runSweep(axisIndexes?: number[]): Promise<void> {
    const axes = axisIndexes ?? this.chosenAxes();
    if (axes.length === 0) {
      this.setStatus("no slider to sweep");
      return;
    }
    let request;
    try {
      request = composeSweepRequest(this.state, axes);
    } catch (err) {
      this.setStatus((err as Error).message);
      return;
    }
    this.setStatus("sweeping…");
    try {
      const status = await this.runner.run(async (signal) => {
        const accepted = await this.client.sweep(request, signal);
        return this.client.pollJob(accepted.job_id, {
          intervalMs: this.pollIntervalMs,
          timeoutMs: this.pollTimeoutMs,
          signal,
        });
      });
      if (status === null) return;
      if (!status.cells || status.cells.length === 0) {
        this.setStatus("sweep finished without cells");
        return;
      }
      this.sweepAxisIndexes = axes;
      this.renderSweepGrid(layoutSweep(status.cells));
      this.setStatus(`sweep done (${status.cells.length} cells, seed ${status.seed})`);
    } catch (err) {
      if (err instanceof JobFailedError) {
        this.renderFailedSweep(err.message);
      }
      this.showError(err);
    }
  }

  /** Rebuild the grid: one tile per cell, the unmodified cell outlined. */
  renderSweepGrid(layout: SweepLayout): void {
    this.sweepGrid.textContent = "";
    this.sweepGrid.style.setProperty("--sweep-cols", String(layout.cols));
    for (const cell of layout.cells) {
      const tile = this.el("button", {
        class: "cell" + (cell.unmodified ? " unmodified" : ""),
        type: "button",
        "data-index": String(cell.index),
        "data-scales": cell.scales.join(","),
        title: `scales ${cell.scales.join(", ")}`,
      });
      const img = this.el("img", { alt: `cell ${cell.scales.join(", ")}` });
      img.src = this.client.imageSrc(cell.imageUrl);
      // A tile whose image cannot be fetched degrades to a placeholder
      // rather than a broken-image icon; the click still works.
      img.addEventListener("error", () => {
        tile.classList.add("failed");
        img.remove();
        tile.append(this.el("span", { class: "placeholder" }, "unavailable"));
      });
      const caption = this.el("span", { class: "cell-scales" }, cell.scales.join(", "));
      tile.append(img, caption);
      tile.addEventListener("click", () => this.applyCell(cell));
      this.sweepGrid.append(tile);
    }
  }

  private renderFailedSweep(message: string): void {
    this.sweepGrid.textContent = "";
    this.sweepGrid.append(this.el("div", { class: "cell failed placeholder" }, message));
  }

  /**
   * Load a sweep cell's scales into the sliders and re-render at exactly
   * that point.  The click is a deliberate gesture, so no debounce.
   */
  applyCell(cell: CellPlacement): Promise<void> {
    this.state.bindings = applyCellScales(this.state.bindings, this.sweepAxisIndexes, cell.scales);
    for (const bindingIdx of this.sweepAxisIndexes) {
      const row = this.rows[bindingIdx];
      const binding = this.state.bindings[bindingIdx];
      if (!row || !binding) continue;
      row.slider.value = String(binding.scale);
      row.value.textContent = binding.scale.toFixed(1);
    }
    this.updateBaselineIndicator();
    this.scheduleRegenerate.cancel();
    return this.regenerate();
  }

  destroy(): void {
    this.scheduleRegenerate.cancel();
    this.runner.cancel();
    this.root.textContent = "";
  }
}

function labelled(doc: Document, text: string, control: HTMLElement): HTMLLabelElement {
  const label = doc.createElement("label");
  label.append(doc.createTextNode(text + " "), control);
  return label;
}

export function createApp(
  root: HTMLElement,
  client: ControlServiceClient,
  options: AppOptions = {},
): SliderApp {
  return new SliderApp(root, client, options);
}

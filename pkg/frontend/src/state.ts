/**
 * Panel state: the sliders, the prompt, and the pinned seed.
 *
 * A SliderBinding ties one attribute delta to one subject word in the prompt.
 * The request composed from the panel always lists every binding — sliders
 * sitting at zero are sent with scale 0, not dropped, so the server-side
 * edit set is an explicit function of the panel and a replay of the same
 * (prompt, seed, bindings) triple hits the identical code path.
 */

import type { ApplicationSpec, GenerateRequest, SweepAxisSpec, SweepRequest } from "./api.js";

export const SCALE_MIN = -5;
export const SCALE_MAX = 5;

/** Default sweep scales for one axis (five cells, centred on baseline). */
export const SWEEP_SCALES_1D = [-2, -1, 0, 1, 2];
/** Per-axis scales for a two-axis sweep (3x3 grid, well under the cell cap). */
export const SWEEP_SCALES_2D = [-2, 0, 2];

export interface SliderBinding {
  deltaName: string;
  subjectWord: string;
  occurrence: number | "all";
  scale: number;
  delaySteps: number;
}

export interface PanelState {
  prompt: string;
  seed: number;
  /** When true (the default) the seed is reused across regenerations. */
  seedPinned: boolean;
  steps: number;
  guidanceWeight: number;
  bindings: SliderBinding[];
}

export function defaultPanelState(): PanelState {
  return {
    prompt: "",
    seed: 0,
    seedPinned: true,
    steps: 50,
    guidanceWeight: 7.5,
    bindings: [],
  };
}

export function clampScale(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(SCALE_MAX, Math.max(SCALE_MIN, value));
}

/** True when every slider sits at zero, i.e. the panel renders the baseline. */
export function isBaselineState(bindings: SliderBinding[]): boolean {
  return bindings.every((b) => b.scale === 0);
}

/**
 * Client-side mirror of the server's whole-word subject match, for inline
 * validation before a request is sent.  The server remains authoritative.
 */
export function subjectInPrompt(prompt: string, word: string): boolean {
  if (!word) return false;
  const escaped = word.replace(/[.*+?^${}()|[\]\\]/g, "\\$&");
  const re = new RegExp(`(?<![0-9A-Za-z_'])${escaped}(?![0-9A-Za-z_'])`, "i");
  return re.test(prompt);
}

function toApplication(b: SliderBinding): ApplicationSpec {
  return {
    delta: b.deltaName,
    subject_word: b.subjectWord,
    scale: b.scale,
    occurrence: b.occurrence,
    delay_steps: b.delaySteps,
  };
}

/**
 * Build the generate request for the current panel.  Every binding is
 * included, zero scales and all; the seed field is the pinned seed, or null
 * to let the server draw a fresh one.
 */
export function composeGenerateRequest(state: PanelState): GenerateRequest {
  if (!state.prompt.trim()) throw new Error("prompt is empty");
  return {
    prompt: state.prompt,
    seed: state.seedPinned ? state.seed : null,
    steps: state.steps,
    guidance_weight: state.guidanceWeight,
    applications: state.bindings.map(toApplication),
  };
}

/**
 * Build a sweep request over the bindings at the given indexes (one or two
 * axes).  Axis order follows the index order, so the first index varies
 * slowest in the returned grid.
 */
export function composeSweepRequest(state: PanelState, axisIndexes: number[]): SweepRequest {
  if (!state.prompt.trim()) throw new Error("prompt is empty");
  if (axisIndexes.length < 1 || axisIndexes.length > 2) {
    throw new Error(`sweep needs 1 or 2 axes, got ${axisIndexes.length}`);
  }
  const scales = axisIndexes.length === 1 ? SWEEP_SCALES_1D : SWEEP_SCALES_2D;
  const axes: SweepAxisSpec[] = axisIndexes.map((i) => {
    const b = state.bindings[i];
    if (!b) throw new Error(`no binding at index ${i}`);
    return {
      delta: b.deltaName,
      subject_word: b.subjectWord,
      scales: [...scales],
      occurrence: b.occurrence,
      delay_steps: b.delaySteps,
    };
  });
  return {
    prompt: state.prompt,
    seed: state.seedPinned ? state.seed : null,
    steps: state.steps,
    guidance_weight: state.guidanceWeight,
    axes,
  };
}

/**
 * Load a sweep cell's scales back into the panel: binding axisIndexes[i]
 * takes scales[i], everything else keeps its current value.  Returns a new
 * bindings array; the input is not mutated.
 */
export function applyCellScales(
  bindings: SliderBinding[],
  axisIndexes: number[],
  scales: number[],
): SliderBinding[] {
  if (axisIndexes.length !== scales.length) {
    throw new Error(`${axisIndexes.length} axes but ${scales.length} scales`);
  }
  const next = bindings.map((b) => ({ ...b }));
  axisIndexes.forEach((bindingIdx, axis) => {
    const target = next[bindingIdx];
    if (!target) throw new Error(`no binding at index ${bindingIdx}`);
    target.scale = clampScale(scales[axis] ?? 0);
  });
  return next;
}

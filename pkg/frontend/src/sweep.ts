/**
 * Grid model for sweep results.
 *
 * The service returns sweep cells as a flat list in row-major order with the
 * first axis varying slowest.  This module recovers the (rows, cols) shape
 * from the cell scales and places each cell, so the view can render a strip
 * for one axis and a grid for two.
 */

import type { CellInfo } from "./api.js";

export interface CellPlacement {
  index: number;
  row: number;
  col: number;
  scales: number[];
  /** True for the all-zero cell: rendered with the baseline outline. */
  unmodified: boolean;
  imageUrl: string;
}

export interface SweepLayout {
  rows: number;
  cols: number;
  axes: number;
  cells: CellPlacement[];
}

export function layoutSweep(cells: CellInfo[]): SweepLayout {
  if (cells.length === 0) throw new Error("sweep returned no cells");
  const first = cells[0]!;
  const axes = first.scales.length;
  if (axes < 1 || axes > 2) throw new Error(`unsupported axis count ${axes}`);

  let cols: number;
  if (axes === 1) {
    cols = cells.length;
  } else {
    // Axis 0 is the slow axis: the first row is the prefix of cells that
    // still share its first-axis scale.
    cols = 0;
    while (cols < cells.length && cells[cols]!.scales[0] === first.scales[0]) cols += 1;
  }
  if (cells.length % cols !== 0) {
    throw new Error(`ragged sweep: ${cells.length} cells, ${cols} columns`);
  }
  const rows = cells.length / cols;

  const placed: CellPlacement[] = cells.map((cell, i) => ({
    index: cell.index,
    row: Math.floor(i / cols),
    col: i % cols,
    scales: [...cell.scales],
    unmodified: cell.unmodified,
    imageUrl: cell.image_url,
  }));
  return { rows, cols, axes, cells: placed };
}

export function cellAt(layout: SweepLayout, row: number, col: number): CellPlacement {
  if (row < 0 || row >= layout.rows || col < 0 || col >= layout.cols) {
    throw new Error(`cell (${row}, ${col}) outside ${layout.rows}x${layout.cols} grid`);
  }
  return layout.cells[row * layout.cols + col]!;
}

/** The baseline cell (all scales zero), or null if the sweep skipped zero. */
export function unmodifiedCell(layout: SweepLayout): CellPlacement | null {
  return layout.cells.find((c) => c.unmodified) ?? null;
}

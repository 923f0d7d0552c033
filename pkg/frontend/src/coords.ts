/** Exact mappings between data space, raster cells and canvas pixels.
 *
 * Raster cells are centered on a linspace over the bounds: cell j of nx
 * sits at xmin + j*(xmax-xmin)/(nx-1). Canvas y points down; data y up.
 */

export type Bounds = [[number, number], [number, number]];

export interface Viewport {
  width: number;
  height: number;
  bounds: Bounds;
}

export function dataToPixel(
  v: Viewport,
  x: number,
  y: number,
): { px: number; py: number } {
  const [[xmin, xmax], [ymin, ymax]] = v.bounds;
  const px = ((x - xmin) / (xmax - xmin)) * (v.width - 1);
  const py = (1 - (y - ymin) / (ymax - ymin)) * (v.height - 1);
  return { px, py };
}

export function pixelToData(
  v: Viewport,
  px: number,
  py: number,
): { x: number; y: number } {
  const [[xmin, xmax], [ymin, ymax]] = v.bounds;
  const x = xmin + (px / (v.width - 1)) * (xmax - xmin);
  const y = ymin + (1 - py / (v.height - 1)) * (ymax - ymin);
  return { x, y };
}

/** Nearest raster cell (row i, column j) for a data-space point. */
export function cellOf(
  bounds: Bounds,
  nx: number,
  ny: number,
  x: number,
  y: number,
): { i: number; j: number } {
  const [[xmin, xmax], [ymin, ymax]] = bounds;
  const j = Math.round(((x - xmin) / (xmax - xmin)) * (nx - 1));
  const i = Math.round(((y - ymin) / (ymax - ymin)) * (ny - 1));
  return {
    i: Math.min(Math.max(i, 0), ny - 1),
    j: Math.min(Math.max(j, 0), nx - 1),
  };
}

/** Data-space center of raster cell (i, j). */
export function cellCenter(
  bounds: Bounds,
  nx: number,
  ny: number,
  i: number,
  j: number,
): { x: number; y: number } {
  const [[xmin, xmax], [ymin, ymax]] = bounds;
  return {
    x: xmin + (j / (nx - 1)) * (xmax - xmin),
    y: ymin + (i / (ny - 1)) * (ymax - ymin),
  };
}

/** Half the data-space extent of one raster cell, per axis. */
export function halfCell(
  bounds: Bounds,
  nx: number,
  ny: number,
): { hx: number; hy: number } {
  const [[xmin, xmax], [ymin, ymax]] = bounds;
  return {
    hx: (xmax - xmin) / (nx - 1) / 2,
    hy: (ymax - ymin) / (ny - 1) / 2,
  };
}

/** Canvas rendering: class raster fill, region boundary overlay, data
 * points, center markers. Pure draw calls; all geometry comes from
 * coords.ts so tests can cover the mapping without a canvas.
 */

import { SessionState } from "./api.js";
import { boundaryMask } from "./boundaries.js";
import { dataToPixel, Viewport } from "./coords.js";
import { classColor, classFill } from "./palette.js";

export function viewportFor(
  canvas: { width: number; height: number },
  state: SessionState,
): Viewport {
  return { width: canvas.width, height: canvas.height, bounds: state.bounds };
}

export function render(
  ctx: CanvasRenderingContext2D,
  state: SessionState,
): void {
  const v = viewportFor(ctx.canvas, state);
  ctx.clearRect(0, 0, v.width, v.height);

  const ny = state.class_raster.length;
  const nx = ny ? state.class_raster[0].length : 0;
  const cw = v.width / nx;
  const ch = v.height / ny;
  for (let i = 0; i < ny; i++) {
    for (let j = 0; j < nx; j++) {
      ctx.fillStyle = classFill(state.class_raster[i][j]);
      // raster row 0 is ymin; canvas row 0 is the top
      ctx.fillRect(j * cw, v.height - (i + 1) * ch, cw + 0.5, ch + 0.5);
    }
  }

  const edges = boundaryMask(state.region_raster);
  ctx.fillStyle = "rgba(40,40,40,0.8)";
  for (let i = 0; i < ny; i++) {
    for (let j = 0; j < nx; j++) {
      if (edges[i][j]) {
        ctx.fillRect(j * cw, v.height - (i + 1) * ch, cw, ch);
      }
    }
  }

  for (let k = 0; k < state.points.length; k++) {
    const { px, py } = dataToPixel(v, state.points[k][0], state.points[k][1]);
    ctx.fillStyle = classColor(state.labels[k]);
    ctx.beginPath();
    ctx.arc(px, py, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }

  state.centers.forEach((c, r) => {
    const { px, py } = dataToPixel(v, c[0], c[1]);
    ctx.strokeStyle = "#111";
    ctx.lineWidth = 2;
    ctx.fillStyle = classColor(state.region_classes[r]);
    ctx.beginPath();
    ctx.arc(px, py, 7, 0, 2 * Math.PI);
    ctx.fill();
    ctx.stroke();
  });
}

/** Client-side region boundary extraction from the region raster.
 *
 * A cell is a boundary cell when its region id differs from its right or
 * bottom neighbor (edge detection; enough for a 1px overlay).
 */

export function boundaryMask(raster: number[][]): boolean[][] {
  const ny = raster.length;
  const nx = ny ? raster[0].length : 0;
  const out: boolean[][] = [];
  for (let i = 0; i < ny; i++) {
    const row = new Array<boolean>(nx).fill(false);
    for (let j = 0; j < nx; j++) {
      const v = raster[i][j];
      if (j + 1 < nx && raster[i][j + 1] !== v) row[j] = true;
      if (i + 1 < ny && raster[i + 1][j] !== v) row[j] = true;
    }
    out.push(row);
  }
  return out;
}

/** Count of distinct region ids present in the raster. */
export function distinctRegions(raster: number[][]): number {
  const seen = new Set<number>();
  for (const row of raster) for (const v of row) seen.add(v);
  return seen.size;
}

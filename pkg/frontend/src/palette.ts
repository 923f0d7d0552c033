/** Fixed 10-color class palette (colorblind-safe ordering first). */

export const CLASS_COLORS: readonly string[] = [
  "#4e79a7",
  "#f28e2b",
  "#76b7b2",
  "#e15759",
  "#59a14f",
  "#edc948",
  "#b07aa1",
  "#ff9da7",
  "#9c755f",
  "#bab0ac",
];

export function classColor(label: number): string {
  if (!Number.isInteger(label) || label < 0) {
    throw new RangeError(`bad class label ${label}`);
  }
  return CLASS_COLORS[label % CLASS_COLORS.length];
}

/** Same palette at reduced opacity for filled rasters. */
export function classFill(label: number, alpha = 0.35): string {
  const hex = classColor(label);
  const r = parseInt(hex.slice(1, 3), 16);
  const g = parseInt(hex.slice(3, 5), 16);
  const b = parseInt(hex.slice(5, 7), 16);
  return `rgba(${r},${g},${b},${alpha})`;
}

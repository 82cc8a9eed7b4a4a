/**
 * Mask helpers: hit-testing clicks against the label grid, overlay pixels,
 * and legend entries.  The label grid comes verbatim from the dataset-item
 * payload; nothing is recomputed client-side.
 */

export interface LegendEntry {
  classIndex: number;
  name: string;
  color: string;
  selected: boolean;
}

/** Display palette; index 1..8 are semantic classes (mirrors the server's). */
export const CLASS_COLORS: string[] = [
  "#000000",
  "#6eaae6", // 1 sky
  "#5a5a5f", // 2 road
  "#f0dc3c", // 3 light
  "#c83c3c", // 4 obstacle
  "#aa7850", // 5 building
  "#3c8c46", // 6 tree
  "#ebebeb", // 7 marking
  "#a050c8", // 8 sign
];

export function classColor(classIndex: number): string {
  return CLASS_COLORS[classIndex] ?? "#888888";
}

/**
 * Semantic class under a canvas position, or null when outside the grid.
 * `canvasX/Y` are in display pixels; the grid is scaled uniformly.
 */
export function classAt(
  labels: number[][],
  canvasX: number,
  canvasY: number,
  displayWidth: number,
  displayHeight: number,
): number | null {
  const rows = labels.length;
  const cols = labels[0]?.length ?? 0;
  if (rows === 0 || cols === 0) return null;
  const col = Math.floor((canvasX / displayWidth) * cols);
  const row = Math.floor((canvasY / displayHeight) * rows);
  if (row < 0 || row >= rows || col < 0 || col >= cols) return null;
  return labels[row][col];
}

/** RGBA overlay pixels for the mask: selected regions brighter and opaque. */
export function overlayPixels(
  labels: number[][],
  selected: number[],
  alphaSelected = 200,
  alphaIdle = 90,
): Uint8ClampedArray<ArrayBuffer> {
  const rows = labels.length;
  const cols = labels[0]?.length ?? 0;
  const out = new Uint8ClampedArray(new ArrayBuffer(rows * cols * 4));
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const cls = labels[r][c];
      const hex = classColor(cls);
      const offset = (r * cols + c) * 4;
      out[offset] = parseInt(hex.slice(1, 3), 16);
      out[offset + 1] = parseInt(hex.slice(3, 5), 16);
      out[offset + 2] = parseInt(hex.slice(5, 7), 16);
      out[offset + 3] = selected.includes(cls) ? alphaSelected : alphaIdle;
    }
  }
  return out;
}

/** Legend rows for the classes present in the current mask only. */
export function legendEntries(
  presentClasses: number[],
  classNames: string[],
  selected: number[],
): LegendEntry[] {
  return [...presentClasses]
    .sort((a, b) => a - b)
    .map((classIndex) => ({
      classIndex,
      name: classNames[classIndex - 1] ?? `class ${classIndex}`,
      color: classColor(classIndex),
      selected: selected.includes(classIndex),
    }));
}

import { describe, expect, it } from "vitest";

import { classAt, classColor, legendEntries, overlayPixels } from "../src/mask.js";

const GRID = [
  [1, 1, 2, 2],
  [1, 1, 2, 2],
  [3, 3, 4, 4],
  [3, 3, 4, 4],
];

describe("classAt hit testing", () => {
  it("maps display coordinates onto the label grid", () => {
    // 4x4 grid shown at 100x100: each cell is 25px
    expect(classAt(GRID, 10, 10, 100, 100)).toBe(1);
    expect(classAt(GRID, 80, 10, 100, 100)).toBe(2);
    expect(classAt(GRID, 10, 90, 100, 100)).toBe(3);
    expect(classAt(GRID, 99, 99, 100, 100)).toBe(4);
  });

  it("returns null outside the canvas", () => {
    expect(classAt(GRID, -5, 10, 100, 100)).toBeNull();
    expect(classAt(GRID, 10, 150, 100, 100)).toBeNull();
  });

  it("handles empty grids", () => {
    expect(classAt([], 10, 10, 100, 100)).toBeNull();
  });
});

describe("overlay pixels", () => {
  it("selected classes are rendered more opaque", () => {
    const px = overlayPixels(GRID, [2]);
    const alphaOf = (row: number, col: number) => px[(row * 4 + col) * 4 + 3];
    expect(alphaOf(0, 2)).toBe(200); // class 2 selected
    expect(alphaOf(0, 0)).toBe(90); // class 1 idle
  });

  it("uses the class palette", () => {
    const px = overlayPixels(GRID, []);
    const hex = classColor(1);
    expect(px[0]).toBe(parseInt(hex.slice(1, 3), 16));
    expect(px[1]).toBe(parseInt(hex.slice(3, 5), 16));
    expect(px[2]).toBe(parseInt(hex.slice(5, 7), 16));
  });
});

describe("legend", () => {
  it("lists only present classes, sorted, with selection flags", () => {
    const entries = legendEntries([4, 1, 3], ["sky", "road", "light", "obstacle"], [3]);
    expect(entries.map((e) => e.classIndex)).toEqual([1, 3, 4]);
    expect(entries.map((e) => e.name)).toEqual(["sky", "light", "obstacle"]);
    expect(entries.map((e) => e.selected)).toEqual([false, true, false]);
  });
});

import { describe, expect, it } from "vitest";

import {
  DEFAULT_SESSION,
  SessionState,
  recordJob,
  sessionFromUrlHash,
  sessionToUrlHash,
  setItem,
  toggleRegion,
} from "../src/state.js";

const LIGHT = 3;
const BACKGROUND = 1;
const SIGN = 8;

function sessionWithMask(present: number[]): SessionState {
  return setItem({ ...DEFAULT_SESSION }, 3, present);
}

describe("region toggling", () => {
  it("click on the light region selects it", () => {
    const s = toggleRegion(sessionWithMask([1, 2, 3, 4]), LIGHT);
    expect(s.regions).toEqual([LIGHT]);
  });

  it("second click on the same region deselects it", () => {
    let s = sessionWithMask([1, 2, 3, 4]);
    s = toggleRegion(s, LIGHT);
    s = toggleRegion(s, LIGHT);
    expect(s.regions).toEqual([]);
  });

  it("background then light accumulates both", () => {
    let s = sessionWithMask([1, 2, 3, 4]);
    s = toggleRegion(s, BACKGROUND);
    s = toggleRegion(s, LIGHT);
    expect(s.regions).toEqual([BACKGROUND, LIGHT]);
  });

  it("absent classes are unselectable", () => {
    const s = toggleRegion(sessionWithMask([1, 2, 3]), SIGN);
    expect(s.regions).toEqual([]);
  });

  it("region set is always a subset of the current mask's classes", () => {
    let s = sessionWithMask([1, 2, 3, 4]);
    s = toggleRegion(s, LIGHT);
    s = toggleRegion(s, 4);
    s = setItem(s, 7, [1, 2, 3]); // new mask lacks class 4
    expect(s.regions).toEqual([LIGHT]);
  });
});

describe("session URL round trip", () => {
  it("serializes and restores every field", () => {
    let s = sessionWithMask([1, 2, 3, 4, 6]);
    s = toggleRegion(s, LIGHT);
    s = toggleRegion(s, 6);
    s = { ...s, lambda: 0.1, steps: 50, seed: 9, counterClass: 2 };
    s = recordJob(s, "jobaaa");
    s = recordJob(s, "jobbbb");
    const restored = sessionFromUrlHash(sessionToUrlHash(s));
    expect(restored).toEqual(s);
  });

  it("restoring twice renders the identical hash", () => {
    let s = sessionWithMask([1, 2, 3]);
    s = toggleRegion(s, 2);
    const once = sessionToUrlHash(sessionFromUrlHash(sessionToUrlHash(s)));
    expect(once).toEqual(sessionToUrlHash(s));
  });

  it("URL-provided regions outside the mask are dropped", () => {
    const restored = sessionFromUrlHash("#present=1,2&regions=1,5&dataset=val");
    expect(restored.regions).toEqual([1]);
  });

  it("empty hash yields defaults", () => {
    expect(sessionFromUrlHash("#")).toEqual({ ...DEFAULT_SESSION });
  });

  it("recording the same job twice keeps one entry", () => {
    let s = recordJob({ ...DEFAULT_SESSION }, "j1");
    s = recordJob(s, "j1");
    expect(s.jobIds).toEqual(["j1"]);
  });
});

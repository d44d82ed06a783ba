import { describe, expect, it } from "vitest";

import {
  DEFAULT_K,
  clampK,
  initialState,
  pushHistory,
  stateFromParams,
  stateToParams,
} from "../src/state.js";

describe("url round-trip", () => {
  it("restores query, k, and filter from parameters", () => {
    const state = initialState();
    state.text = "a malignant skin lesion, specifically a melanoma";
    state.k = 12;
    state.filter = "text";
    const restored = stateFromParams(stateToParams(state));
    expect(restored.text).toBe(state.text);
    expect(restored.k).toBe(12);
    expect(restored.filter).toBe("text");
    expect(restored.mode).toBe("text");
  });

  it("round-trips image mode and a seed item", () => {
    const state = initialState();
    state.mode = "image";
    state.seedItemId = "img:dermA-test-0301";
    const restored = stateFromParams(stateToParams(state));
    expect(restored.mode).toBe("image");
    expect(restored.seedItemId).toBe("img:dermA-test-0301");
  });

  it("survives a string round-trip like a real location.search", () => {
    const state = initialState();
    state.text = "red patch & irregular border?";
    state.k = 3;
    const search = `?${stateToParams(state).toString()}`;
    const restored = stateFromParams(new URLSearchParams(search));
    expect(restored.text).toBe(state.text);
    expect(restored.k).toBe(3);
  });

  it("falls back to defaults on garbage parameters", () => {
    const restored = stateFromParams(new URLSearchParams("?k=banana&filter=wat"));
    expect(restored.k).toBe(DEFAULT_K);
    expect(restored.filter).toBeNull();
  });
});

describe("clampK", () => {
  it("stays within [1, index size]", () => {
    expect(clampK(0, 100)).toBe(1);
    expect(clampK(40, 100)).toBe(40);
    expect(clampK(500, 100)).toBe(100);
    expect(clampK(Number.NaN, 100)).toBe(DEFAULT_K);
  });
});

describe("history", () => {
  it("is append-only and non-mutating", () => {
    const a = initialState();
    const b = pushHistory(a, "first", "img:x");
    const c = pushHistory(b, "second", null);
    expect(a.history).toHaveLength(0);
    expect(b.history).toHaveLength(1);
    expect(c.history.map((h) => h.query)).toEqual(["first", "second"]);
  });
});

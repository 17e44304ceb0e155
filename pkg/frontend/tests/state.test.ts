import { describe, expect, it } from "vitest";

import type { QueryResponse } from "../src/api.js";
import {
  applyFailure,
  applyResponse,
  canSubmit,
  initialState,
  withK,
  withQueryText,
} from "../src/state.js";

function fakeResponse(signatures: string[][] = [["a()"], ["b()"]]): QueryResponse {
  return {
    results: signatures.map((sigs, i) => ({
      rank: i + 1,
      class_id: i,
      cluster_id: `cl_${i}`,
      score: 0.5 - i * 0.1,
      tool: "toolbox",
      signatures: sigs,
      description: `desc ${i}`,
      parameters: "",
      returns: "",
    })),
    latency_ms: 2.5,
    model_version: "abc123",
  };
}

describe("submit gating", () => {
  it("blank text cannot submit", () => {
    expect(canSubmit(initialState())).toBe(false);
    expect(canSubmit(withQueryText(initialState(), "   "))).toBe(false);
    expect(canSubmit(withQueryText(initialState(), "list payloads"))).toBe(true);
  });

  it("k is clamped to the 1..10 selector range", () => {
    const state = initialState();
    expect(withK(state, 7).k).toBe(7);
    expect(withK(state, 0).k).toBe(3);
    expect(withK(state, 11).k).toBe(3);
  });
});

describe("response handling", () => {
  it("replaces cards and appends history", () => {
    let state = withQueryText(initialState(), "q1");
    state = applyResponse(state, "q1", fakeResponse());
    expect(state.cards).toHaveLength(2);
    expect(state.history).toEqual([{ query: "q1", topSignature: "a()" }]);

    state = applyResponse(state, "q2", fakeResponse([["c()"]]));
    expect(state.cards).toHaveLength(1);
    expect(state.history).toHaveLength(2);
    expect(state.history[0]).toEqual({ query: "q1", topSignature: "a()" });
  });

  it("history is append-only across failures", () => {
    let state = applyResponse(initialState(), "q1", fakeResponse());
    const before = [...state.history];
    state = applyFailure(state, "service down");
    expect(state.history).toEqual(before);
  });
});

describe("failure handling", () => {
  it("raises the banner but keeps previous cards", () => {
    let state = applyResponse(initialState(), "q1", fakeResponse());
    const cards = state.cards;
    state = applyFailure(state, "service down");
    expect(state.banner).toBe("service down");
    expect(state.cards).toBe(cards);
  });

  it("a later success clears the banner", () => {
    let state = applyFailure(initialState(), "down");
    state = applyResponse(state, "q", fakeResponse());
    expect(state.banner).toBeNull();
  });
});

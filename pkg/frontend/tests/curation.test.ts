import { describe, expect, it } from "vitest";

import { canPublish, initialCuration, mergePayload } from "../src/views/curation.js";
import type { ModelsOverview } from "../src/types.js";

const OVERVIEW: ModelsOverview = {
  cluster_model: {
    k: 4, sse: 0.5, seed: 42, startups: 19,
    sse_curve: { "1": 80, "2": 50, "3": 25, "4": 0.5 },
    assignment_table: "fecha,grupo k-means\n13/01/2020,2\n16/01/2020,1\n",
  },
  references: [{
    version: 1, active: true, included_clusters: [1, 2, 3, 4],
    margins: [0, 0, 0, 0], labels: { "1": "arranque frío" },
    notes: "", created_by: "expert",
  }],
  active_version: 1,
};

describe("initialCuration", () => {
  it("includes every cluster and inherits labels from the latest reference", () => {
    const state = initialCuration(OVERVIEW);
    expect([...state.included].sort()).toEqual([1, 2, 3, 4]);
    expect(state.labels[1]).toBe("arranque frío");
    expect(state.margins).toEqual([0, 0, 0, 0]);
  });
});

describe("mergePayload", () => {
  it("serializes toggles, sliders and labels into the merge body", () => {
    const state = initialCuration(OVERVIEW);
    state.included.delete(3);
    state.margins[2] = 0.05; // widen phase 3
    state.labels[2] = "templado";
    const payload = mergePayload(state);
    expect(payload.include).toEqual([1, 2, 4]);
    expect(payload.margins).toEqual({ phase3: 0.05 });
    expect(payload.labels).toEqual({ "1": "arranque frío", "2": "templado" });
  });

  it("omits zero margins and blank labels", () => {
    const state = initialCuration(OVERVIEW);
    state.labels[2] = "   ";
    const payload = mergePayload(state);
    expect(payload.margins).toEqual({});
    expect(payload.labels).toEqual({ "1": "arranque frío" });
  });
});

describe("canPublish", () => {
  it("requires at least one included cluster", () => {
    const state = initialCuration(OVERVIEW);
    expect(canPublish(state)).toBe(true);
    state.included.clear();
    expect(canPublish(state)).toBe(false);
  });
});

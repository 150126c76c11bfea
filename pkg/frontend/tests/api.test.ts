import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

interface Recorded {
  url: string;
  method: string;
  body: unknown;
}

function stubFetch(routes: Record<string, { status?: number; body: unknown }>) {
  const calls: Recorded[] = [];
  const fetchFn = async (input: string, init?: RequestInit): Promise<Response> => {
    calls.push({
      url: input,
      method: init?.method ?? "GET",
      body: init?.body ? JSON.parse(String(init.body)) : null,
    });
    const hit = routes[input];
    if (!hit) return new Response(JSON.stringify({ error: "not found" }), { status: 404 });
    return new Response(JSON.stringify(hit.body), { status: hit.status ?? 200 });
  };
  return { calls, fetchFn };
}

describe("ApiClient", () => {
  it("fetches alerts with the active filter", async () => {
    const { calls, fetchFn } = stubFetch({
      "/api/alerts?active=true": { body: { alerts: [] } },
    });
    const api = new ApiClient("", fetchFn);
    expect(await api.alerts(true)).toEqual([]);
    expect(calls[0].url).toBe("/api/alerts?active=true");
  });

  it("posts work orders with the documented field names", async () => {
    const wire = {
      id: "wo-1", material: "aluminio", operation: "planeado", tool: "T12",
      cad_code: "PLN-0042", opened_at: 100, closed_at: null, status: "open",
    };
    const { calls, fetchFn } = stubFetch({ "/api/workorders": { body: wire } });
    const api = new ApiClient("", fetchFn);
    const wo = await api.openWorkOrder({
      material: "aluminio", operation: "planeado", tool: "T12",
      cad_code: "PLN-0042",
    });
    expect(calls[0].method).toBe("POST");
    expect(calls[0].body).toEqual({
      material: "aluminio", operation: "planeado", tool: "T12",
      cad_code: "PLN-0042",
    });
    expect(wo.status).toBe("open");
  });

  it("maps conflict responses to ApiError with status", async () => {
    const { fetchFn } = stubFetch({
      "/api/workorders": { status: 409, body: { error: "work order wo-1 is still open" } },
    });
    const api = new ApiClient("", fetchFn);
    await expect(api.openWorkOrder({
      material: "x", operation: "y", tool: "z", cad_code: "p",
    })).rejects.toMatchObject({ status: 409, message: "work order wo-1 is still open" });
  });

  it("maps validation responses to 422", async () => {
    const { fetchFn } = stubFetch({
      "/api/incidents": { status: 422, body: { error: "incident text must be non-empty" } },
    });
    const api = new ApiClient("", fetchFn);
    const err = await api.logIncident({ text: " ", severity: "info" })
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(422);
  });

  it("acknowledges alerts through the documented endpoint", async () => {
    const { calls, fetchFn } = stubFetch({
      "/api/alerts/al-3/ack": { body: { id: "al-3", acknowledged: true,
                                        acknowledged_by: "op-1" } },
    });
    const api = new ApiClient("", fetchFn);
    const alert = await api.acknowledgeAlert("al-3", "op-1");
    expect(calls[0].body).toEqual({ operator: "op-1" });
    expect(alert.acknowledged).toBe(true);
  });

  it("publishes curated references via merge + activate", async () => {
    const { calls, fetchFn } = stubFetch({
      "/api/models/merge": { body: { version: 3 } },
      "/api/models/3/activate": { body: { version: 3 } },
    });
    const api = new ApiClient("", fetchFn);
    const merged = await api.mergeReference({
      include: [1, 2, 4], margins: { phase3: 0.05 }, labels: { "1": "frío" },
    });
    await api.activateModel(merged.version);
    expect(calls[0].body).toEqual({
      include: [1, 2, 4], margins: { phase3: 0.05 }, labels: { "1": "frío" },
    });
    expect(calls[1].url).toBe("/api/models/3/activate");
  });

  it("requests the explorer view with an optional model version", async () => {
    const view = {
      id: "su-1", model_version: 2, channels: ["cur-l1"],
      phases: [[0, 5], [5, 100], [100, 105], [105, 110]],
      trace: [[0.1]], lo: [[0]], hi: [[1]],
      verdict: { startup_id: "su-1", violation_fraction: 0, runs: [],
                 classification: "normal" },
    };
    const { calls, fetchFn } = stubFetch({
      "/api/startups/su-1/view?model=2": { body: view },
      "/api/startups/su-1/view": { body: view },
    });
    const api = new ApiClient("", fetchFn);
    expect((await api.startupView("su-1", 2)).model_version).toBe(2);
    await api.startupView("su-1");
    expect(calls.map((c) => c.url)).toEqual([
      "/api/startups/su-1/view?model=2", "/api/startups/su-1/view",
    ]);
  });

  it("formats range queries with ISO timestamps", async () => {
    const { calls, fetchFn } = stubFetch({
      "/api/channels/cur-l1/range?from=2020-01-13T08%3A09%3A50Z&to=2020-01-13T08%3A09%3A59Z":
        { body: { samples: [{ ts: "2020-01-13T08:09:50Z", value: 0.68 }] } },
    });
    const api = new ApiClient("", fetchFn);
    const samples = await api.channelRange(
      "cur-l1", "2020-01-13T08:09:50Z", "2020-01-13T08:09:59Z");
    expect(samples[0].value).toBe(0.68);
    expect(calls[0].url).toContain("from=2020-01-13T08%3A09%3A50Z");
  });
});

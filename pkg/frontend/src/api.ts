// Thin typed client over the twin API. All HMI mutations go through here so a
// scripted session can reproduce any UI-reachable state.
import type {
  Alert, AssetNode, ChannelLatest, Health, Incident, ModelsOverview,
  SamplePoint, SensorChannel, StartupSummary, StartupView, WorkOrder,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail = (body as { error?: string }).error ?? resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  // -- read side ---------------------------------------------------------

  assets(): Promise<AssetNode[]> {
    return this.request<{ assets: AssetNode[] }>("/api/assets")
      .then((r) => r.assets);
  }

  assetDetail(id: string): Promise<{ asset: AssetNode; children: AssetNode[];
                                     channels: SensorChannel[] }> {
    return this.request(`/api/assets/${id}`);
  }

  channelLatest(id: string): Promise<ChannelLatest> {
    return this.request(`/api/channels/${id}/latest`);
  }

  channelRange(id: string, from: string, to: string): Promise<SamplePoint[]> {
    const q = new URLSearchParams({ from, to });
    return this.request<{ samples: SamplePoint[] }>(
      `/api/channels/${id}/range?${q}`).then((r) => r.samples);
  }

  workOrders(): Promise<WorkOrder[]> {
    return this.request<{ workorders: WorkOrder[] }>("/api/workorders")
      .then((r) => r.workorders);
  }

  incidents(): Promise<Incident[]> {
    return this.request<{ incidents: Incident[] }>("/api/incidents")
      .then((r) => r.incidents);
  }

  alerts(activeOnly = false): Promise<Alert[]> {
    const q = activeOnly ? "?active=true" : "";
    return this.request<{ alerts: Alert[] }>(`/api/alerts${q}`)
      .then((r) => r.alerts);
  }

  startups(): Promise<StartupSummary[]> {
    return this.request<{ startups: StartupSummary[] }>("/api/startups")
      .then((r) => r.startups);
  }

  startupView(id: string, model?: number): Promise<StartupView> {
    const q = model !== undefined ? `?model=${model}` : "";
    return this.request(`/api/startups/${id}/view${q}`);
  }

  models(): Promise<ModelsOverview> {
    return this.request("/api/models");
  }

  health(): Promise<Health> {
    return this.request("/api/health");
  }

  qrView(code: string): Promise<Record<string, unknown>> {
    return this.request(`/api/qr/${code}`);
  }

  // -- mutations -----------------------------------------------------------

  openWorkOrder(input: { material: string; operation: string; tool: string;
                         cad_code: string }): Promise<WorkOrder> {
    return this.post("/api/workorders", input);
  }

  closeWorkOrder(id: string): Promise<WorkOrder> {
    return this.post(`/api/workorders/${id}/close`, {});
  }

  logIncident(input: { text: string; severity: string;
                       channel?: string | null }): Promise<Incident> {
    return this.post("/api/incidents", input);
  }

  acknowledgeAlert(id: string, operator: string): Promise<Alert> {
    return this.post(`/api/alerts/${id}/ack`, { operator });
  }

  overridePhases(id: string, segments: number[][]): Promise<unknown> {
    return this.post(`/api/startups/${id}/phases`, { segments });
  }

  train(input: { seed: number; k?: number | null;
                 date_range?: string[] }): Promise<unknown> {
    return this.post("/api/models/train", input);
  }

  mergeReference(input: { include: number[]; margins: Record<string, number>;
                          labels: Record<string, string>; notes?: string;
                          author?: string }): Promise<{ version: number }> {
    return this.post("/api/models/merge", input);
  }

  activateModel(version: number): Promise<unknown> {
    return this.post(`/api/models/${version}/activate`, {});
  }
}

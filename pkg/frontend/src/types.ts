// Wire formats of the twin API (documented in the repository's docs/api.md).

export interface AssetNode {
  id: string;
  name: string;
  kind: "machine" | "subsystem" | "sensor-point";
  parent: string | null;
  qr_code: string | null;
}

export interface SensorChannel {
  id: string;
  asset: string;
  quantity: string;
  unit: string;
  mode: "static" | "dynamic";
  range: [number, number];
}

export interface SamplePoint {
  ts: string; // ISO-8601 Z, whole seconds
  value: number;
}

export interface ChannelLatest {
  channel: SensorChannel;
  sample: SamplePoint | null;
}

export interface WorkOrder {
  id: string;
  material: string;
  operation: string;
  tool: string;
  cad_code: string;
  opened_at: number;
  closed_at: number | null;
  status: "open" | "closed";
}

export interface Incident {
  id: string;
  timestamp: number;
  text: string;
  severity: "info" | "warning" | "fault";
  channel: string | null;
}

export interface Alert {
  id: string;
  raised_at: number;
  kind: "envelope_violation" | "inactivity" | "ingest_gap";
  severity: "warning" | "critical";
  channel: string | null;
  startup_phase: number | null;
  magnitude: number;
  acknowledged: boolean;
  acknowledged_by: string | null;
}

export interface StartupSummary {
  id: string;
  date: string;
  onset_ts: string;
  coverage: number | null;
  boundaries: { segments: number[][]; source: "auto" | "expert" } | null;
  verdict: string | null;
}

export interface ViolationRun {
  channel: string;
  phase: number;
  start: number;
  length: number;
  max_excess: number;
}

export interface Verdict {
  startup_id: string;
  violation_fraction: number;
  runs: ViolationRun[];
  classification: "normal" | "anomalous";
}

/** Explorer payload: trace, band and verdict are computed server-side. */
export interface StartupView {
  id: string;
  model_version: number;
  channels: string[];
  phases: number[][]; // canonical [start, end) per startup phase
  trace: number[][];  // channels x length, normalized
  lo: number[][];
  hi: number[][];
  verdict: Verdict;
}

export interface ReferenceSummary {
  version: number;
  active: boolean;
  included_clusters: number[];
  margins: number[];
  labels: Record<string, string>;
  notes: string;
  created_by: string;
}

export interface ClusterModelSummary {
  k: number;
  sse: number;
  seed: number;
  startups: number;
  sse_curve: Record<string, number>;
  assignment_table: string;
}

export interface ModelsOverview {
  cluster_model: ClusterModelSummary | null;
  references: ReferenceSummary[];
  active_version: number | null;
}

export interface Health {
  status: "ok" | "degraded";
  ingest: { configured: boolean; degraded: boolean };
  monitor: { degraded: boolean; active_model: number | null };
  subscribers: number;
}

export interface TwinEvent {
  seq: number;
  type: string;
  payload: Record<string, unknown>;
}

export interface InactivityPrompt {
  work_order: string;
  idle_since: number;
  ts: number;
  window_s: number;
}

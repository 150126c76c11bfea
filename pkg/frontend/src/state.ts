// Central view state. The HMI renders only what the API provides; this store
// just folds events and fetch results into a renderable shape.
import type {
  Alert, Incident, InactivityPrompt, SamplePoint, TwinEvent, WorkOrder,
} from "./types.js";

export const STALE_AFTER_MS = 4000;

export interface IndicatorState {
  value: number | null;
  ts: string | null;
}

export interface ViewState {
  connected: boolean;
  lastEventAt: number | null;
  indicators: Record<string, IndicatorState>;
  activeAlerts: Alert[];
  alertHistory: Alert[];
  incidents: Incident[];
  openOrder: WorkOrder | null;
  orderHistory: WorkOrder[];
  inactivityPrompt: InactivityPrompt | null;
  activeModelVersion: number | null;
  lastStartupId: string | null;
}

export function initialState(): ViewState {
  return {
    connected: false,
    lastEventAt: null,
    indicators: {},
    activeAlerts: [],
    alertHistory: [],
    incidents: [],
    openOrder: null,
    orderHistory: [],
    inactivityPrompt: null,
    activeModelVersion: null,
    lastStartupId: null,
  };
}

export type Listener = (state: ViewState) => void;

export class Store {
  state = initialState();
  private listeners: Listener[] = [];

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private notify(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  update(mutate: (s: ViewState) => void): void {
    mutate(this.state);
    this.notify();
  }

  /** True when no event or heartbeat arrived within the stale window. */
  isStale(nowMs: number): boolean {
    if (!this.state.connected) return true;
    if (this.state.lastEventAt === null) return true;
    return nowMs - this.state.lastEventAt > STALE_AFTER_MS;
  }

  markHeartbeat(nowMs: number): void {
    this.update((s) => {
      s.lastEventAt = nowMs;
    });
  }

  setConnected(connected: boolean, nowMs: number): void {
    this.update((s) => {
      s.connected = connected;
      if (connected) s.lastEventAt = nowMs;
    });
  }

  applyEvent(ev: TwinEvent, nowMs: number): void {
    this.update((s) => {
      s.lastEventAt = nowMs;
      applyEvent(s, ev);
    });
  }
}

export function applyEvent(s: ViewState, ev: TwinEvent): void {
  const p = ev.payload as unknown;
  switch (ev.type) {
    case "sample": {
      const sample = p as { channel: string; ts: string; value: number };
      s.indicators[sample.channel] = { value: sample.value, ts: sample.ts };
      break;
    }
    case "alert": {
      const alert = p as unknown as Alert;
      if (!s.activeAlerts.some((a) => a.id === alert.id)) {
        s.activeAlerts = [...s.activeAlerts, alert];
      }
      break;
    }
    case "alert_ack": {
      const alert = p as unknown as Alert;
      s.activeAlerts = s.activeAlerts.filter((a) => a.id !== alert.id);
      if (!s.alertHistory.some((a) => a.id === alert.id)) {
        s.alertHistory = [...s.alertHistory, alert];
      }
      break;
    }
    case "incident": {
      const incident = p as unknown as Incident;
      if (!s.incidents.some((i) => i.id === incident.id)) {
        s.incidents = [...s.incidents, incident];
      }
      break;
    }
    case "workorder_opened":
      s.openOrder = p as unknown as WorkOrder;
      break;
    case "workorder_closed": {
      const order = p as unknown as WorkOrder;
      if (s.openOrder?.id === order.id) s.openOrder = null;
      s.orderHistory = [...s.orderHistory.filter((w) => w.id !== order.id), order];
      // the prompt belongs to the order; closing it dismisses the dialog
      if (s.inactivityPrompt?.work_order === order.id) s.inactivityPrompt = null;
      break;
    }
    case "inactivity":
      if (s.inactivityPrompt === null) {
        s.inactivityPrompt = p as unknown as InactivityPrompt;
      }
      break;
    case "model_activated":
      s.activeModelVersion = (p as { version: number }).version;
      break;
    case "startup_evaluated":
      s.lastStartupId = (p as { startup_id: string }).startup_id;
      break;
    default:
      break; // model_trained, reference_merged etc. refresh via fetch
  }
}

/** Seed the store from REST snapshots (initial load / reconnect reconcile). */
export function hydrate(s: ViewState, snapshot: {
  alerts: Alert[]; incidents: Incident[]; orders: WorkOrder[];
  latest: Record<string, SamplePoint | null>; activeModel: number | null;
}): void {
  s.activeAlerts = snapshot.alerts.filter((a) => !a.acknowledged);
  s.alertHistory = snapshot.alerts.filter((a) => a.acknowledged);
  s.incidents = snapshot.incidents;
  s.openOrder = snapshot.orders.find((w) => w.status === "open") ?? null;
  s.orderHistory = snapshot.orders.filter((w) => w.status === "closed");
  for (const [ch, sample] of Object.entries(snapshot.latest)) {
    s.indicators[ch] = sample === null
      ? { value: null, ts: null }
      : { value: sample.value, ts: sample.ts };
  }
  s.activeModelVersion = snapshot.activeModel;
}

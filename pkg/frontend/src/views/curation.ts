// Model curation: assignment table, cluster labels, inclusion toggles,
// per-phase margin sliders, publish (= merge + activate).
import { ApiClient, ApiError } from "../api.js";
import { t } from "../i18n.js";
import type { ModelsOverview } from "../types.js";

export interface CurationState {
  included: Set<number>;
  margins: [number, number, number, number];
  labels: Record<number, string>;
}

export function initialCuration(overview: ModelsOverview): CurationState {
  const k = overview.cluster_model?.k ?? 0;
  const included = new Set<number>();
  for (let c = 1; c <= k; c += 1) included.add(c);
  const labels: Record<number, string> = {};
  const latest = overview.references[overview.references.length - 1];
  if (latest) {
    for (const [c, text] of Object.entries(latest.labels)) {
      labels[Number(c)] = text;
    }
  }
  return { included, margins: [0, 0, 0, 0], labels };
}

export function mergePayload(state: CurationState): {
  include: number[]; margins: Record<string, number>;
  labels: Record<string, string>;
} {
  const margins: Record<string, number> = {};
  state.margins.forEach((m, i) => {
    if (m !== 0) margins[`phase${i + 1}`] = m;
  });
  const labels: Record<string, string> = {};
  for (const [c, text] of Object.entries(state.labels)) {
    if (text.trim()) labels[c] = text;
  }
  return { include: [...state.included].sort((a, b) => a - b), margins, labels };
}

export function canPublish(state: CurationState): boolean {
  return state.included.size > 0;
}

export class CurationView {
  private state: CurationState = {
    included: new Set(), margins: [0, 0, 0, 0], labels: {},
  };
  private overview: ModelsOverview | null = null;

  constructor(private root: HTMLElement, private api: ApiClient,
              private onPublished: () => void = () => undefined) {}

  async refresh(): Promise<void> {
    this.overview = await this.api.models();
    this.state = initialCuration(this.overview);
    this.render();
  }

  private render(): void {
    const overview = this.overview;
    this.root.innerHTML = "";
    if (!overview || overview.cluster_model === null) {
      this.root.innerHTML = `
        <p class="muted">${t("no_model")}</p>
        <button id="train-btn">${t("train")}</button>
        <div class="form-error"></div>`;
      (this.root.querySelector("#train-btn") as HTMLButtonElement)
        .addEventListener("click", () => void this.train());
      return;
    }
    const cm = overview.cluster_model;
    const table = cm.assignment_table.trim().split("\n").slice(1)
      .map((row) => {
        const [fecha, grupo] = row.split(",");
        return `<tr><td>${fecha}</td><td>${grupo}</td></tr>`;
      }).join("");
    const clusters = [...Array(cm.k).keys()].map((i) => i + 1);
    this.root.innerHTML = `
      <div class="panel-row">
        <div class="form-card">
          <h3>${t("assignments")} (k=${cm.k}, seed ${cm.seed})</h3>
          <table class="assign-table">
            <thead><tr><th>fecha</th><th>grupo k-means</th></tr></thead>
            <tbody>${table}</tbody>
          </table>
          <button id="train-btn" class="secondary">${t("train")}</button>
        </div>
        <div class="form-card">
          <h3>${t("labels")} / ${t("include")}</h3>
          <div id="cluster-rows"></div>
          <h3>${t("margin_phase")}</h3>
          <div id="margin-rows"></div>
          <button id="publish-btn">${t("publish")}</button>
          <div id="versions" class="muted"></div>
          <div class="form-error"></div>
        </div>
      </div>`;
    const clusterRows = this.root.querySelector("#cluster-rows") as HTMLElement;
    for (const c of clusters) {
      const row = document.createElement("div");
      row.className = "cluster-row";
      row.innerHTML = `
        <label><input type="checkbox" data-cluster="${c}" checked> ${c}</label>
        <input type="text" data-label="${c}" placeholder="etiqueta"
               value="${this.state.labels[c] ?? ""}">`;
      const checkbox = row.querySelector("input[type=checkbox]") as HTMLInputElement;
      checkbox.addEventListener("change", () => {
        if (checkbox.checked) this.state.included.add(c);
        else this.state.included.delete(c);
        this.updatePublishButton();
      });
      const labelInput = row.querySelector("input[type=text]") as HTMLInputElement;
      labelInput.addEventListener("input", () => {
        this.state.labels[c] = labelInput.value;
      });
      clusterRows.appendChild(row);
    }
    const marginRows = this.root.querySelector("#margin-rows") as HTMLElement;
    for (let p = 0; p < 4; p += 1) {
      const row = document.createElement("label");
      row.className = "margin-row";
      row.innerHTML = `${t("phase")} ${p + 1}
        <input type="range" min="0" max="0.2" step="0.01" value="0" data-phase="${p}">
        <span data-margin-value="${p}">0.00</span>`;
      const slider = row.querySelector("input") as HTMLInputElement;
      slider.addEventListener("input", () => {
        this.state.margins[p] = Number(slider.value);
        (row.querySelector(`[data-margin-value="${p}"]`) as HTMLElement)
          .textContent = Number(slider.value).toFixed(2);
      });
      marginRows.appendChild(row);
    }
    const versions = this.root.querySelector("#versions") as HTMLElement;
    versions.textContent = overview.references
      .map((r) => `v${r.version}${r.active ? "*" : ""}`).join("  ") || "—";
    (this.root.querySelector("#publish-btn") as HTMLButtonElement)
      .addEventListener("click", () => void this.publish());
    (this.root.querySelector("#train-btn") as HTMLButtonElement)
      .addEventListener("click", () => void this.train());
    this.updatePublishButton();
  }

  private updatePublishButton(): void {
    const button = this.root.querySelector("#publish-btn") as HTMLButtonElement | null;
    if (button) button.disabled = !canPublish(this.state);
  }

  private async train(): Promise<void> {
    try {
      await this.api.train({ seed: 42 });
      await this.refresh();
    } catch (err) {
      this.showError(err);
    }
  }

  private async publish(): Promise<void> {
    if (!canPublish(this.state)) return;
    try {
      const merged = await this.api.mergeReference(mergePayload(this.state));
      await this.api.activateModel(merged.version);
      await this.refresh();
      this.onPublished();
    } catch (err) {
      this.showError(err);
    }
  }

  private showError(err: unknown): void {
    const box = this.root.querySelector(".form-error") as HTMLElement | null;
    if (box) {
      box.textContent = err instanceof ApiError
        ? `${err.status}: ${err.message}` : String(err);
      box.style.display = "block";
    }
  }
}

// Startup explorer: normalized trace over the reference band, per channel,
// with phase shading and server-reported violation highlights.
import { ApiClient, ApiError } from "../api.js";
import { renderChannelChart } from "../chart.js";
import { t } from "../i18n.js";
import type { StartupSummary, StartupView } from "../types.js";

export class ExplorerView {
  private startups: StartupSummary[] = [];
  private versions: number[] = [];
  private selectedStartup: string | null = null;
  private selectedVersion: number | undefined;

  constructor(private root: HTMLElement, private api: ApiClient) {}

  async refresh(): Promise<void> {
    this.startups = await this.api.startups();
    const models = await this.api.models();
    this.versions = models.references.map((r) => r.version);
    if (this.selectedStartup === null && this.startups.length > 0) {
      this.selectedStartup = this.startups[this.startups.length - 1].id;
    }
    this.render();
    await this.loadView();
  }

  private render(): void {
    this.root.innerHTML = `
      <div class="explorer-bar">
        <label>${t("startup")}
          <select id="startup-select"></select>
        </label>
        <label>${t("version")}
          <select id="version-select"><option value="">activo</option></select>
        </label>
        <span id="explorer-verdict" class="verdict"></span>
      </div>
      <div id="explorer-charts"></div>
      <div id="explorer-message" class="muted"></div>`;
    const startupSel = this.root.querySelector("#startup-select") as HTMLSelectElement;
    for (const s of this.startups) {
      const opt = document.createElement("option");
      opt.value = s.id;
      opt.textContent = `${s.date} · ${s.id}` + (s.verdict ? ` (${s.verdict})` : "");
      startupSel.appendChild(opt);
    }
    if (this.selectedStartup) startupSel.value = this.selectedStartup;
    startupSel.addEventListener("change", () => {
      this.selectedStartup = startupSel.value;
      void this.loadView();
    });
    const versionSel = this.root.querySelector("#version-select") as HTMLSelectElement;
    for (const v of this.versions) {
      const opt = document.createElement("option");
      opt.value = String(v);
      opt.textContent = `v${v}`;
      versionSel.appendChild(opt);
    }
    versionSel.addEventListener("change", () => {
      this.selectedVersion = versionSel.value === "" ? undefined
        : Number(versionSel.value);
      void this.loadView();
    });
  }

  private async loadView(): Promise<void> {
    const charts = this.root.querySelector("#explorer-charts") as HTMLElement;
    const message = this.root.querySelector("#explorer-message") as HTMLElement;
    const verdictBadge = this.root.querySelector("#explorer-verdict") as HTMLElement;
    charts.innerHTML = "";
    message.textContent = "";
    verdictBadge.textContent = "";
    if (this.selectedStartup === null) {
      message.textContent = "—";
      return;
    }
    let view: StartupView;
    try {
      view = await this.api.startupView(this.selectedStartup, this.selectedVersion);
    } catch (err) {
      message.textContent = err instanceof ApiError && err.status === 404
        ? t("no_model") : String(err);
      return;
    }
    verdictBadge.textContent =
      `${t(view.verdict.classification)} · v${view.model_version}`;
    verdictBadge.className =
      `verdict ${view.verdict.classification === "anomalous" ? "bad" : "good"}`;
    for (let i = 0; i < view.channels.length; i += 1) {
      charts.appendChild(renderChannelChart(view, i));
    }
  }
}

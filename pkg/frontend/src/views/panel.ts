// Operator panel: live indicator cards, work-order form, inactivity dialog,
// incident log and alert panel.
import { ApiClient, ApiError } from "../api.js";
import { t } from "../i18n.js";
import { Store } from "../state.js";
import type { SensorChannel } from "../types.js";

function div(className: string, text = ""): HTMLDivElement {
  const node = document.createElement("div");
  node.className = className;
  if (text) node.textContent = text;
  return node;
}

function showError(target: HTMLElement, err: unknown): void {
  const msg = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
  const box = target.querySelector(".form-error") as HTMLElement | null;
  if (box) {
    box.textContent = msg;
    box.style.display = "block";
    setTimeout(() => { box.style.display = "none"; }, 6000);
  }
}

export class PanelView {
  private channels: SensorChannel[] = [];

  constructor(private root: HTMLElement, private api: ApiClient,
              private store: Store) {}

  async init(): Promise<void> {
    const assets = await this.api.assets();
    this.channels = [];
    for (const asset of assets) {
      const detail = await this.api.assetDetail(asset.id);
      this.channels.push(...detail.channels);
    }
    this.render();
    this.store.subscribe(() => this.update());
  }

  private render(): void {
    this.root.innerHTML = "";
    this.root.appendChild(this.cards());
    const row = div("panel-row");
    row.appendChild(this.workOrderCard());
    row.appendChild(this.incidentCard());
    this.root.appendChild(row);
    this.root.appendChild(this.alertCard());
    this.update();
  }

  private cards(): HTMLElement {
    const wrap = div("cards");
    for (const ch of this.channels) {
      const card = div("card");
      card.dataset.channel = ch.id;
      card.appendChild(div("card-title", `${labelFor(ch)} · ${ch.id}`));
      card.appendChild(div("card-value", "–"));
      card.appendChild(div("card-unit", ch.unit));
      wrap.appendChild(card);
    }
    return wrap;
  }

  private workOrderCard(): HTMLElement {
    const card = div("form-card");
    card.id = "workorder-card";
    card.innerHTML = `
      <h3>${t("open_order")}</h3>
      <div class="order-state" id="order-state"></div>
      <form id="order-form">
        <label>${t("material")}<input name="material" required></label>
        <label>${t("operation")}<input name="operation" required></label>
        <label>${t("tool")}<input name="tool" required></label>
        <label>${t("plan")}<input name="cad_code" required></label>
        <button type="submit">${t("open_order")}</button>
      </form>
      <button id="close-order" class="secondary">${t("close_order")}</button>
      <div class="form-error"></div>`;
    const form = card.querySelector("#order-form") as HTMLFormElement;
    form.addEventListener("submit", async (ev) => {
      ev.preventDefault();
      const data = new FormData(form);
      try {
        await this.api.openWorkOrder({
          material: String(data.get("material")),
          operation: String(data.get("operation")),
          tool: String(data.get("tool")),
          cad_code: String(data.get("cad_code")),
        });
        form.reset();
      } catch (err) {
        showError(card, err);
      }
    });
    (card.querySelector("#close-order") as HTMLButtonElement)
      .addEventListener("click", async () => {
        const order = this.store.state.openOrder;
        if (order === null) return;
        try {
          await this.api.closeWorkOrder(order.id);
        } catch (err) {
          showError(card, err);
        }
      });
    return card;
  }

  private incidentCard(): HTMLElement {
    const card = div("form-card");
    card.innerHTML = `
      <h3>${t("incidents")}</h3>
      <form id="incident-form">
        <label>${t("incident_text")}<input name="text" required></label>
        <label>${t("severity")}
          <select name="severity">
            <option value="info">info</option>
            <option value="warning">warning</option>
            <option value="fault">fault</option>
          </select>
        </label>
        <button type="submit">${t("log_incident")}</button>
      </form>
      <ul class="incident-list" id="incident-list"></ul>
      <div class="form-error"></div>`;
    const form = card.querySelector("#incident-form") as HTMLFormElement;
    form.addEventListener("submit", async (ev) => {
      ev.preventDefault();
      const data = new FormData(form);
      try {
        await this.api.logIncident({
          text: String(data.get("text")),
          severity: String(data.get("severity")),
        });
        form.reset();
      } catch (err) {
        showError(card, err);
      }
    });
    return card;
  }

  private alertCard(): HTMLElement {
    const card = div("form-card wide");
    card.innerHTML = `
      <h3>${t("alerts")}</h3>
      <table class="alert-table"><tbody id="alert-rows"></tbody></table>
      <h4>${t("alert_history")}</h4>
      <ul id="alert-history" class="incident-list"></ul>
      <div class="form-error"></div>`;
    return card;
  }

  private update(): void {
    const s = this.store.state;
    for (const ch of this.channels) {
      const card = this.root.querySelector(`[data-channel="${ch.id}"]`);
      if (!card) continue;
      const indicator = s.indicators[ch.id];
      (card.querySelector(".card-value") as HTMLElement).textContent =
        indicator?.value != null ? indicator.value.toFixed(2) : "–";
    }
    const orderState = this.root.querySelector("#order-state") as HTMLElement | null;
    if (orderState) {
      orderState.textContent = s.openOrder
        ? `${s.openOrder.id}: ${s.openOrder.material} / ${s.openOrder.operation}`
          + ` / ${s.openOrder.tool} / ${s.openOrder.cad_code}`
        : t("no_open_order");
    }
    const incidents = this.root.querySelector("#incident-list");
    if (incidents) {
      incidents.innerHTML = "";
      for (const inc of [...s.incidents].slice(-8).reverse()) {
        const li = document.createElement("li");
        li.textContent = `[${inc.severity}] ${inc.text}`;
        incidents.appendChild(li);
      }
    }
    const rows = this.root.querySelector("#alert-rows");
    if (rows) {
      rows.innerHTML = "";
      for (const alert of s.activeAlerts) {
        const tr = document.createElement("tr");
        tr.className = `alert-${alert.severity}`;
        tr.innerHTML = `
          <td>${alert.id}</td><td>${alert.kind}</td>
          <td>${alert.channel ?? ""}</td>
          <td>${alert.startup_phase != null ? t("phase") + " " + alert.startup_phase : ""}</td>
          <td>${alert.magnitude.toFixed(3)}</td>
          <td><input placeholder="${t("operator")}" size="8">
              <button>${t("acknowledge")}</button></td>`;
        const button = tr.querySelector("button") as HTMLButtonElement;
        const input = tr.querySelector("input") as HTMLInputElement;
        button.addEventListener("click", async () => {
          try {
            await this.api.acknowledgeAlert(alert.id, input.value || "operador");
          } catch (err) {
            showError(this.root.querySelector(".wide") as HTMLElement, err);
          }
        });
        rows.appendChild(tr);
      }
    }
    const history = this.root.querySelector("#alert-history");
    if (history) {
      history.innerHTML = "";
      for (const alert of [...s.alertHistory].slice(-8).reverse()) {
        const li = document.createElement("li");
        li.textContent =
          `${alert.id} ${alert.kind} → ${alert.acknowledged_by ?? ""}`;
        history.appendChild(li);
      }
    }
    this.updateInactivityModal();
  }

  private updateInactivityModal(): void {
    const existing = document.querySelector("#inactivity-modal");
    const prompt = this.store.state.inactivityPrompt;
    if (prompt === null) {
      existing?.remove();
      return;
    }
    if (existing) return; // already showing for this episode
    const modal = div("modal-backdrop");
    modal.id = "inactivity-modal";
    modal.innerHTML = `
      <div class="modal">
        <h3>${t("inactivity_title")}</h3>
        <p>${t("inactivity_body")}</p>
        <div class="modal-buttons">
          <button id="btn-change">${t("change_operation")}</button>
          <button id="btn-end" class="secondary">${t("end_of_job")}</button>
        </div>
      </div>`;
    (modal.querySelector("#btn-end") as HTMLButtonElement)
      .addEventListener("click", async () => {
        await this.api.closeWorkOrder(prompt.work_order).catch(() => undefined);
        this.store.update((s) => { s.inactivityPrompt = null; });
      });
    (modal.querySelector("#btn-change") as HTMLButtonElement)
      .addEventListener("click", async () => {
        await this.api.closeWorkOrder(prompt.work_order).catch(() => undefined);
        this.store.update((s) => { s.inactivityPrompt = null; });
        document.querySelector<HTMLInputElement>(
          "#order-form input[name=material]")?.focus();
      });
    document.body.appendChild(modal);
  }
}

function labelFor(ch: SensorChannel): string {
  if (ch.quantity.startsWith("current")) return t("current");
  if (ch.quantity === "temperature") return t("temperature");
  return t("vibration");
}

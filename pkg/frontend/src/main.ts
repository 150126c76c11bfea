// HMI bootstrap: tabs, event-stream subscription, stale banner.
import { ApiClient } from "./api.js";
import { t, toggleLang } from "./i18n.js";
import { hydrate, Store } from "./state.js";
import { subscribeEvents } from "./sse.js";
import { CurationView } from "./views/curation.js";
import { ExplorerView } from "./views/explorer.js";
import { PanelView } from "./views/panel.js";
import type { SamplePoint } from "./types.js";

const api = new ApiClient();
const store = new Store();

async function hydrateFromApi(): Promise<void> {
  const [alerts, incidents, orders, models] = await Promise.all([
    api.alerts(), api.incidents(), api.workOrders(), api.models(),
  ]);
  const latest: Record<string, SamplePoint | null> = {};
  const assets = await api.assets();
  for (const asset of assets) {
    const detail = await api.assetDetail(asset.id);
    for (const ch of detail.channels) {
      latest[ch.id] = (await api.channelLatest(ch.id)).sample;
    }
  }
  store.update((s) => hydrate(s, {
    alerts, incidents, orders, latest,
    activeModel: models.active_version,
  }));
}

function setupTabs(): void {
  const tabs = document.querySelectorAll<HTMLElement>(".tab");
  const panes = document.querySelectorAll<HTMLElement>(".tab-pane");
  tabs.forEach((tab) => {
    tab.addEventListener("click", () => {
      tabs.forEach((other) => other.classList.toggle("active", other === tab));
      panes.forEach((pane) => {
        pane.classList.toggle("active", pane.id === `pane-${tab.dataset.tab}`);
      });
    });
  });
}

function applyStaticLabels(): void {
  document.title = t("title");
  (document.querySelector("#app-title") as HTMLElement).textContent = t("title");
  document.querySelectorAll<HTMLElement>("[data-i18n]").forEach((node) => {
    node.textContent = t(node.dataset.i18n ?? "");
  });
}

async function boot(): Promise<void> {
  applyStaticLabels();
  setupTabs();

  const panel = new PanelView(
    document.querySelector("#pane-panel") as HTMLElement, api, store);
  const explorer = new ExplorerView(
    document.querySelector("#pane-startups") as HTMLElement, api);
  const curation = new CurationView(
    document.querySelector("#pane-model") as HTMLElement, api,
    () => void explorer.refresh());

  await hydrateFromApi().catch(() => undefined);
  await panel.init();
  await explorer.refresh().catch(() => undefined);
  await curation.refresh().catch(() => undefined);

  subscribeEvents("/api/events", {
    onEvent: (ev) => {
      store.applyEvent(ev, Date.now());
      if (["model_trained", "reference_merged", "model_activated",
           "startup_evaluated", "phases_overridden"].includes(ev.type)) {
        void explorer.refresh();
        void curation.refresh();
      }
    },
    onHeartbeat: () => store.markHeartbeat(Date.now()),
    onStateChange: (connected) => store.setConnected(connected, Date.now()),
  });

  const banner = document.querySelector("#live-banner") as HTMLElement;
  setInterval(() => {
    const stale = store.isStale(Date.now());
    banner.textContent = stale ? t("stale") : t("live");
    banner.className = stale ? "banner stale" : "banner live";
  }, 1000);

  (document.querySelector("#lang-toggle") as HTMLElement)
    .addEventListener("click", () => {
      toggleLang();
      window.location.reload();
    });
}

void boot();

// Field labels mirror the shop-floor HMI (Spanish first, English toggle).

export type Lang = "es" | "en";

const STRINGS: Record<string, { es: string; en: string }> = {
  title: { es: "Gemelo digital · Fresadora CF-20", en: "Digital twin · CF-20 mill" },
  panel: { es: "Panel", en: "Panel" },
  startups: { es: "Arranques", en: "Startups" },
  model: { es: "Modelo", en: "Model" },
  material: { es: "Material", en: "Material" },
  operation: { es: "Operación", en: "Operation" },
  tool: { es: "Herramienta", en: "Tool" },
  plan: { es: "Plano", en: "Plan code" },
  open_order: { es: "Abrir orden", en: "Open order" },
  close_order: { es: "Cerrar orden", en: "Close order" },
  no_open_order: { es: "Sin orden abierta", en: "No open work order" },
  incidents: { es: "Incidencias", en: "Incidents" },
  incident_text: { es: "Descripción", en: "Description" },
  log_incident: { es: "Registrar incidencia", en: "Log incident" },
  alerts: { es: "Alertas", en: "Alerts" },
  alert_history: { es: "Histórico", en: "History" },
  acknowledge: { es: "Reconocer", en: "Acknowledge" },
  operator: { es: "Operario", en: "Operator" },
  inactivity_title: { es: "Inactividad detectada", en: "Inactivity detected" },
  inactivity_body: {
    es: "Sin actividad con la orden abierta. ¿Cambio de operación o fin de trabajo?",
    en: "No activity while the order is open. Change operation or end of job?",
  },
  change_operation: { es: "Cambio de operación", en: "Change operation" },
  end_of_job: { es: "Fin de trabajo", en: "End of job" },
  live: { es: "EN VIVO", en: "LIVE" },
  stale: { es: "SIN SEÑAL", en: "STALE" },
  current: { es: "Corriente", en: "Current" },
  temperature: { es: "Temperatura", en: "Temperature" },
  vibration: { es: "Vibración", en: "Vibration" },
  publish: { es: "Publicar referencia", en: "Publish reference" },
  include: { es: "Incluir", en: "Include" },
  margin_phase: { es: "Margen fase", en: "Phase margin" },
  labels: { es: "Etiquetas", en: "Labels" },
  train: { es: "Entrenar (elbow)", en: "Train (elbow)" },
  no_model: { es: "Sin modelo: entrene primero", en: "No model yet: train first" },
  startup: { es: "Arranque", en: "Startup" },
  version: { es: "Versión", en: "Version" },
  normal: { es: "normal", en: "normal" },
  anomalous: { es: "anómalo", en: "anomalous" },
  assignments: { es: "Asignación de grupos", en: "Cluster assignments" },
  phase: { es: "Fase", en: "Phase" },
  severity: { es: "Severidad", en: "Severity" },
};

let current: Lang = "es";

export function setLang(lang: Lang): void {
  current = lang;
}

export function getLang(): Lang {
  return current;
}

export function t(key: string): string {
  const entry = STRINGS[key];
  if (!entry) return key;
  return entry[current];
}

export function toggleLang(): Lang {
  current = current === "es" ? "en" : "es";
  return current;
}

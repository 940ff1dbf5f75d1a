// Browser wiring: bind the session store and calibration editor to the page.
// All logic lives in the imported modules; this file only moves values
// between DOM elements and those modules.

import { GatewayClient } from "./protocol.js";
import { SessionStore, type SessionState } from "./state.js";
import {
  canSend,
  exportDocument,
  getField,
  parseDocument,
  setField,
  validate,
  type JsonObject,
  type JsonValue,
} from "./calibration.js";
import { classifierPanels, progressHistogram, profileView, seriesView } from "./views.js";
import { svgHistogram, svgProfile, svgSeries } from "./svg.js";

const PANEL_SIZE = { width: 420, height: 180 };
const RECONNECT_DELAY_MS = 2000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const client = new GatewayClient(window.location.origin);
const store = new SessionStore(client);

let draft: JsonObject | null = null;
let reconnectTimer: number | null = null;

function showError(message: string): void {
  el<HTMLElement>("error-banner").textContent = message;
}

function renderDraft(): void {
  const editor = el<HTMLTextAreaElement>("cal-text");
  const report = el<HTMLElement>("cal-errors");
  const sendButton = el<HTMLButtonElement>("cal-send");
  if (draft === null) {
    report.textContent = "no calibration loaded";
    sendButton.disabled = true;
    return;
  }
  editor.value = exportDocument(draft);
  const errors = validate(draft);
  report.innerHTML = errors.length === 0
    ? '<span class="ok">all fields valid</span>'
    : errors.map((e) => `<div class="field-error">${e.path}: ${e.message}</div>`).join("");
  sendButton.disabled = !canSend(errors) || !store.controls().canConfigure;
}

function render(state: SessionState): void {
  el<HTMLElement>("conn-phase").textContent = state.connection;
  el<HTMLElement>("server-state").textContent = state.serverState;
  const queue = state.queue;
  el<HTMLElement>("queue-line").textContent =
    queue === null
      ? "no queue"
      : `processed ${queue.processed} / enqueued ${queue.enqueued}, ` +
        `failed ${queue.failed}, ${queue.rate_fps.toFixed(2)} frames/s, ` +
        `${queue.workers} workers`;
  el<HTMLElement>("dropped-line").textContent =
    state.droppedEvents > 0 ? `${state.droppedEvents} events dropped while not running` : "";
  showError(state.lastError ?? "");

  const controls = store.controls();
  el<HTMLButtonElement>("queue-start").disabled = !controls.canStart;
  el<HTMLButtonElement>("queue-abort").disabled = !controls.canAbort;
  el<HTMLButtonElement>("queue-reintegrate").disabled = !controls.canReintegrate;

  const filterBox = el<HTMLSelectElement>("dataset-filter");
  const want = state.datasetFilter ?? "";
  const options = ["", ...state.datasets];
  if (filterBox.options.length !== options.length) {
    filterBox.innerHTML = options
      .map((d) => `<option value="${d}">${d === "" ? "all datasets" : d}</option>`)
      .join("");
  }
  filterBox.value = want;

  const visible = store.visibleHistory();
  el<HTMLElement>("history-count").textContent =
    `${visible.length} of ${state.history.length} records shown`;
  el<HTMLElement>("progress-plot").innerHTML = svgHistogram(
    progressHistogram(visible),
    PANEL_SIZE,
    "frames processed over acquisition time",
  );
  const panels = classifierPanels(visible);
  el<HTMLElement>("panel-intensity").innerHTML = svgSeries(
    seriesView(panels.total_intensity),
    PANEL_SIZE,
    "total intensity",
  );
  el<HTMLElement>("panel-invariant").innerHTML = svgSeries(
    seriesView(panels.invariant),
    PANEL_SIZE,
    "scattering invariant",
  );
  el<HTMLElement>("panel-corrlen").innerHTML = svgSeries(
    seriesView(panels.correlation_length),
    PANEL_SIZE,
    "correlation length",
  );

  const failures = el<HTMLElement>("failures");
  failures.innerHTML = state.failures
    .map((f) => `<div class="field-error">${f.path}: ${f.error}</div>`)
    .join("");

  if (state.latestProfile !== null) {
    el<HTMLElement>("profile-plot").innerHTML = svgProfile(
      profileView(state.latestProfile),
      { width: 860, height: 260 },
      "latest radial profile",
    );
  }

  if (state.connection === "degraded" && reconnectTimer === null) {
    reconnectTimer = window.setTimeout(() => {
      reconnectTimer = null;
      store.reconnect().catch((err) => showError(String(err)));
    }, RECONNECT_DELAY_MS);
  }
  renderDraft();
}

function bind(): void {
  el<HTMLButtonElement>("connect").addEventListener("click", () => {
    store.connect("console").catch((err) => showError(String(err)));
  });
  el<HTMLButtonElement>("refresh").addEventListener("click", () => {
    store.refresh().catch((err) => showError(String(err)));
  });
  el<HTMLButtonElement>("queue-start").addEventListener("click", () => {
    store.startQueue().catch((err) => showError(String(err)));
  });
  el<HTMLButtonElement>("queue-abort").addEventListener("click", () => {
    store.abort().catch((err) => showError(String(err)));
  });
  el<HTMLButtonElement>("queue-reintegrate").addEventListener("click", () => {
    store.reintegrate().catch((err) => showError(String(err)));
  });
  el<HTMLSelectElement>("dataset-filter").addEventListener("change", (ev) => {
    const value = (ev.target as HTMLSelectElement).value;
    store.setDatasetFilter(value === "" ? null : value);
  });

  el<HTMLInputElement>("cal-file").addEventListener("change", (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (file === undefined) {
      return;
    }
    file.text().then((text) => {
      const { doc, errors } = parseDocument(text);
      draft = doc;
      if (doc === null) {
        showError(errors.map((e) => e.message).join("; "));
      }
      renderDraft();
    });
  });
  el<HTMLTextAreaElement>("cal-text").addEventListener("change", (ev) => {
    const { doc, errors } = parseDocument((ev.target as HTMLTextAreaElement).value);
    if (doc !== null) {
      draft = doc;
    } else {
      showError(errors.map((e) => e.message).join("; "));
    }
    renderDraft();
  });
  el<HTMLButtonElement>("cal-apply").addEventListener("click", () => {
    if (draft === null) {
      return;
    }
    const path = el<HTMLInputElement>("cal-path").value.trim();
    const raw = el<HTMLInputElement>("cal-value").value;
    if (path === "") {
      return;
    }
    let value: JsonValue;
    try {
      value = JSON.parse(raw) as JsonValue;
    } catch {
      value = raw;
    }
    try {
      draft = setField(draft, path, value);
    } catch (err) {
      showError(String(err));
      return;
    }
    renderDraft();
  });
  el<HTMLInputElement>("cal-path").addEventListener("change", (ev) => {
    if (draft === null) {
      return;
    }
    const path = (ev.target as HTMLInputElement).value.trim();
    const current = getField(draft, path);
    if (current !== undefined) {
      el<HTMLInputElement>("cal-value").value = JSON.stringify(current);
    }
  });
  el<HTMLButtonElement>("cal-send").addEventListener("click", () => {
    if (draft === null) {
      return;
    }
    store.sendCalibration(exportDocument(draft)).catch((err) => showError(String(err)));
  });
  el<HTMLButtonElement>("cal-export").addEventListener("click", () => {
    if (draft === null) {
      return;
    }
    const blob = new Blob([exportDocument(draft)], { type: "application/json" });
    const url = URL.createObjectURL(blob);
    const link = document.createElement("a");
    link.href = url;
    link.download = "calibration.json";
    link.click();
    URL.revokeObjectURL(url);
  });
}

bind();
store.subscribe(render);
render(store.getState());

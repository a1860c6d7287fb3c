// DOM glue: hash routing, login, polling. All rendering is delegated to the
// pure helpers in render.ts so the views stay testable.

import { ApiClient, ApiError } from "./api.js";
import { Poller } from "./poll.js";
import {
  alertsHtml,
  escapeHtml,
  reportHtml,
  rosterHtml,
  threadHtml,
  timelineSvg,
  trendsSvg,
} from "./render.js";

const TOKEN_KEY = "roberto_token";
const THREAD_POLL_MS = 4000; // spec'd ceiling is 5s
const ROSTER_POLL_MS = 10000;

const app = document.getElementById("app") as HTMLElement;
let api: ApiClient | null = null;
let activePollers: Poller[] = [];

function baseUrl(): string {
  return window.location.origin;
}

function stopPolling(): void {
  for (const poller of activePollers) poller.stop();
  activePollers = [];
}

function requireLogin(message = ""): void {
  stopPolling();
  app.innerHTML = `
    <div class="login">
      <h1>Roberto dashboard</h1>
      <p>Enter the provider access token.</p>
      ${message ? `<p class="error">${escapeHtml(message)}</p>` : ""}
      <form id="login-form">
        <input type="password" id="token" placeholder="access token" autofocus />
        <button type="submit">Sign in</button>
      </form>
    </div>`;
  const form = document.getElementById("login-form") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const token = (document.getElementById("token") as HTMLInputElement).value.trim();
    if (!token) return;
    localStorage.setItem(TOKEN_KEY, token);
    api = new ApiClient(baseUrl(), token);
    void route();
  });
}

function handleFailure(err: unknown, retry: () => void): void {
  if (err instanceof ApiError && err.status === 401) {
    localStorage.removeItem(TOKEN_KEY);
    requireLogin("That token was rejected. Try again.");
    return;
  }
  stopPolling();
  app.innerHTML = `
    <div class="banner error">
      <p>Could not reach the service${err instanceof ApiError && err.status ? ` (HTTP ${err.status})` : ""}.</p>
      <button id="retry">Retry</button>
    </div>`;
  document.getElementById("retry")!.addEventListener("click", retry);
}

// --- roster view -------------------------------------------------------------

async function showRoster(): Promise<void> {
  if (!api) return requireLogin();
  stopPolling();
  app.innerHTML = `<header><h1>Patients</h1></header><section id="roster">Loading…</section>`;
  const section = document.getElementById("roster") as HTMLElement;

  const refresh = async () => {
    const rows = await api!.listPatients();
    section.innerHTML = rosterHtml(rows);
    for (const row of section.querySelectorAll<HTMLElement>(".roster-row")) {
      row.addEventListener("click", () => {
        window.location.hash = `#/patient/${row.dataset.patient}`;
      });
    }
  };
  try {
    await refresh();
  } catch (err) {
    return handleFailure(err, () => void showRoster());
  }
  const poller = new Poller(ROSTER_POLL_MS, refresh);
  poller.start();
  activePollers.push(poller);
}

// --- patient detail ------------------------------------------------------------

async function showPatient(patientId: string): Promise<void> {
  if (!api) return requireLogin();
  stopPolling();
  app.innerHTML = `
    <header>
      <a href="#/">&larr; patients</a>
      <h1 id="patient-name">${escapeHtml(patientId)}</h1>
    </header>
    <section><h2>Report (last 7 days)</h2><div id="report">Loading…</div></section>
    <section><h2>Dose timeline</h2><div id="timeline"></div></section>
    <section><h2>Check-in trends</h2><div id="trends"></div></section>
    <section><h2>Alerts</h2><div id="alerts"></div></section>
    <section>
      <h2>Intervention chat</h2>
      <div id="thread"></div>
      <form id="send-form">
        <input id="draft" placeholder="Write to the patient…" autocomplete="off" />
        <button type="submit">Send</button>
        <span id="send-status" class="muted"></span>
      </form>
    </section>`;

  const el = (id: string) => document.getElementById(id) as HTMLElement;

  const refreshAlerts = async () => {
    const alerts = await api!.listAlerts(patientId);
    el("alerts").innerHTML = alertsHtml(alerts);
    for (const button of el("alerts").querySelectorAll<HTMLButtonElement>("button.ack")) {
      button.addEventListener("click", async () => {
        button.disabled = true;
        try {
          await api!.ackAlert(button.dataset.alert!);
          await refreshAlerts();
          await refreshReport(); // open-alert count changes; no full reload
        } catch (err) {
          button.disabled = false;
          handleFailure(err, () => void showPatient(patientId));
        }
      });
    }
  };

  const refreshReport = async () => {
    const report = await api!.getReport(patientId);
    el("report").innerHTML = reportHtml(report);
  };

  const refreshCharts = async () => {
    const events = await api!.getTimeline(patientId);
    el("timeline").innerHTML = timelineSvg(events);
    el("trends").innerHTML = trendsSvg(events);
  };

  const refreshThread = async () => {
    const messages = await api!.getThread(patientId);
    el("thread").innerHTML = threadHtml(messages);
  };

  try {
    await Promise.all([refreshReport(), refreshCharts(), refreshAlerts(), refreshThread()]);
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) {
      app.innerHTML = `<div class="banner"><p>No such patient.</p><a href="#/">Back to patients</a></div>`;
      return;
    }
    return handleFailure(err, () => void showPatient(patientId));
  }

  const form = document.getElementById("send-form") as HTMLFormElement;
  const draft = document.getElementById("draft") as HTMLInputElement;
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const body = draft.value.trim();
    if (!body) return;
    el("send-status").textContent = "sending…";
    try {
      await api!.postIntervention(patientId, body);
      draft.value = ""; // only cleared on success; failures keep the draft
      el("send-status").textContent = "";
      await refreshThread();
    } catch {
      el("send-status").textContent = "send failed — tap Send to retry";
    }
  });

  const poller = new Poller(THREAD_POLL_MS, refreshThread);
  poller.start();
  activePollers.push(poller);
}

// --- routing ---------------------------------------------------------------------

async function route(): Promise<void> {
  const token = localStorage.getItem(TOKEN_KEY);
  if (!token) return requireLogin();
  if (!api) api = new ApiClient(baseUrl(), token);
  const hash = window.location.hash;
  const patient = hash.match(/^#\/patient\/(.+)$/);
  if (patient) return showPatient(decodeURIComponent(patient[1]));
  return showRoster();
}

window.addEventListener("hashchange", () => void route());
void route();

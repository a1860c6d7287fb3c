// Pure view helpers: data in, HTML/SVG strings out. Everything displayed is
// taken verbatim from API fields; nothing is recomputed client-side.

import type { Alert, Report, RosterRow, ThreadMessage, TimelineEvent } from "./model.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function formatRate(rate: number | null): string {
  return rate === null ? "–" : `${Math.round(rate * 100)}%`;
}

// Roster order: patients with open High alerts first, then lowest adherence
// first; unknown rates sort after known ones, id breaks remaining ties.
export function sortRoster(rows: RosterRow[]): RosterRow[] {
  return [...rows].sort((a, b) => {
    if (a.open_high_alerts !== b.open_high_alerts) {
      return b.open_high_alerts - a.open_high_alerts;
    }
    const rateA = a.rate_7d === null ? 2 : a.rate_7d;
    const rateB = b.rate_7d === null ? 2 : b.rate_7d;
    if (rateA !== rateB) return rateA - rateB;
    return a.patient_id < b.patient_id ? -1 : 1;
  });
}

export function rosterHtml(rows: RosterRow[]): string {
  if (rows.length === 0) {
    return `<p class="empty">No patients yet. They appear here after their first chat message.</p>`;
  }
  const body = sortRoster(rows)
    .map(
      (row) => `
    <tr class="roster-row" data-patient="${escapeHtml(row.patient_id)}">
      <td>${escapeHtml(row.display_name)}</td>
      <td><span class="badge stage-${escapeHtml(row.stage)}">${escapeHtml(row.stage_label)}</span></td>
      <td>${formatRate(row.rate_7d)}</td>
      <td>${row.open_alerts}${row.open_high_alerts > 0 ? ` <span class="badge sev-high">${row.open_high_alerts} high</span>` : ""}</td>
      <td>${escapeHtml(row.last_activity_at.slice(0, 16).replace("T", " "))}</td>
    </tr>`
    )
    .join("");
  return `<table class="roster">
    <thead><tr><th>Patient</th><th>Stage</th><th>7-day adherence</th><th>Open alerts</th><th>Last activity</th></tr></thead>
    <tbody>${body}</tbody>
  </table>`;
}

// --- timeline chart ---------------------------------------------------------

export interface DoseMarker {
  at: string;
  outcome: "taken" | "skipped" | "missed" | "scheduled";
  doseId: string;
}

const OUTCOME_EVENTS: Record<string, DoseMarker["outcome"]> = {
  dose_taken: "taken",
  dose_skipped: "skipped",
  dose_expired: "missed",
};

/** One marker per dose: its terminal outcome, or "scheduled" while open. */
export function doseMarkers(events: TimelineEvent[]): DoseMarker[] {
  const byDose = new Map<string, DoseMarker>();
  for (const event of events) {
    if (event.type === "dose_scheduled" && event.dose_id) {
      byDose.set(event.dose_id, { at: event.at, outcome: "scheduled", doseId: event.dose_id });
    }
    const outcome = OUTCOME_EVENTS[event.type];
    if (outcome && event.dose_id) {
      const existing = byDose.get(event.dose_id);
      byDose.set(event.dose_id, {
        at: existing ? existing.at : event.at,
        outcome,
        doseId: event.dose_id,
      });
    }
  }
  return [...byDose.values()].sort((a, b) => (a.at < b.at ? -1 : 1));
}

const MARKER_COLOR: Record<DoseMarker["outcome"], string> = {
  taken: "#2e7d32",
  skipped: "#f9a825",
  missed: "#c62828",
  scheduled: "#90a4ae",
};

export function timelineSvg(events: TimelineEvent[], width = 640): string {
  const markers = doseMarkers(events);
  if (markers.length === 0) {
    return `<p class="empty">No doses in this window yet.</p>`;
  }
  const times = markers.map((m) => Date.parse(m.at));
  const lo = Math.min(...times);
  const hi = Math.max(...times);
  const span = Math.max(hi - lo, 1);
  const x = (t: number) => 20 + ((t - lo) / span) * (width - 40);
  const dots = markers
    .map(
      (m) =>
        `<circle cx="${x(Date.parse(m.at)).toFixed(1)}" cy="30" r="7" fill="${MARKER_COLOR[m.outcome]}" data-outcome="${m.outcome}"><title>${escapeHtml(m.doseId)} ${m.outcome} ${escapeHtml(m.at)}</title></circle>`
    )
    .join("");
  const legend = (Object.keys(MARKER_COLOR) as DoseMarker["outcome"][])
    .map(
      (outcome, i) =>
        `<circle cx="${24 + i * 110}" cy="66" r="5" fill="${MARKER_COLOR[outcome]}"/>` +
        `<text x="${34 + i * 110}" y="70" class="legend">${outcome}</text>`
    )
    .join("");
  return `<svg viewBox="0 0 ${width} 80" class="timeline" role="img">
    <line x1="20" y1="30" x2="${width - 20}" y2="30" stroke="#cfd8dc"/>
    ${dots}${legend}
  </svg>`;
}

// --- check-in trends ----------------------------------------------------------

export interface TrendPoint {
  at: string;
  mood: number;
  stress: number;
  sleep: number;
}

export function trendPoints(events: TimelineEvent[]): TrendPoint[] {
  return events
    .filter((e) => e.type === "checkin_recorded")
    .map((e) => ({ at: e.at, mood: e.mood ?? 0, stress: e.stress ?? 0, sleep: e.sleep_hours ?? 0 }))
    .sort((a, b) => (a.at < b.at ? -1 : 1));
}

export function trendsSvg(events: TimelineEvent[], width = 640): string {
  const points = trendPoints(events);
  if (points.length === 0) {
    return `<p class="empty">No check-ins in this window yet.</p>`;
  }
  const times = points.map((p) => Date.parse(p.at));
  const lo = Math.min(...times);
  const span = Math.max(Math.max(...times) - lo, 1);
  const x = (t: number) => 20 + ((t - lo) / span) * (width - 40);
  const line = (pick: (p: TrendPoint) => number, max: number, color: string, name: string) => {
    const path = points
      .map((p) => `${x(Date.parse(p.at)).toFixed(1)},${(90 - (pick(p) / max) * 70).toFixed(1)}`)
      .join(" ");
    return `<polyline points="${path}" fill="none" stroke="${color}" stroke-width="2" data-series="${name}"/>`;
  };
  return `<svg viewBox="0 0 ${width} 120" class="trends" role="img">
    ${line((p) => p.mood, 5, "#1565c0", "mood")}
    ${line((p) => p.stress, 5, "#ef6c00", "stress")}
    ${line((p) => p.sleep, 12, "#6a1b9a", "sleep")}
    <text x="20" y="112" class="legend">mood (blue) · stress (orange) · sleep (purple)</text>
  </svg>`;
}

// --- report, alerts, thread ------------------------------------------------------

export function reportHtml(report: Report): string {
  const summary = report.checkin_summary;
  const fmt = (value: number | null) => (value === null ? "–" : value.toFixed(1));
  const trend =
    report.trend_delta === null
      ? "–"
      : `${report.trend_delta >= 0 ? "+" : ""}${Math.round(report.trend_delta * 100)}pp`;
  return `<dl class="report">
    <dt>Stage</dt><dd><span class="badge stage-${escapeHtml(report.stage)}">${escapeHtml(report.stage_label)}</span></dd>
    <dt>Doses due</dt><dd>${report.doses_due} (taken ${report.taken}, skipped ${report.skipped}, missed ${report.missed})</dd>
    <dt>Adherence</dt><dd>${formatRate(report.adherence_rate)} <span class="muted">(trend ${trend})</span></dd>
    <dt>Check-ins</dt><dd>${summary.count} (mood ${fmt(summary.mood_avg)}, stress ${fmt(summary.stress_avg)}, sleep ${fmt(summary.sleep_avg)}h)</dd>
    <dt>Open alerts</dt><dd>${report.alerts_open}</dd>
  </dl>`;
}

export function alertsHtml(alerts: Alert[]): string {
  if (alerts.length === 0) {
    return `<p class="empty">No alerts.</p>`;
  }
  const rows = alerts
    .map(
      (alert) => `
    <li class="alert ${alert.acknowledged ? "acked" : ""}">
      <span class="badge sev-${alert.severity}">${alert.severity}</span>
      <span class="alert-kind">${escapeHtml(alert.kind.replace("_", " "))}</span>
      <span class="muted">${escapeHtml(alert.created_at.slice(0, 16).replace("T", " "))}</span>
      ${alert.detail ? `<span class="detail">${escapeHtml(alert.detail)}</span>` : ""}
      <button class="ack" data-alert="${escapeHtml(alert.alert_id)}" ${alert.acknowledged ? "disabled" : ""}>
        ${alert.acknowledged ? "Acknowledged" : "Acknowledge"}
      </button>
    </li>`
    )
    .join("");
  return `<ul class="alerts">${rows}</ul>`;
}

/** Strictly by sent_at; equal stamps keep their arrival order. */
export function sortMessages(messages: ThreadMessage[]): ThreadMessage[] {
  return [...messages].sort((a, b) =>
    a.sent_at < b.sent_at ? -1 : a.sent_at > b.sent_at ? 1 : 0
  );
}

export function threadHtml(messages: ThreadMessage[]): string {
  if (messages.length === 0) {
    return `<p class="empty">No messages yet. Say hello below.</p>`;
  }
  const rows = sortMessages(messages)
    .map(
      (m) => `
    <li class="msg from-${m.sender}">
      <span class="who">${m.sender === "provider" ? "You" : "Patient"}</span>
      <span class="body">${escapeHtml(m.body)}</span>
      <span class="muted">${escapeHtml(m.sent_at.slice(11, 16))}</span>
    </li>`
    )
    .join("");
  return `<ul class="thread">${rows}</ul>`;
}

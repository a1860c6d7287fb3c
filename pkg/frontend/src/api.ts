// Thin typed client for the provider API. Auth is a static bearer token.

import type { Alert, Report, RosterRow, ThreadMessage, TimelineEvent } from "./model.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string, private token: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, {
        method,
        headers: {
          Authorization: `Bearer ${this.token}`,
          ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
        },
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new ApiError(0, `API unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as T;
  }

  listPatients(): Promise<RosterRow[]> {
    return this.request("GET", "/api/patients");
  }

  getReport(patientId: string, start?: string, end?: string): Promise<Report> {
    return this.request("GET", `/api/patients/${patientId}/report${windowQuery(start, end)}`);
  }

  getTimeline(patientId: string, start?: string, end?: string): Promise<TimelineEvent[]> {
    return this.request("GET", `/api/patients/${patientId}/timeline${windowQuery(start, end)}`);
  }

  listAlerts(patientId?: string): Promise<Alert[]> {
    const query = patientId ? `?patient_id=${encodeURIComponent(patientId)}` : "";
    return this.request("GET", `/api/alerts${query}`);
  }

  ackAlert(alertId: string): Promise<Alert> {
    return this.request("POST", `/api/alerts/${encodeURIComponent(alertId)}/ack`);
  }

  getThread(patientId: string): Promise<ThreadMessage[]> {
    return this.request("GET", `/api/patients/${patientId}/thread`);
  }

  postIntervention(patientId: string, body: string): Promise<ThreadMessage> {
    return this.request("POST", `/api/patients/${patientId}/thread`, { body });
  }
}

function windowQuery(start?: string, end?: string): string {
  const params = new URLSearchParams();
  if (start) params.set("start", start);
  if (end) params.set("end", end);
  const query = params.toString();
  return query ? `?${query}` : "";
}

// Shapes of the provider API responses. The dashboard is a pure client:
// every number displayed comes straight from one of these fields.

export interface RosterRow {
  patient_id: string;
  display_name: string;
  stage: string;
  stage_label: string;
  rate_7d: number | null;
  open_alerts: number;
  open_high_alerts: number;
  last_activity_at: string;
}

export interface CheckinSummary {
  count: number;
  mood_avg: number | null;
  stress_avg: number | null;
  sleep_avg: number | null;
}

export interface Report {
  patient_id: string;
  window: { start: string; end: string };
  doses_due: number;
  taken: number;
  skipped: number;
  missed: number;
  adherence_rate: number | null;
  trend_delta: number | null;
  stage: string;
  stage_label: string;
  checkin_summary: CheckinSummary;
  alerts_open: number;
}

export interface Alert {
  alert_id: string;
  patient_id: string;
  kind: string;
  severity: "low" | "medium" | "high";
  created_at: string;
  acknowledged: boolean;
  detail: string | null;
}

export interface ThreadMessage {
  patient_id: string;
  provider_id: string;
  sender: "patient" | "provider";
  body: string;
  sent_at: string;
}

export interface TimelineEvent {
  at: string;
  type:
    | "dose_scheduled"
    | "reminder_fired"
    | "dose_taken"
    | "dose_skipped"
    | "dose_expired"
    | "checkin_recorded";
  dose_id?: string;
  medication_id?: string;
  due_at?: string;
  kind?: string;
  number?: number;
  reason?: string | null;
  mood?: number;
  stress?: number;
  sleep_hours?: number;
  symptoms?: string[];
}

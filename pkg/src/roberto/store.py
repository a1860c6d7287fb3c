"""Append-only event log plus derived current-state views.

The log is the single source of truth; views (patients, schedule book,
sessions, alerts, threads, deliveries) are a deterministic fold over it,
maintained incrementally on append and rebuilt identically by full replay.

Log file format, version 1 (bit-exact):
  - UTF-8 text, one record per line, "\n" separators, no BOM
  - line 1 header: {"format":"roberto-log","version":1}
  - every other line is one event, a compact JSON object with keys in this
    exact order:
      seq         integer, 1-based, strictly increasing by 1
      at          ISO-8601 instant with UTC offset, e.g. "2025-06-02T08:00:00+00:00"
      patient_id  owning patient id
      type        payload type tag (see the codec table below)
      data        type-specific JSON object

Appends are flushed and fsynced before returning. A trailing partial line
(crash mid-write, never acknowledged) is dropped on reopen; any other
malformation raises CorruptLog.
"""

from __future__ import annotations

import json
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .dialogue import ConversationSession, Flow
from .domain import (
    Alert,
    AlertKind,
    CheckIn,
    InterventionMessage,
    LocalTimeInterval,
    Medication,
    Missed,
    PatientProfile,
    Pending,
    Regimen,
    Reminded,
    ReminderPrefs,
    ScheduledDose,
    SenderRole,
    Severity,
    Skipped,
    Taken,
)


class StorageFailure(Exception):
    pass


class CorruptLog(Exception):
    def __init__(self, seq: int, reason: str):
        self.seq = seq
        super().__init__(f"log corrupt at seq {seq}: {reason}")


# ---------------------------------------------------------------------------
# event payloads


@dataclass(frozen=True)
class PatientRegistered:
    profile: PatientProfile


@dataclass(frozen=True)
class ChatRegistered:
    channel: str
    external_chat_id: str


@dataclass(frozen=True)
class ProfileUpdated:
    changes: Mapping[str, object]


@dataclass(frozen=True)
class MedicationSaved:
    medication: Medication


@dataclass(frozen=True)
class DoseScheduled:
    dose_id: str
    medication_id: str
    due_at: datetime


@dataclass(frozen=True)
class ReminderFired:
    dose_id: str
    kind: str  # initial | repeat | escalation
    number: int


@dataclass(frozen=True)
class DoseSnoozed:
    dose_id: str


@dataclass(frozen=True)
class DoseTaken:
    dose_id: str


@dataclass(frozen=True)
class DoseSkipped:
    dose_id: str
    reason: str | None = None


@dataclass(frozen=True)
class DoseExpired:
    dose_id: str


@dataclass(frozen=True)
class CheckInRecorded:
    checkin: CheckIn


@dataclass(frozen=True)
class AlertRaised:
    alert: Alert


@dataclass(frozen=True)
class AlertAcked:
    alert_id: str


@dataclass(frozen=True)
class InterventionAppended:
    message: InterventionMessage


@dataclass(frozen=True)
class AppointmentRequested:
    note: str


@dataclass(frozen=True)
class SessionReplaced:
    session: ConversationSession


@dataclass(frozen=True)
class DeliveryRecorded:
    message_id: str
    channel: str
    status: str  # delivered | queued | failed
    attempt: int
    body: str
    quick_replies: tuple[tuple[str, str], ...] = ()
    card: Mapping[str, str] | None = None
    wire: Mapping[str, object] | None = None


EventPayload = Union[
    PatientRegistered,
    ChatRegistered,
    ProfileUpdated,
    MedicationSaved,
    DoseScheduled,
    ReminderFired,
    DoseSnoozed,
    DoseTaken,
    DoseSkipped,
    DoseExpired,
    CheckInRecorded,
    AlertRaised,
    AlertAcked,
    InterventionAppended,
    AppointmentRequested,
    SessionReplaced,
    DeliveryRecorded,
]


@dataclass(frozen=True)
class DomainEvent:
    seq: int
    at: datetime
    patient_id: str
    payload: EventPayload

    @property
    def type_tag(self) -> str:
        return payload_type(self.payload)


# ---------------------------------------------------------------------------
# codec


def _iso(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat()


def _dt(s: str) -> datetime:
    return datetime.fromisoformat(s)


def _opt_iso(dt: datetime | None) -> str | None:
    return None if dt is None else _iso(dt)


def _encode_prefs(p: ReminderPrefs) -> dict:
    return {
        "snooze_minutes": p.snooze_minutes,
        "max_reminders_per_dose": p.max_reminders_per_dose,
        "response_window_minutes": p.response_window_minutes,
        "quiet_hours": None
        if p.quiet_hours is None
        else {
            "start": p.quiet_hours.start.strftime("%H:%M"),
            "end": p.quiet_hours.end.strftime("%H:%M"),
        },
    }


def _decode_prefs(d: Mapping) -> ReminderPrefs:
    quiet = d.get("quiet_hours")
    return ReminderPrefs(
        snooze_minutes=d["snooze_minutes"],
        max_reminders_per_dose=d["max_reminders_per_dose"],
        response_window_minutes=d["response_window_minutes"],
        quiet_hours=None
        if quiet is None
        else LocalTimeInterval(time.fromisoformat(quiet["start"]), time.fromisoformat(quiet["end"])),
    )


def _encode_profile(p: PatientProfile) -> dict:
    return {
        "patient_id": p.patient_id,
        "display_name": p.display_name,
        "timezone": p.timezone,
        "provider_id": p.provider_id,
        "condition_tags": list(p.condition_tags),
        "reminder_prefs": _encode_prefs(p.reminder_prefs),
    }


def _decode_profile(d: Mapping) -> PatientProfile:
    return PatientProfile(
        patient_id=d["patient_id"],
        display_name=d["display_name"],
        timezone=d["timezone"],
        provider_id=d["provider_id"],
        condition_tags=tuple(d.get("condition_tags", ())),
        reminder_prefs=_decode_prefs(d["reminder_prefs"]),
    )


def _encode_regimen(r: Regimen) -> dict:
    return {
        "times_of_day": [t.strftime("%H:%M") for t in r.times_of_day],
        "days_of_week": sorted(r.days_of_week),
        "start_date": r.start_date.isoformat(),
        "end_date": None if r.end_date is None else r.end_date.isoformat(),
    }


def _decode_regimen(d: Mapping) -> Regimen:
    return Regimen(
        times_of_day=tuple(time.fromisoformat(t) for t in d["times_of_day"]),
        days_of_week=frozenset(d["days_of_week"]),
        start_date=date.fromisoformat(d["start_date"]),
        end_date=None if d.get("end_date") is None else date.fromisoformat(d["end_date"]),
    )


def _encode_medication(m: Medication) -> dict:
    return {
        "medication_id": m.medication_id,
        "name": m.name,
        "dose_quantity": m.dose_quantity,
        "dose_unit": m.dose_unit,
        "regimen": _encode_regimen(m.regimen),
        "icon": m.icon,
        "photo_ref": m.photo_ref,
        "instructions": m.instructions,
    }


def _decode_medication(d: Mapping) -> Medication:
    return Medication(
        medication_id=d["medication_id"],
        name=d["name"],
        dose_quantity=d["dose_quantity"],
        dose_unit=d["dose_unit"],
        regimen=_decode_regimen(d["regimen"]),
        icon=d.get("icon"),
        photo_ref=d.get("photo_ref"),
        instructions=d.get("instructions"),
    )


def _encode_checkin(c: CheckIn) -> dict:
    return {
        "at": _iso(c.at),
        "mood": c.mood,
        "stress": c.stress,
        "sleep_hours": c.sleep_hours,
        "symptoms": list(c.symptoms),
        "diet_note": c.diet_note,
        "exercise_note": c.exercise_note,
    }


def _decode_checkin(d: Mapping) -> CheckIn:
    return CheckIn(
        at=_dt(d["at"]),
        mood=d["mood"],
        stress=d["stress"],
        sleep_hours=d["sleep_hours"],
        symptoms=tuple(d.get("symptoms", ())),
        diet_note=d.get("diet_note"),
        exercise_note=d.get("exercise_note"),
    )


def _encode_alert(a: Alert) -> dict:
    return {
        "alert_id": a.alert_id,
        "patient_id": a.patient_id,
        "kind": a.kind.value,
        "severity": a.severity.value,
        "created_at": _iso(a.created_at),
        "acknowledged": a.acknowledged,
        "detail": a.detail,
    }


def _decode_alert(d: Mapping) -> Alert:
    return Alert(
        alert_id=d["alert_id"],
        patient_id=d["patient_id"],
        kind=AlertKind(d["kind"]),
        severity=Severity(d["severity"]),
        created_at=_dt(d["created_at"]),
        acknowledged=d.get("acknowledged", False),
        detail=d.get("detail"),
    )


def _encode_session(s: ConversationSession) -> dict:
    return {"flow": s.flow.value, "step": s.step, "slots": dict(s.slots)}


def _decode_session(patient_id: str, d: Mapping) -> ConversationSession:
    return ConversationSession(patient_id, Flow(d["flow"]), d["step"], dict(d["slots"]))


def _encode_profile_changes(changes: Mapping[str, object]) -> dict:
    out: dict = {}
    for key, value in changes.items():
        out[key] = _encode_prefs(value) if key == "reminder_prefs" else value
    return out


def _decode_profile_changes(d: Mapping) -> dict:
    out: dict = {}
    for key, value in d.items():
        if key == "reminder_prefs":
            out[key] = _decode_prefs(value)
        elif key == "condition_tags":
            out[key] = tuple(value)
        else:
            out[key] = value
    return out


_ENCODERS = {
    PatientRegistered: ("patient_registered", lambda p: {"profile": _encode_profile(p.profile)}),
    ChatRegistered: (
        "chat_registered",
        lambda p: {"channel": p.channel, "external_chat_id": p.external_chat_id},
    ),
    ProfileUpdated: ("profile_updated", lambda p: {"changes": _encode_profile_changes(p.changes)}),
    MedicationSaved: ("medication_saved", lambda p: {"medication": _encode_medication(p.medication)}),
    DoseScheduled: (
        "dose_scheduled",
        lambda p: {"dose_id": p.dose_id, "medication_id": p.medication_id, "due_at": _iso(p.due_at)},
    ),
    ReminderFired: (
        "reminder_fired",
        lambda p: {"dose_id": p.dose_id, "kind": p.kind, "number": p.number},
    ),
    DoseSnoozed: ("dose_snoozed", lambda p: {"dose_id": p.dose_id}),
    DoseTaken: ("dose_taken", lambda p: {"dose_id": p.dose_id}),
    DoseSkipped: ("dose_skipped", lambda p: {"dose_id": p.dose_id, "reason": p.reason}),
    DoseExpired: ("dose_expired", lambda p: {"dose_id": p.dose_id}),
    CheckInRecorded: ("checkin_recorded", lambda p: {"checkin": _encode_checkin(p.checkin)}),
    AlertRaised: ("alert_raised", lambda p: {"alert": _encode_alert(p.alert)}),
    AlertAcked: ("alert_acked", lambda p: {"alert_id": p.alert_id}),
    InterventionAppended: (
        "intervention_appended",
        lambda p: {
            "provider_id": p.message.provider_id,
            "sender": p.message.sender.value,
            "body": p.message.body,
            "sent_at": _iso(p.message.sent_at),
        },
    ),
    AppointmentRequested: ("appointment_requested", lambda p: {"note": p.note}),
    SessionReplaced: ("session_replaced", lambda p: {"session": _encode_session(p.session)}),
    DeliveryRecorded: (
        "delivery_recorded",
        lambda p: {
            "message_id": p.message_id,
            "channel": p.channel,
            "status": p.status,
            "attempt": p.attempt,
            "body": p.body,
            "quick_replies": [list(qr) for qr in p.quick_replies],
            "card": None if p.card is None else dict(p.card),
            "wire": None if p.wire is None else dict(p.wire),
        },
    ),
}

_TYPE_TAGS = {cls: tag for cls, (tag, _) in _ENCODERS.items()}


def payload_type(payload: EventPayload) -> str:
    return _TYPE_TAGS[type(payload)]


def _decode_payload(tag: str, patient_id: str, data: Mapping) -> EventPayload:
    if tag == "patient_registered":
        return PatientRegistered(_decode_profile(data["profile"]))
    if tag == "chat_registered":
        return ChatRegistered(data["channel"], data["external_chat_id"])
    if tag == "profile_updated":
        return ProfileUpdated(_decode_profile_changes(data["changes"]))
    if tag == "medication_saved":
        return MedicationSaved(_decode_medication(data["medication"]))
    if tag == "dose_scheduled":
        return DoseScheduled(data["dose_id"], data["medication_id"], _dt(data["due_at"]))
    if tag == "reminder_fired":
        return ReminderFired(data["dose_id"], data["kind"], data["number"])
    if tag == "dose_snoozed":
        return DoseSnoozed(data["dose_id"])
    if tag == "dose_taken":
        return DoseTaken(data["dose_id"])
    if tag == "dose_skipped":
        return DoseSkipped(data["dose_id"], data.get("reason"))
    if tag == "dose_expired":
        return DoseExpired(data["dose_id"])
    if tag == "checkin_recorded":
        return CheckInRecorded(_decode_checkin(data["checkin"]))
    if tag == "alert_raised":
        return AlertRaised(_decode_alert(data["alert"]))
    if tag == "alert_acked":
        return AlertAcked(data["alert_id"])
    if tag == "intervention_appended":
        return InterventionAppended(
            InterventionMessage(
                patient_id=patient_id,
                provider_id=data["provider_id"],
                sender=SenderRole(data["sender"]),
                body=data["body"],
                sent_at=_dt(data["sent_at"]),
            )
        )
    if tag == "appointment_requested":
        return AppointmentRequested(data["note"])
    if tag == "session_replaced":
        return SessionReplaced(_decode_session(patient_id, data["session"]))
    if tag == "delivery_recorded":
        return DeliveryRecorded(
            message_id=data["message_id"],
            channel=data["channel"],
            status=data["status"],
            attempt=data["attempt"],
            body=data["body"],
            quick_replies=tuple((qr[0], qr[1]) for qr in data.get("quick_replies", ())),
            card=data.get("card"),
            wire=data.get("wire"),
        )
    raise CorruptLog(0, f"unknown event type tag '{tag}'")


def encode_event(event: DomainEvent) -> str:
    tag, encode = _ENCODERS[type(event.payload)]
    record = {
        "seq": event.seq,
        "at": _iso(event.at),
        "patient_id": event.patient_id,
        "type": tag,
        "data": encode(event.payload),
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def decode_event(line: str) -> DomainEvent:
    record = json.loads(line)
    return DomainEvent(
        seq=record["seq"],
        at=_dt(record["at"]),
        patient_id=record["patient_id"],
        payload=_decode_payload(record["type"], record["patient_id"], record["data"]),
    )


# ---------------------------------------------------------------------------
# views


@dataclass
class PatientState:
    profile: PatientProfile
    registered_at: datetime
    session: ConversationSession
    last_activity_at: datetime
    medications: dict[str, Medication] = field(default_factory=dict)
    doses: dict[str, ScheduledDose] = field(default_factory=dict)
    dose_counts: dict[str, int] = field(default_factory=dict)
    checkins: list[CheckIn] = field(default_factory=list)
    thread: list[InterventionMessage] = field(default_factory=list)
    appointments: list[tuple[datetime, str]] = field(default_factory=list)
    outbound_count: int = 0

    def copy(self) -> "PatientState":
        return PatientState(
            profile=self.profile,
            registered_at=self.registered_at,
            session=self.session,
            last_activity_at=self.last_activity_at,
            medications=dict(self.medications),
            doses=dict(self.doses),
            dose_counts=dict(self.dose_counts),
            checkins=list(self.checkins),
            thread=list(self.thread),
            appointments=list(self.appointments),
            outbound_count=self.outbound_count,
        )


@dataclass(frozen=True)
class DeliveryView:
    seq: int
    at: datetime
    patient_id: str
    record: DeliveryRecorded


@dataclass
class Views:
    patients: dict[str, PatientState] = field(default_factory=dict)
    registrations: dict[tuple[str, str], str] = field(default_factory=dict)
    channels: dict[str, tuple[str, str]] = field(default_factory=dict)
    alerts: dict[str, Alert] = field(default_factory=dict)
    alert_counts: dict[str, int] = field(default_factory=dict)
    deliveries: list[DeliveryView] = field(default_factory=list)
    last_seq: int = 0

    @classmethod
    def empty(cls) -> "Views":
        return cls()

    def copy(self) -> "Views":
        return Views(
            patients={pid: ps.copy() for pid, ps in self.patients.items()},
            registrations=dict(self.registrations),
            channels=dict(self.channels),
            alerts=dict(self.alerts),
            alert_counts=dict(self.alert_counts),
            deliveries=list(self.deliveries),
            last_seq=self.last_seq,
        )

    # -- the fold ------------------------------------------------------------

    def apply(self, event: DomainEvent) -> None:
        payload = event.payload
        pid = event.patient_id
        self.last_seq = event.seq

        if isinstance(payload, PatientRegistered):
            self.patients[pid] = PatientState(
                profile=payload.profile,
                registered_at=event.at,
                session=ConversationSession(pid),
                last_activity_at=event.at,
            )
            return

        state = self.patients.get(pid)
        if state is None:
            raise CorruptLog(event.seq, f"event for unregistered patient '{pid}'")
        state.last_activity_at = event.at

        if isinstance(payload, ChatRegistered):
            self.registrations[(payload.channel, payload.external_chat_id)] = pid
            self.channels[pid] = (payload.channel, payload.external_chat_id)
        elif isinstance(payload, ProfileUpdated):
            state.profile = replace(state.profile, **dict(payload.changes))
        elif isinstance(payload, MedicationSaved):
            state.medications[payload.medication.medication_id] = payload.medication
        elif isinstance(payload, DoseScheduled):
            state.doses[payload.dose_id] = ScheduledDose(
                dose_id=payload.dose_id,
                medication_id=payload.medication_id,
                due_at=payload.due_at,
                state=Pending(),
            )
            count = self.patients[pid].dose_counts
            count[payload.medication_id] = count.get(payload.medication_id, 0) + 1
        elif isinstance(payload, ReminderFired):
            if payload.kind in ("initial", "repeat"):
                dose = state.doses[payload.dose_id]
                state.doses[payload.dose_id] = replace(
                    dose, state=Reminded(count=payload.number, last_reminded_at=event.at)
                )
        elif isinstance(payload, DoseSnoozed):
            dose = state.doses[payload.dose_id]
            if isinstance(dose.state, Reminded):
                state.doses[payload.dose_id] = replace(
                    dose, state=replace(dose.state, last_reminded_at=event.at)
                )
        elif isinstance(payload, DoseTaken):
            dose = state.doses[payload.dose_id]
            state.doses[payload.dose_id] = replace(dose, state=Taken(at=event.at))
        elif isinstance(payload, DoseSkipped):
            dose = state.doses[payload.dose_id]
            state.doses[payload.dose_id] = replace(
                dose, state=Skipped(at=event.at, reason=payload.reason)
            )
        elif isinstance(payload, DoseExpired):
            dose = state.doses[payload.dose_id]
            state.doses[payload.dose_id] = replace(dose, state=Missed(at=event.at))
        elif isinstance(payload, CheckInRecorded):
            state.checkins.append(payload.checkin)
        elif isinstance(payload, AlertRaised):
            self.alerts[payload.alert.alert_id] = payload.alert
            self.alert_counts[pid] = self.alert_counts.get(pid, 0) + 1
        elif isinstance(payload, AlertAcked):
            alert = self.alerts.get(payload.alert_id)
            if alert is not None:
                self.alerts[payload.alert_id] = alert.acknowledge()
        elif isinstance(payload, InterventionAppended):
            state.thread.append(payload.message)
        elif isinstance(payload, AppointmentRequested):
            state.appointments.append((event.at, payload.note))
        elif isinstance(payload, SessionReplaced):
            state.session = payload.session
        elif isinstance(payload, DeliveryRecorded):
            self.deliveries.append(DeliveryView(event.seq, event.at, pid, payload))
            if payload.attempt == 1:
                state.outbound_count += 1


def replay(events: Iterable[DomainEvent]) -> Views:
    """Deterministic fold of a well-ordered log into current-state views."""
    views = Views.empty()
    last = 0
    for event in events:
        if event.seq != last + 1:
            raise CorruptLog(event.seq, f"expected seq {last + 1}")
        views.apply(event)
        last = event.seq
    return views


def query(
    events: Sequence[DomainEvent],
    *,
    patient_id: str | None = None,
    kinds: Iterable[str] | None = None,
    window: tuple[datetime, datetime] | None = None,
) -> list[DomainEvent]:
    """Exact-match filter on patient and type tags, half-open [start, end)
    filter on `at`; results sorted by (at, seq)."""
    wanted = None if kinds is None else set(kinds)
    out = []
    for event in events:
        if patient_id is not None and event.patient_id != patient_id:
            continue
        if wanted is not None and event.type_tag not in wanted:
            continue
        if window is not None and not window[0] <= event.at < window[1]:
            continue
        out.append(event)
    out.sort(key=lambda e: (e.at, e.seq))
    return out


# ---------------------------------------------------------------------------
# the store


_HEADER = '{"format":"roberto-log","version":1}'


class EventStore:
    """Durable append-only log with incrementally maintained views.

    Thread model: seq assignment and view mutation are globally serialized
    under one lock; `patient_apply` hands out the per-patient mutex that
    serializes command application for one patient (the dialogue engine's
    one-update-in-flight guarantee). Reads work on snapshot copies.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = None if path is None else Path(path)
        self._lock = threading.RLock()
        self._patient_locks: dict[str, threading.RLock] = {}
        self._events: list[DomainEvent] = []
        self._views = Views.empty()
        self._fh = None
        if self._path is not None:
            self._open()

    # -- persistence -----------------------------------------------------------

    def _open(self) -> None:
        path = self._path
        if path.exists():
            raw = path.read_bytes()
            lines = raw.split(b"\n")
            # a missing trailing newline marks an unacknowledged partial write
            complete, partial = (lines[:-1], lines[-1]) if lines[-1] else (lines[:-1], b"")
            if not complete:
                raise CorruptLog(0, "missing header line")
            if complete[0].decode("utf-8") != _HEADER:
                raise CorruptLog(0, "bad header line")
            last = 0
            for line in complete[1:]:
                try:
                    event = decode_event(line.decode("utf-8"))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise CorruptLog(last + 1, f"undecodable record: {exc}") from exc
                if event.seq != last + 1:
                    raise CorruptLog(event.seq, f"expected seq {last + 1}")
                self._events.append(event)
                self._views.apply(event)
                last = event.seq
            if partial:
                good = len(raw) - len(partial)
                with open(path, "r+b") as fh:
                    fh.truncate(good)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(_HEADER.encode("utf-8") + b"\n")
                fh.flush()
                os.fsync(fh.fileno())
        self._fh = open(path, "ab")

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    # -- writes ---------------------------------------------------------------

    def append(self, patient_id: str, payload: EventPayload, at: datetime) -> DomainEvent:
        """Assign the next seq, persist durably, update views, return the event."""
        with self._lock:
            event = DomainEvent(self._views.last_seq + 1, at, patient_id, payload)
            if self._fh is not None:
                try:
                    self._fh.write(encode_event(event).encode("utf-8") + b"\n")
                    self._fh.flush()
                    os.fsync(self._fh.fileno())
                except OSError as exc:
                    raise StorageFailure(str(exc)) from exc
            self._events.append(event)
            self._views.apply(event)
            return event

    @contextmanager
    def patient_apply(self, patient_id: str):
        """Ordered apply token: at most one holder per patient at a time."""
        with self._lock:
            lock = self._patient_locks.setdefault(patient_id, threading.RLock())
        with lock:
            yield

    # -- reads ------------------------------------------------------------------

    def events(self) -> tuple[DomainEvent, ...]:
        with self._lock:
            return tuple(self._events)

    def snapshot(self) -> Views:
        with self._lock:
            return self._views.copy()

    def query(self, **kwargs) -> list[DomainEvent]:
        return query(self.events(), **kwargs)

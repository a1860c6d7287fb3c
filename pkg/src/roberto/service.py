"""The running service: wires store, dialogue engine, scheduler, knowledge
base, and outbound channels behind one object the gateway and CLI drive.

Concurrency: inbound updates and the clock tick funnel every mutation
through the store's per-patient apply token, so one patient's updates are
processed strictly in receipt order while different patients proceed in
parallel. The clock is injected; tests and `simulate` use a virtual one.
"""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Mapping, Protocol

from . import analytics, scheduler
from .analytics import AdherenceReport, Window, classify_stage, consecutive_taken
from .clock import Clock, WallClock
from .config import ServiceConfig, read_flows_text, read_kb_text, read_templates_text
from .dialogue import (
    AppendIntervention,
    ConversationSession,
    DialogueContext,
    DialogueEngine,
    DialogueResult,
    DomainCommand,
    Inbound,
    OutboundMessage,
    RaiseAlert,
    RecordDoseEvent,
    RequestAppointment,
    SaveCheckIn,
    SaveMedication,
    SnoozeDose,
    UpdateProfile,
    feedback_for,
    load_flows,
    load_templates,
    render_dose_card,
)
from .domain import (
    Alert,
    AlertKind,
    DomainError,
    InterventionMessage,
    Medication,
    PatientProfile,
    Remind,
    ReportSkipped,
    ReportTaken,
    ScheduledDose,
    SenderRole,
    Severity,
    Taken,
    transition_dose,
)
from .kb import load_kb
from .scheduler import ReminderEvent, ReminderKind, ScheduleEntry, UnresolvableLocalTime, next_due
from .store import (
    AlertAcked,
    AlertRaised,
    AppointmentRequested,
    ChatRegistered,
    CheckInRecorded,
    DeliveryRecorded,
    DoseExpired,
    DoseScheduled,
    DoseSkipped,
    DoseSnoozed,
    DoseTaken,
    EventStore,
    InterventionAppended,
    MedicationSaved,
    PatientRegistered,
    ProfileUpdated,
    ReminderFired,
    SessionReplaced,
    Views,
)

logger = logging.getLogger(__name__)


class ChannelUnavailable(Exception):
    pass


class UnknownPatient(Exception):
    pass


class UnknownAlert(Exception):
    pass


@dataclass(frozen=True)
class NormalizedUpdate:
    channel: str  # webhook | console
    external_chat_id: str
    patient_id: str
    kind: Inbound
    received_at: datetime


# ---------------------------------------------------------------------------
# outbound channels


class OutboundChannel(Protocol):
    name: str

    def deliver(self, external_chat_id: str, message: OutboundMessage) -> Mapping[str, object]:
        """Send and return the wire payload; raises ChannelUnavailable."""
        ...


def render_console(message: OutboundMessage) -> str:
    """Deterministic textual rendering used by the console channel and the
    simulate transcript."""
    lines = []
    if message.card is not None:
        card = message.card
        lines.append(f"card: {card.title} | {card.medication_name} | {card.dose} | due {card.due_local}")
    lines.extend(message.body.splitlines() or [""])
    if message.quick_replies:
        lines.append("buttons: " + " ".join(f"[{qr.label}]({qr.token})" for qr in message.quick_replies))
    return "\n".join(lines)


class ConsoleChannel:
    """Prints (or collects) a deterministic rendering; always available."""

    name = "console"

    def __init__(self, sink=print):
        self.sink = sink

    def deliver(self, external_chat_id: str, message: OutboundMessage) -> Mapping[str, object]:
        rendering = render_console(message)
        self.sink(rendering)
        return {"rendering": rendering}


def telegram_wire(chat_id: str, message: OutboundMessage) -> dict:
    """Serialize to the documented channel wire schema (sendMessage subset,
    quick replies as inline keyboard rows of up to three buttons)."""
    payload: dict = {"method": "sendMessage", "chat_id": chat_id, "text": message.body}
    if message.quick_replies:
        buttons = [{"text": qr.label, "callback_data": qr.token} for qr in message.quick_replies]
        payload["reply_markup"] = {
            "inline_keyboard": [buttons[i : i + 3] for i in range(0, len(buttons), 3)]
        }
    return payload


class WebhookChannel:
    """Adapter standing in for the chat-channel server: serializes messages
    to the wire schema and hands them to `poster` (None records only)."""

    name = "webhook"

    def __init__(self, poster=None):
        self.poster = poster

    def deliver(self, external_chat_id: str, message: OutboundMessage) -> Mapping[str, object]:
        wire = telegram_wire(external_chat_id, message)
        if self.poster is not None:
            try:
                self.poster(wire)
            except Exception as exc:  # network-ish failure: let the retry queue handle it
                raise ChannelUnavailable(str(exc)) from exc
        return wire


@dataclass
class _PendingDelivery:
    patient_id: str
    message_id: str
    message: OutboundMessage
    attempt: int
    next_attempt_at: datetime


# ---------------------------------------------------------------------------
# the service


class RobertoService:
    def __init__(
        self,
        config: ServiceConfig | None = None,
        *,
        clock: Clock | None = None,
        store: EventStore | None = None,
        channels: Iterable[OutboundChannel] | None = None,
        engine: DialogueEngine | None = None,
    ):
        self.config = config or ServiceConfig()
        self.clock = clock or WallClock()
        self.store = store or EventStore(self.config.log_path)
        self.kb = load_kb(read_kb_text(self.config))
        # the conversation-intelligence seam: anything with the engine's
        # handle_update / start_onboarding / note_dose_card surface fits here
        self.engine = engine or DialogueEngine(
            load_flows(read_flows_text(self.config)),
            load_templates(read_templates_text(self.config)),
            self.kb,
            page_chars=self.config.page_chars,
            milestone_streak=self.config.analytics.milestone_streak,
        )
        channel_list = list(channels) if channels is not None else [ConsoleChannel(), WebhookChannel()]
        self.channels: dict[str, OutboundChannel] = {ch.name: ch for ch in channel_list}
        self._registration_lock = threading.Lock()
        self._dedup_lock = threading.Lock()
        self._seen_update_ids: OrderedDict[object, None] = OrderedDict()
        self._redelivery_lock = threading.Lock()
        self._redelivery: list[_PendingDelivery] = []

    # -- inbound ---------------------------------------------------------------

    def ingest(
        self,
        channel: str,
        external_chat_id: str,
        inbound: Inbound,
        *,
        update_id: object | None = None,
        received_at: datetime | None = None,
    ) -> tuple[NormalizedUpdate | None, list[OutboundMessage]]:
        """Resolve (or register) the patient and process one update.

        Returns (normalized update, outbound messages); (None, []) when the
        update id was already seen (at-least-once channel semantics).
        """
        now = received_at or self.clock.now()
        if update_id is not None and self._already_seen(update_id):
            return None, []
        chat_key = (channel, str(external_chat_id))
        views = self.store.snapshot()
        patient_id = views.registrations.get(chat_key)
        if patient_id is None:
            patient_id, messages = self._register_chat(channel, str(external_chat_id), now)
            update = NormalizedUpdate(channel, str(external_chat_id), patient_id, inbound, now)
            return update, messages
        update = NormalizedUpdate(channel, str(external_chat_id), patient_id, inbound, now)
        with self.store.patient_apply(patient_id):
            return update, self._process_locked(patient_id, inbound, now)

    def _already_seen(self, update_id: object) -> bool:
        with self._dedup_lock:
            if update_id in self._seen_update_ids:
                return True
            self._seen_update_ids[update_id] = None
            while len(self._seen_update_ids) > self.config.dedup_window:
                self._seen_update_ids.popitem(last=False)
            return False

    def _register_chat(self, channel: str, external_chat_id: str, now: datetime):
        """First contact: create the patient and open with Onboarding."""
        with self._registration_lock:
            views = self.store.snapshot()
            existing = views.registrations.get((channel, external_chat_id))
            if existing is not None:
                patient_id = existing
            else:
                patient_id = f"p{len(views.patients) + 1}"
                profile = PatientProfile(
                    patient_id=patient_id,
                    display_name=f"Patient {len(views.patients) + 1}",
                    timezone=self.config.default_timezone,
                    provider_id=self.config.default_provider_id,
                    reminder_prefs=self.config.default_prefs,
                )
                self.store.append(patient_id, PatientRegistered(profile), now)
                self.store.append(patient_id, ChatRegistered(channel, external_chat_id), now)
        with self.store.patient_apply(patient_id):
            views = self.store.snapshot()
            session = views.patients[patient_id].session
            result = self.engine.start_onboarding(session)
            return patient_id, self._apply_result(patient_id, session, result, now)

    def _context(self, views: Views, patient_id: str) -> DialogueContext:
        state = views.patients[patient_id]
        return DialogueContext(
            profile=state.profile,
            medications=state.medications,
            doses=state.doses,
            taken_streak=consecutive_taken(state.doses.values()),
        )

    def _process_locked(self, patient_id: str, inbound: Inbound, now: datetime) -> list[OutboundMessage]:
        views = self.store.snapshot()
        session = views.patients[patient_id].session
        result = self.engine.handle_update(session, inbound, now, self._context(views, patient_id))
        return self._apply_result(patient_id, session, result, now)

    def _apply_result(
        self,
        patient_id: str,
        prior_session: ConversationSession,
        result: DialogueResult,
        now: datetime,
    ) -> list[OutboundMessage]:
        extra: list[OutboundMessage] = []
        for command in result.commands:
            extra.extend(self._apply_command(patient_id, command, now))
        if result.session != prior_session:
            self.store.append(patient_id, SessionReplaced(result.session), now)
        outbound = list(result.messages) + extra
        for message in outbound:
            self._dispatch_quietly(message, now)
        return outbound

    # -- command application -----------------------------------------------------

    def _apply_command(self, patient_id: str, command: DomainCommand, now: datetime) -> list[OutboundMessage]:
        views = self.store.snapshot()
        state = views.patients[patient_id]
        prefs = state.profile.reminder_prefs

        if isinstance(command, RecordDoseEvent):
            dose = state.doses.get(command.dose_id)
            if dose is None:
                logger.warning("dose command for unknown dose %s", command.dose_id)
                return []
            try:
                updated = transition_dose(dose, command.event, now, prefs)
            except DomainError as exc:
                logger.warning("rejected dose event for %s: %s", command.dose_id, exc)
                return []
            if isinstance(command.event, ReportTaken):
                self.store.append(patient_id, DoseTaken(command.dose_id), now)
            elif isinstance(command.event, ReportSkipped):
                self.store.append(patient_id, DoseSkipped(command.dose_id, command.event.reason), now)
            else:
                logger.warning("dialogue may not emit %r", command.event)
                return []
            medication = state.medications.get(dose.medication_id)
            if medication is not None and updated.terminal:
                self._schedule_next_dose(patient_id, medication, after=dose.due_at)
            return []

        if isinstance(command, SnoozeDose):
            dose = state.doses.get(command.dose_id)
            if dose is None:
                logger.warning("snooze for unknown dose %s", command.dose_id)
                return []
            try:
                scheduler.apply_snooze(dose, now)
            except DomainError as exc:
                logger.warning("rejected snooze for %s: %s", command.dose_id, exc)
                return []
            self.store.append(patient_id, DoseSnoozed(command.dose_id), now)
            return []

        if isinstance(command, SaveMedication):
            self.store.append(patient_id, MedicationSaved(command.medication), now)
            self._schedule_next_dose(patient_id, command.medication, after=now)
            return []

        if isinstance(command, SaveCheckIn):
            self.store.append(patient_id, CheckInRecorded(command.checkin), now)
            return []

        if isinstance(command, RaiseAlert):
            self._raise_alert(patient_id, command.kind, command.severity, command.detail, now)
            return []

        if isinstance(command, AppendIntervention):
            message = InterventionMessage(
                patient_id=patient_id,
                provider_id=state.profile.provider_id,
                sender=SenderRole.PATIENT,
                body=command.body,
                sent_at=now,
            )
            self.store.append(patient_id, InterventionAppended(message), now)
            return []

        if isinstance(command, RequestAppointment):
            self.store.append(patient_id, AppointmentRequested(command.note), now)
            return []

        if isinstance(command, UpdateProfile):
            self.store.append(patient_id, ProfileUpdated(command.changes), now)
            return []

        raise TypeError(f"unknown domain command {command!r}")

    def _raise_alert(
        self,
        patient_id: str,
        kind: AlertKind,
        severity: Severity,
        detail: str | None,
        now: datetime,
        *,
        alert_id: str | None = None,
    ) -> Alert | None:
        views = self.store.snapshot()
        if alert_id is not None and alert_id in views.alerts:
            return None  # deterministic ids make re-raising a no-op
        if alert_id is None:
            alert_id = f"{patient_id}-a{views.alert_counts.get(patient_id, 0) + 1}"
        alert = Alert(alert_id, patient_id, kind, severity, created_at=now, detail=detail)
        self.store.append(patient_id, AlertRaised(alert), now)
        return alert

    def _schedule_next_dose(self, patient_id: str, medication: Medication, *, after: datetime) -> None:
        views = self.store.snapshot()
        state = views.patients[patient_id]
        open_doses = [
            d
            for d in state.doses.values()
            if d.medication_id == medication.medication_id and not d.terminal
        ]
        if open_doses:
            return
        try:
            due = next_due(medication.regimen, after, state.profile.tzinfo)
        except UnresolvableLocalTime as exc:
            logger.warning("cannot schedule %s: %s", medication.medication_id, exc)
            return
        if due is None:
            return  # regimen has ended
        count = state.dose_counts.get(medication.medication_id, 0) + 1
        dose_id = f"{medication.medication_id}-d{count}"
        self.store.append(
            patient_id, DoseScheduled(dose_id, medication.medication_id, due), self.clock.now()
        )

    # -- outbound ------------------------------------------------------------------

    def dispatch_outbound(self, message: OutboundMessage, now: datetime | None = None) -> str:
        """Deliver (or queue) one message; returns its delivery record id.

        Raises ChannelUnavailable when the patient has no registered channel
        or the channel rejects delivery; the message is then queued for
        redelivery with exponential backoff (max attempts from config) and
        remains visible as a delivery record either way.
        """
        now = now or self.clock.now()
        views = self.store.snapshot()
        state = views.patients.get(message.patient_id)
        if state is None:
            raise UnknownPatient(message.patient_id)
        message_id = f"{message.patient_id}-o{state.outbound_count + 1}"
        registration = views.channels.get(message.patient_id)
        card = (
            None
            if message.card is None
            else {
                "title": message.card.title,
                "medication_name": message.card.medication_name,
                "dose": message.card.dose,
                "due_local": message.card.due_local,
            }
        )
        base = dict(
            message_id=message_id,
            body=message.body,
            quick_replies=tuple((qr.label, qr.token) for qr in message.quick_replies),
            card=card,
        )
        if registration is None:
            self.store.append(
                message.patient_id,
                DeliveryRecorded(channel="none", status="queued", attempt=1, wire=None, **base),
                now,
            )
            self._queue_redelivery(message.patient_id, message_id, message, 1, now)
            raise ChannelUnavailable(f"no registered channel for {message.patient_id}")
        channel_name, chat_id = registration
        channel = self.channels[channel_name]
        try:
            wire = channel.deliver(chat_id, message)
        except ChannelUnavailable:
            self.store.append(
                message.patient_id,
                DeliveryRecorded(channel=channel_name, status="queued", attempt=1, wire=None, **base),
                now,
            )
            self._queue_redelivery(message.patient_id, message_id, message, 1, now)
            raise
        self.store.append(
            message.patient_id,
            DeliveryRecorded(channel=channel_name, status="delivered", attempt=1, wire=dict(wire), **base),
            now,
        )
        return message_id

    def _dispatch_quietly(self, message: OutboundMessage, now: datetime) -> None:
        try:
            self.dispatch_outbound(message, now)
        except ChannelUnavailable:
            pass  # queued; the tick loop retries

    def _queue_redelivery(
        self, patient_id: str, message_id: str, message: OutboundMessage, attempt: int, now: datetime
    ) -> None:
        if attempt >= self.config.redelivery_max_attempts:
            return
        delay = self.config.redelivery_base_seconds * (2 ** (attempt - 1))
        entry = _PendingDelivery(patient_id, message_id, message, attempt, now + timedelta(seconds=delay))
        with self._redelivery_lock:
            self._redelivery.append(entry)

    def _retry_deliveries(self, now: datetime) -> None:
        with self._redelivery_lock:
            due = [e for e in self._redelivery if e.next_attempt_at <= now]
            self._redelivery = [e for e in self._redelivery if e.next_attempt_at > now]
        for entry in sorted(due, key=lambda e: (e.patient_id, e.message_id)):
            attempt = entry.attempt + 1
            views = self.store.snapshot()
            registration = views.channels.get(entry.patient_id)
            base = dict(
                message_id=entry.message_id,
                body=entry.message.body,
                quick_replies=tuple((qr.label, qr.token) for qr in entry.message.quick_replies),
                card=None,
            )
            with self.store.patient_apply(entry.patient_id):
                if registration is not None:
                    channel_name, chat_id = registration
                    try:
                        wire = self.channels[channel_name].deliver(chat_id, entry.message)
                    except ChannelUnavailable:
                        wire = None
                    if wire is not None:
                        self.store.append(
                            entry.patient_id,
                            DeliveryRecorded(
                                channel=channel_name, status="delivered", attempt=attempt,
                                wire=dict(wire), **base,
                            ),
                            now,
                        )
                        continue
                status = "failed" if attempt >= self.config.redelivery_max_attempts else "queued"
                self.store.append(
                    entry.patient_id,
                    DeliveryRecorded(channel="none", status=status, attempt=attempt, wire=None, **base),
                    now,
                )
                if status == "queued":
                    self._queue_redelivery(entry.patient_id, entry.message_id, entry.message, attempt, now)

    # -- the clock loop ---------------------------------------------------------------

    def run_tick(self, now: datetime | None = None) -> list[ReminderEvent]:
        """One scheduler pass: fire reminders, expire unanswered doses,
        escalate misses, watch week-over-week deterioration, retry queued
        deliveries. Safe at any polling interval up to a minute."""
        now = now or self.clock.now()
        views = self.store.snapshot()

        # materialize missing next doses (normally done as doses terminate)
        for patient_id in sorted(views.patients):
            state = views.patients[patient_id]
            with self.store.patient_apply(patient_id):
                for med_id in sorted(state.medications):
                    medication = state.medications[med_id]
                    last_due = max(
                        (d.due_at for d in state.doses.values() if d.medication_id == med_id),
                        default=now,
                    )
                    self._schedule_next_dose(patient_id, medication, after=max(last_due, now - timedelta(days=1)))

        views = self.store.snapshot()
        book = [
            ScheduleEntry(
                patient_id=pid,
                dose=dose,
                prefs=state.profile.reminder_prefs,
                tz=state.profile.tzinfo,
            )
            for pid, state in sorted(views.patients.items())
            for dose in state.doses.values()
            if not dose.terminal
        ]
        result = scheduler.tick(now, book)
        reminder_by_dose = {(r.patient_id, r.dose_id): r for r in result.reminders}
        fired: list[ReminderEvent] = []

        for transition in result.transitions:
            patient_id = transition.patient_id
            with self.store.patient_apply(patient_id):
                views = self.store.snapshot()
                state = views.patients[patient_id]
                dose = state.doses[transition.dose_id]
                if dose.terminal:
                    continue
                try:
                    updated = transition_dose(dose, transition.event, now, state.profile.reminder_prefs)
                except DomainError as exc:
                    logger.warning("tick transition rejected for %s: %s", transition.dose_id, exc)
                    continue
                if isinstance(transition.event, Remind):
                    reminder = reminder_by_dose[(patient_id, transition.dose_id)]
                    number = reminder.repeat_n or 1
                    self.store.append(
                        patient_id, ReminderFired(transition.dose_id, reminder.kind.value, number), now
                    )
                    fired.append(reminder)
                    self._send_dose_card(patient_id, updated, state, now)
                else:  # Expire
                    self.store.append(patient_id, DoseExpired(transition.dose_id), now)
                    fired.extend(self._handle_missed(patient_id, updated, now))
                    medication = state.medications.get(dose.medication_id)
                    if medication is not None:
                        self._schedule_next_dose(patient_id, medication, after=dose.due_at)

        for patient_id in sorted(views.patients):
            with self.store.patient_apply(patient_id):
                self._watch_adherence(patient_id, now)

        self._retry_deliveries(now)
        return fired

    def _send_dose_card(self, patient_id: str, dose: ScheduledDose, state, now: datetime) -> None:
        medication = state.medications.get(dose.medication_id)
        if medication is None:
            return
        card = render_dose_card(
            patient_id,
            dose,
            medication,
            state.profile.tzinfo,
            body_template=self.engine.templates.templates["dose_card_body"],
        )
        session = state.session
        moved = self.engine.note_dose_card(session, dose.dose_id)
        if moved != session:
            self.store.append(patient_id, SessionReplaced(moved), now)
        self._dispatch_quietly(card, now)

    def _handle_missed(self, patient_id: str, dose: ScheduledDose, now: datetime) -> list[ReminderEvent]:
        """Missed feedback to the patient plus streak escalation to the provider."""
        templates = self.engine.templates
        body = templates.feedback[feedback_for("missed", 0)]
        self._dispatch_quietly(OutboundMessage(patient_id, body), now)

        views = self.store.snapshot()
        history = [
            d
            for d in views.patients[patient_id].doses.values()
            if d.dose_id != dose.dose_id
        ]
        alert = scheduler.escalation_for(
            patient_id,
            dose,
            history,
            streak_medium=self.config.escalation.streak_medium,
            streak_high=self.config.escalation.streak_high,
        )
        if alert is None or alert.alert_id in views.alerts:
            return []
        self.store.append(patient_id, AlertRaised(alert), now)
        self._dispatch_quietly(OutboundMessage(patient_id, templates.templates["escalation_notice"]), now)
        return [ReminderEvent(patient_id, dose.dose_id, ReminderKind.ESCALATION, fire_at=now)]

    def _watch_adherence(self, patient_id: str, now: datetime) -> None:
        views = self.store.snapshot()
        state = views.patients[patient_id]
        open_drop = any(
            a.kind is AlertKind.ADHERENCE_DROP and not a.acknowledged
            for a in views.alerts.values()
            if a.patient_id == patient_id
        )
        if open_drop:
            return
        buckets = self._day_buckets(state, now, days=self.config.analytics.drop_window_days)
        if buckets is None:
            return
        try:
            alert = analytics.detect_adherence_drop(
                patient_id,
                buckets,
                now,
                drop_delta=self.config.analytics.drop_delta,
                floor_rate=self.config.analytics.floor_rate,
            )
        except analytics.InsufficientHistory:
            return
        if alert is not None and alert.alert_id not in views.alerts:
            self.store.append(patient_id, AlertRaised(alert), now)

    def _day_buckets(self, state, now: datetime, *, days: int):
        """Terminal doses bucketed per complete local day, newest day yesterday."""
        tz = state.profile.tzinfo
        today = now.astimezone(tz).date()
        first = today - timedelta(days=days)
        if state.registered_at.astimezone(tz).date() > first:
            return None  # not enough tenure for the comparison yet
        counts: dict = {first + timedelta(days=i): [0, 0] for i in range(days)}
        for dose in state.doses.values():
            if not dose.terminal:
                continue
            day = dose.due_at.astimezone(tz).date()
            if day in counts:
                counts[day][0] += 1
                if isinstance(dose.state, Taken):
                    counts[day][1] += 1
        return [
            analytics.DayBucket(day=d, due=c[0], taken=c[1]) for d, c in sorted(counts.items())
        ]

    # -- provider API ------------------------------------------------------------------

    def _patient_state(self, patient_id: str):
        views = self.store.snapshot()
        state = views.patients.get(patient_id)
        if state is None:
            raise UnknownPatient(patient_id)
        return views, state

    def list_patients(self, now: datetime | None = None) -> list[dict]:
        now = now or self.clock.now()
        views = self.store.snapshot()
        rows = []
        for patient_id in sorted(views.patients):
            state = views.patients[patient_id]
            window = Window(now - timedelta(days=self.config.analytics.rate_window_days), now)
            rate = analytics.adherence_rate(state.doses.values(), window)
            stage = classify_stage(
                tenure_days=max((now - state.registered_at).days, 0),
                medications_count=len(state.medications),
                rate_7d=rate,
                sustain_rate=self.config.analytics.sustain_rate,
            )
            open_alerts = [
                a for a in views.alerts.values() if a.patient_id == patient_id and not a.acknowledged
            ]
            rows.append(
                {
                    "patient_id": patient_id,
                    "display_name": state.profile.display_name,
                    "stage": stage.value,
                    "stage_label": analytics.STAGE_LABELS[stage],
                    "rate_7d": rate,
                    "open_alerts": len(open_alerts),
                    "open_high_alerts": sum(1 for a in open_alerts if a.severity is Severity.HIGH),
                    "last_activity_at": state.last_activity_at.isoformat(),
                }
            )
        return rows

    def get_report(self, patient_id: str, window: Window) -> AdherenceReport:
        views, state = self._patient_state(patient_id)
        open_alerts = sum(
            1 for a in views.alerts.values() if a.patient_id == patient_id and not a.acknowledged
        )
        return analytics.build_report(
            patient_id,
            window,
            doses=list(state.doses.values()),
            checkins=list(state.checkins),
            open_alert_count=open_alerts,
            medications_count=len(state.medications),
            registered_at=state.registered_at,
            sustain_rate=self.config.analytics.sustain_rate,
        )

    def list_alerts(
        self,
        *,
        patient_id: str | None = None,
        kind: AlertKind | None = None,
        acknowledged: bool | None = None,
    ) -> list[Alert]:
        views = self.store.snapshot()
        alerts = [
            a
            for a in views.alerts.values()
            if (patient_id is None or a.patient_id == patient_id)
            and (kind is None or a.kind is kind)
            and (acknowledged is None or a.acknowledged == acknowledged)
        ]
        alerts.sort(key=lambda a: (a.created_at, a.alert_id))
        return alerts

    def ack_alert(self, alert_id: str, now: datetime | None = None) -> Alert:
        """Acknowledge once; acking an acknowledged alert is idempotent success."""
        now = now or self.clock.now()
        views = self.store.snapshot()
        alert = views.alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(alert_id)
        if alert.acknowledged:
            return alert
        with self.store.patient_apply(alert.patient_id):
            self.store.append(alert.patient_id, AlertAcked(alert_id), now)
        return self.store.snapshot().alerts[alert_id]

    def get_thread(self, patient_id: str) -> list[InterventionMessage]:
        _, state = self._patient_state(patient_id)
        return sorted(state.thread, key=lambda m: m.sent_at)  # stable: insertion order ties

    def post_intervention(self, patient_id: str, body: str, now: datetime | None = None) -> InterventionMessage:
        now = now or self.clock.now()
        _, state = self._patient_state(patient_id)
        message = InterventionMessage(
            patient_id=patient_id,
            provider_id=state.profile.provider_id,
            sender=SenderRole.PROVIDER,
            body=body,
            sent_at=now,
        )
        with self.store.patient_apply(patient_id):
            self.store.append(patient_id, InterventionAppended(message), now)
            notice = self.engine.templates.text("provider_message", body=body)
            self._dispatch_quietly(OutboundMessage(patient_id, notice), now)
        return message

    TIMELINE_KINDS = (
        "dose_scheduled",
        "reminder_fired",
        "dose_taken",
        "dose_skipped",
        "dose_expired",
        "checkin_recorded",
    )

    def get_timeline(self, patient_id: str, window: Window) -> list[dict]:
        self._patient_state(patient_id)
        events = self.store.query(
            patient_id=patient_id,
            kinds=self.TIMELINE_KINDS,
            window=(window.start, window.end),
        )
        out = []
        for event in events:
            item: dict = {"at": event.at.isoformat(), "type": event.type_tag}
            payload = event.payload
            if isinstance(payload, DoseScheduled):
                item.update(dose_id=payload.dose_id, medication_id=payload.medication_id,
                            due_at=payload.due_at.isoformat())
            elif isinstance(payload, ReminderFired):
                item.update(dose_id=payload.dose_id, kind=payload.kind, number=payload.number)
            elif isinstance(payload, (DoseTaken, DoseExpired)):
                item.update(dose_id=payload.dose_id)
            elif isinstance(payload, DoseSkipped):
                item.update(dose_id=payload.dose_id, reason=payload.reason)
            elif isinstance(payload, CheckInRecorded):
                c = payload.checkin
                item.update(mood=c.mood, stress=c.stress, sleep_hours=c.sleep_hours,
                            symptoms=list(c.symptoms))
            out.append(item)
        return out

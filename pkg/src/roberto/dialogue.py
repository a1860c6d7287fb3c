"""Per-patient finite-state conversation manager.

Flows are data (see data/flows.yaml): each flow is a list of steps with a
prompt, an expected slot kind, and optional quick-reply options. The engine
interprets inbound text / callback tokens against the active flow and emits
outbound messages plus domain commands; it never performs side effects
itself and never reads the clock.

Callback token families:
  dose:<dose_id>:<taken|skipped|snooze>   reminder-card buttons (work anywhere)
  opt:<value>                             answer to the current step
  confirm:<yes|no>                        confirm-step buttons
  menu:<flow>|info                        main-menu buttons (Idle only)
  info:<doc_id>:<cursor>                  open/continue an info document
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import time
from enum import Enum
from typing import Mapping, Union
from zoneinfo import ZoneInfo

import yaml

from . import kb as kb_mod
from .domain import (
    AlertKind,
    CheckIn,
    DoseEvent,
    LocalTimeInterval,
    Medication,
    PatientProfile,
    Reminded,
    ReminderPrefs,
    ReportSkipped,
    ReportTaken,
    ScheduledDose,
    Severity,
    WEEKDAY_NAMES,
    validate_medication,
)
from .kb import InfoDocument, IntentKind, KnowledgeBase

logger = logging.getLogger(__name__)


class IllegalState(Exception):
    """Operation asked of a dose state that cannot answer it."""


class CursorOutOfRange(Exception):
    pass


class FlowConfigError(Exception):
    """Flow table or template catalog failed validation at load."""


# ---------------------------------------------------------------------------
# messages


MAX_QUICK_REPLIES = 6


@dataclass(frozen=True)
class QuickReply:
    label: str
    token: str


@dataclass(frozen=True)
class DoseCard:
    title: str
    medication_name: str
    dose: str
    due_local: str


@dataclass(frozen=True)
class OutboundMessage:
    patient_id: str
    body: str
    quick_replies: tuple[QuickReply, ...] = ()
    card: DoseCard | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "quick_replies", tuple(self.quick_replies))
        if len(self.quick_replies) > MAX_QUICK_REPLIES:
            raise ValueError(f"at most {MAX_QUICK_REPLIES} quick replies per message")
        tokens = [qr.token for qr in self.quick_replies]
        if len(set(tokens)) != len(tokens):
            raise ValueError("callback tokens must be unique within a message")


# ---------------------------------------------------------------------------
# domain commands (the engine's only side-effect channel)


@dataclass(frozen=True)
class RecordDoseEvent:
    dose_id: str
    event: DoseEvent


@dataclass(frozen=True)
class SnoozeDose:
    dose_id: str


@dataclass(frozen=True)
class SaveMedication:
    medication: Medication


@dataclass(frozen=True)
class SaveCheckIn:
    checkin: CheckIn


@dataclass(frozen=True)
class RaiseAlert:
    kind: AlertKind
    severity: Severity
    detail: str | None = None


@dataclass(frozen=True)
class AppendIntervention:
    body: str


@dataclass(frozen=True)
class RequestAppointment:
    note: str


@dataclass(frozen=True)
class UpdateProfile:
    changes: Mapping[str, object]


DomainCommand = Union[
    RecordDoseEvent,
    SnoozeDose,
    SaveMedication,
    SaveCheckIn,
    RaiseAlert,
    AppendIntervention,
    RequestAppointment,
    UpdateProfile,
]


# ---------------------------------------------------------------------------
# sessions and flow tables


class Flow(str, Enum):
    IDLE = "idle"
    ONBOARDING = "onboarding"
    ADD_MEDICATION = "add_medication"
    DOSE_RESPONSE = "dose_response"
    CHECK_IN = "check_in"
    SYMPTOM_CHECK = "symptom_check"
    INFO_BROWSE = "info_browse"
    APPOINTMENT_REQUEST = "appointment_request"
    PROVIDER_CHAT = "provider_chat"


@dataclass(frozen=True)
class ConversationSession:
    patient_id: str
    flow: Flow = Flow.IDLE
    step: int = 0
    slots: Mapping[str, object] = field(default_factory=dict)


STEP_KINDS = {
    "text",
    "text_optional",
    "number",
    "choice",
    "timezone",
    "times",
    "days",
    "scale",
    "symptoms",
    "symptoms_required",
    "confirm",
    "wait",
    "relay",
    "paging",
}

# control steps capture no slot and must not advance like value steps
_CONTROL_KINDS = {"confirm", "wait", "relay", "paging"}


@dataclass(frozen=True)
class ChoiceOption:
    label: str
    value: object

    @property
    def token(self) -> str:
        return f"opt:{self.value}"


@dataclass(frozen=True)
class FlowStep:
    kind: str
    prompt: str
    help: str
    slot: str | None = None
    options: tuple[ChoiceOption, ...] = ()
    params: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class FlowSpec:
    flow: Flow
    steps: tuple[FlowStep, ...]
    extra_slots: tuple[str, ...] = ()

    @property
    def declared_slots(self) -> frozenset[str]:
        return frozenset(s.slot for s in self.steps if s.slot) | frozenset(self.extra_slots)


@dataclass(frozen=True)
class FlowTable:
    flows: Mapping[Flow, FlowSpec]

    def spec(self, flow: Flow) -> FlowSpec:
        return self.flows[flow]


_EXTRA_SLOTS = {
    Flow.DOSE_RESPONSE: ("dose_id",),
    Flow.INFO_BROWSE: ("doc_id", "cursor"),
}


def load_flows(text: str) -> FlowTable:
    """Parse and validate the flow tables; raises FlowConfigError."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise FlowConfigError(f"flow file is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("flows"), dict):
        raise FlowConfigError("flow file must be a mapping with a 'flows' section")
    flows: dict[Flow, FlowSpec] = {}
    for flow_name, spec in raw["flows"].items():
        try:
            flow = Flow(flow_name)
        except ValueError as exc:
            raise FlowConfigError(f"unknown flow '{flow_name}'") from exc
        if flow is Flow.IDLE:
            raise FlowConfigError("idle is not a scripted flow")
        steps_raw = (spec or {}).get("steps")
        if not steps_raw:
            raise FlowConfigError(f"{flow_name}: flow needs at least one step")
        steps: list[FlowStep] = []
        seen_slots: set[str] = set()
        for i, s in enumerate(steps_raw):
            where = f"{flow_name}.steps[{i}]"
            kind = s.get("kind")
            if kind not in STEP_KINDS:
                raise FlowConfigError(f"{where}: unknown step kind '{kind}'")
            slot = s.get("slot")
            if kind in _CONTROL_KINDS:
                if slot:
                    raise FlowConfigError(f"{where}: control steps capture no slot")
            elif not slot:
                raise FlowConfigError(f"{where}: value steps must declare a slot")
            if slot:
                if slot in seen_slots:
                    raise FlowConfigError(f"{where}: duplicate slot '{slot}'")
                seen_slots.add(slot)
            prompt = s.get("prompt", "")
            if not prompt and kind != "paging":
                raise FlowConfigError(f"{where}: prompt must be non-empty")
            options = tuple(
                ChoiceOption(label=str(o["label"]), value=o["value"])
                for o in (s.get("options") or ())
            )
            if len(options) > MAX_QUICK_REPLIES:
                raise FlowConfigError(f"{where}: at most {MAX_QUICK_REPLIES} options")
            if kind == "choice" and not options:
                raise FlowConfigError(f"{where}: choice steps need options")
            steps.append(
                FlowStep(
                    kind=kind,
                    prompt=prompt,
                    help=s.get("help", prompt),
                    slot=slot,
                    options=options,
                    params=dict(s.get("params") or {}),
                )
            )
        flows[flow] = FlowSpec(flow=flow, steps=tuple(steps), extra_slots=_EXTRA_SLOTS.get(flow, ()))
    missing = {f for f in Flow if f is not Flow.IDLE} - set(flows)
    if missing:
        raise FlowConfigError(f"missing flows: {sorted(f.value for f in missing)}")
    return FlowTable(flows=flows)


def session_problems(session: ConversationSession, table: FlowTable) -> list[str]:
    """Invariant violations for a session against the flow table."""
    problems = []
    if session.flow is Flow.IDLE:
        if session.step != 0:
            problems.append("idle sessions sit at step 0")
        if session.slots:
            problems.append("idle sessions carry no slots")
        return problems
    spec = table.spec(session.flow)
    if not 0 <= session.step < len(spec.steps):
        problems.append(f"step {session.step} outside {session.flow.value}'s {len(spec.steps)} steps")
    undeclared = set(session.slots) - spec.declared_slots
    if undeclared:
        problems.append(f"undeclared slots: {sorted(undeclared)}")
    return problems


# ---------------------------------------------------------------------------
# template catalog


BLAME_DENYLIST = ("fail", "bad", "blame", "should have")

REQUIRED_TEMPLATES = (
    "help",
    "fallback",
    "cancelled",
    "nothing_to_cancel",
    "onboarding_saved",
    "medication_saved",
    "medication_invalid",
    "checkin_saved",
    "symptom_results_header",
    "symptom_no_conditions",
    "disclaimer",
    "info_not_found",
    "info_index",
    "appointment_sent",
    "provider_chat_forwarded",
    "provider_chat_closed",
    "provider_message",
    "dose_card_body",
    "dose_already_recorded",
    "dose_snoozed",
    "dose_cannot_snooze",
    "escalation_notice",
)

REQUIRED_FEEDBACK = ("taken_ok", "taken_milestone", "skipped_support", "missed_checkin")

# feedback shown for outcomes a patient did not choose freely must never blame
_NO_BLAME_FEEDBACK = ("skipped_support", "missed_checkin")


@dataclass(frozen=True)
class TemplateCatalog:
    templates: Mapping[str, str]
    feedback: Mapping[str, str]

    def text(self, template_id: str, **values: object) -> str:
        return self.templates[template_id].format(**values)

    def feedback_text(self, template_id: str, **values: object) -> str:
        return self.feedback[template_id].format(**values)


def load_templates(text: str) -> TemplateCatalog:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise FlowConfigError(f"template file is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise FlowConfigError("template file must be a mapping")
    templates = raw.get("templates") or {}
    feedback = raw.get("feedback") or {}
    for tid in REQUIRED_TEMPLATES:
        if not str(templates.get(tid, "")).strip():
            raise FlowConfigError(f"missing template '{tid}'")
    for tid in REQUIRED_FEEDBACK:
        if not str(feedback.get(tid, "")).strip():
            raise FlowConfigError(f"missing feedback template '{tid}'")
    for tid in _NO_BLAME_FEEDBACK:
        lowered = feedback[tid].lower()
        for word in BLAME_DENYLIST:
            if word in lowered:
                raise FlowConfigError(f"feedback '{tid}' contains blame wording '{word}'")
    return TemplateCatalog(
        templates={k: str(v) for k, v in templates.items()},
        feedback={k: str(v) for k, v in feedback.items()},
    )


def feedback_for(outcome: str, taken_streak: int, *, milestone_streak: int = 7) -> str:
    """Template id for an adherence report outcome.

    A taken streak at or past milestone_streak earns the milestone template;
    skipped and missed outcomes always get supportive, no-blame copy.
    """
    if outcome == "taken":
        return "taken_milestone" if taken_streak >= milestone_streak else "taken_ok"
    if outcome == "skipped":
        return "skipped_support"
    if outcome == "missed":
        return "missed_checkin"
    raise ValueError(f"unknown outcome '{outcome}'")


# ---------------------------------------------------------------------------
# dose cards and info pagination


def render_dose_card(
    patient_id: str,
    dose: ScheduledDose,
    medication: Medication,
    tz: ZoneInfo,
    *,
    body_template: str = "Time for {name}: {dose}, due at {time}. Did you take it?",
) -> OutboundMessage:
    """The reminder card: medication, quantity, patient-local due time, and
    the three one-tap answers."""
    if dose.terminal:
        raise IllegalState(f"dose {dose.dose_id} is already resolved")
    due_local = dose.due_at.astimezone(tz).strftime("%H:%M")
    body = body_template.format(name=medication.name, dose=medication.dose_text, time=due_local)
    return OutboundMessage(
        patient_id=patient_id,
        body=body,
        quick_replies=(
            QuickReply("Taken", f"dose:{dose.dose_id}:taken"),
            QuickReply("Skipped", f"dose:{dose.dose_id}:skipped"),
            QuickReply("Snooze", f"dose:{dose.dose_id}:snooze"),
        ),
        card=DoseCard(
            title="Medication reminder",
            medication_name=medication.name,
            dose=medication.dose_text,
            due_local=due_local,
        ),
    )


def paginate_info(doc: InfoDocument, cursor: int, page_chars: int) -> tuple[str, int | None]:
    """One page of an info document, split on the last whitespace within
    page_chars (hard split when a single token is longer). Concatenating all
    pages reproduces the source exactly; the final page's next cursor is None.
    """
    if page_chars < 1:
        raise ValueError("page_chars must be >= 1")
    text = doc.body
    if not 0 <= cursor <= len(text):
        raise CursorOutOfRange(f"cursor {cursor} outside document of {len(text)} chars")
    rest = text[cursor:]
    if len(rest) <= page_chars:
        return rest, None
    window = rest[:page_chars]
    cut = max((i for i, ch in enumerate(window) if ch.isspace()), default=None)
    page = window if cut is None else window[: cut + 1]
    return page, cursor + len(page)


# ---------------------------------------------------------------------------
# the engine


@dataclass(frozen=True)
class InboundText:
    text: str


@dataclass(frozen=True)
class InboundCallback:
    token: str


Inbound = Union[InboundText, InboundCallback]


@dataclass(frozen=True)
class DialogueContext:
    """Read-only domain snapshot the engine consults; never mutated."""

    profile: PatientProfile
    medications: Mapping[str, Medication] = field(default_factory=dict)
    doses: Mapping[str, ScheduledDose] = field(default_factory=dict)
    taken_streak: int = 0  # consecutive Taken doses before the current update


@dataclass(frozen=True)
class DialogueResult:
    session: ConversationSession
    messages: tuple[OutboundMessage, ...]
    commands: tuple[DomainCommand, ...]


MENU_REPLIES = (
    QuickReply("Add medication", "menu:add_medication"),
    QuickReply("Check in", "menu:check_in"),
    QuickReply("Symptom check", "menu:symptom_check"),
    QuickReply("Health info", "menu:info"),
    QuickReply("Care team chat", "menu:provider_chat"),
    QuickReply("Appointment", "menu:appointment_request"),
)

_MENU_FLOWS = {
    "add_medication": Flow.ADD_MEDICATION,
    "check_in": Flow.CHECK_IN,
    "symptom_check": Flow.SYMPTOM_CHECK,
    "provider_chat": Flow.PROVIDER_CHAT,
    "appointment_request": Flow.APPOINTMENT_REQUEST,
}

_INTENT_FLOWS = {
    IntentKind.ADD_MEDICATION: Flow.ADD_MEDICATION,
    IntentKind.CHECKIN_REQUEST: Flow.CHECK_IN,
    IntentKind.TALK_TO_PROVIDER: Flow.PROVIDER_CHAT,
    IntentKind.BOOK_APPOINTMENT: Flow.APPOINTMENT_REQUEST,
}


class _SlotFormat(dict):
    def __missing__(self, key: str) -> str:
        return "{" + key + "}"


class DialogueEngine:
    """Deterministic conversation manager: (session, inbound, now, context)
    in; (session, messages, commands) out."""

    def __init__(
        self,
        flows: FlowTable,
        templates: TemplateCatalog,
        kb: KnowledgeBase,
        *,
        page_chars: int = 600,
        milestone_streak: int = 7,
    ):
        self.flows = flows
        self.templates = templates
        self.kb = kb
        self.page_chars = page_chars
        self.milestone_streak = milestone_streak

    # -- public entry points ------------------------------------------------

    def handle_update(
        self,
        session: ConversationSession,
        inbound: Inbound,
        now,
        ctx: DialogueContext,
    ) -> DialogueResult:
        if isinstance(inbound, InboundCallback):
            return self._on_callback(session, inbound.token.strip(), now, ctx)
        return self._on_text(session, inbound.text, now, ctx)

    def start_onboarding(self, session: ConversationSession) -> DialogueResult:
        """Entry used by the gateway when an unregistered chat first appears."""
        return self._enter_flow(session, Flow.ONBOARDING)

    def note_dose_card(self, session: ConversationSession, dose_id: str) -> ConversationSession:
        """Move an idle session into DoseResponse for a just-sent card.

        A session mid-flow is left alone; the card's buttons work regardless.
        """
        if session.flow is Flow.IDLE:
            return ConversationSession(
                session.patient_id, Flow.DOSE_RESPONSE, 0, {"dose_id": dose_id}
            )
        return session

    # -- plumbing -----------------------------------------------------------

    def _msg(self, pid: str, body: str, quick_replies=(), card=None) -> OutboundMessage:
        return OutboundMessage(pid, body, tuple(quick_replies), card)

    def _idle(self, pid: str) -> ConversationSession:
        return ConversationSession(pid)

    def _prompt(self, session: ConversationSession, prefix: str | None = None) -> OutboundMessage:
        step = self.flows.spec(session.flow).steps[session.step]
        fmt = _SlotFormat(self._format_fields(session.slots))
        body = step.prompt.format_map(fmt)
        if prefix:
            body = f"{prefix}\n{body}"
        return self._msg(session.patient_id, body, self._step_replies(step))

    def _reprompt(self, session: ConversationSession) -> DialogueResult:
        """Unknown input inside a flow: repeat the step with its help text."""
        step = self.flows.spec(session.flow).steps[session.step]
        fmt = _SlotFormat(self._format_fields(session.slots))
        body = step.help.format_map(fmt)
        return DialogueResult(session, (self._msg(session.patient_id, body, self._step_replies(step)),), ())

    def _step_replies(self, step: FlowStep) -> tuple[QuickReply, ...]:
        if step.kind == "confirm":
            return (QuickReply("Yes", "confirm:yes"), QuickReply("No", "confirm:no"))
        if step.kind == "scale":
            return tuple(QuickReply(str(n), f"opt:{n}") for n in range(1, 6))
        return tuple(QuickReply(o.label, o.token) for o in step.options)

    def _format_fields(self, slots: Mapping[str, object]) -> dict[str, object]:
        fields = dict(slots)
        quantity = slots.get("dose_quantity")
        if isinstance(quantity, float):
            fields["dose_quantity"] = f"{quantity:g}"
        times = slots.get("times")
        if isinstance(times, list):
            fields["times_text"] = ", ".join(times)
        days = slots.get("days")
        if isinstance(days, list):
            if days == list(range(7)):
                fields["days_text"] = "every day"
            else:
                fields["days_text"] = ", ".join(WEEKDAY_NAMES[d] for d in days)
        return fields

    def _help_result(self, session: ConversationSession, template_id: str) -> DialogueResult:
        return DialogueResult(
            session,
            (self._msg(session.patient_id, self.templates.text(template_id), MENU_REPLIES),),
            (),
        )

    # -- text ----------------------------------------------------------------

    def _on_text(self, session, text: str, now, ctx) -> DialogueResult:
        raw = text.strip()
        lowered = raw.lower()
        if lowered in ("cancel", "/cancel"):
            if session.flow is Flow.IDLE:
                return self._help_result(session, "nothing_to_cancel")
            return self._help_result(self._idle(session.patient_id), "cancelled")
        if session.flow is Flow.IDLE:
            return self._on_idle_text(session, raw, now, ctx)
        return self._answer_step(session, raw, None, now, ctx)

    def _on_idle_text(self, session, raw: str, now, ctx) -> DialogueResult:
        lowered = raw.lower()
        if raw.startswith("/"):
            command, _, arg = raw.partition(" ")
            command = command.lower()
            if command == "/start":
                return self._enter_flow(session, Flow.ONBOARDING)
            if command == "/help":
                return self._help_result(session, "help")
            if command == "/info":
                return self._open_info_by_topic(session, arg.strip())
            logger.warning("unknown command %r from %s", raw, session.patient_id)
            return self._help_result(session, "fallback")
        if lowered == "help":
            return self._help_result(session, "help")

        intent = kb_mod.match_intent(raw, self.kb)
        if intent.kind is IntentKind.SYMPTOM_REPORT:
            messages, commands = self._symptom_results(session.patient_id, intent.symptom_ids)
            return DialogueResult(session, messages, commands)
        flow = _INTENT_FLOWS.get(intent.kind)
        if flow is not None:
            return self._enter_flow(session, flow)
        return self._help_result(session, "fallback")

    # -- callbacks -----------------------------------------------------------

    def _on_callback(self, session, token: str, now, ctx) -> DialogueResult:
        parts = token.split(":")
        if parts[0] == "dose" and len(parts) == 3:
            return self._on_dose_callback(session, parts[1], parts[2], now, ctx)
        if parts[0] == "menu" and len(parts) == 2:
            return self._on_menu_callback(session, parts[1], now, ctx)
        if parts[0] == "opt" and len(parts) >= 2:
            return self._on_option(session, token[len("opt:"):], now, ctx)
        if parts[0] == "confirm" and len(parts) == 2 and parts[1] in ("yes", "no"):
            return self._on_option(session, parts[1], now, ctx, confirm=True)
        if parts[0] == "info" and len(parts) == 3 and parts[2].isdigit():
            return self._on_info_callback(session, parts[1], int(parts[2]), now, ctx)
        logger.warning("malformed callback token %r from %s", token, session.patient_id)
        if session.flow is Flow.IDLE:
            return self._help_result(session, "fallback")
        return self._reprompt(session)

    def _on_menu_callback(self, session, entry: str, now, ctx) -> DialogueResult:
        if session.flow is not Flow.IDLE:
            return self._reprompt(session)
        if entry == "info":
            return self._info_index(session)
        flow = _MENU_FLOWS.get(entry)
        if flow is None:
            logger.warning("unknown menu entry %r from %s", entry, session.patient_id)
            return self._help_result(session, "fallback")
        return self._enter_flow(session, flow)

    def _on_option(self, session, value: str, now, ctx, *, confirm: bool = False) -> DialogueResult:
        if session.flow is Flow.IDLE:
            logger.warning("stale option callback %r from %s", value, session.patient_id)
            return self._help_result(session, "fallback")
        step = self.flows.spec(session.flow).steps[session.step]
        if confirm and step.kind != "confirm":
            return self._reprompt(session)
        return self._answer_step(session, None, value, now, ctx)

    def _on_dose_callback(self, session, dose_id: str, action: str, now, ctx) -> DialogueResult:
        pid = session.patient_id
        dose = ctx.doses.get(dose_id)
        if action not in ("taken", "skipped", "snooze") or dose is None:
            logger.warning("malformed dose callback %s:%s from %s", dose_id, action, pid)
            if session.flow is Flow.IDLE:
                return self._help_result(session, "fallback")
            return self._reprompt(session)
        if dose.terminal:
            return DialogueResult(
                session, (self._msg(pid, self.templates.text("dose_already_recorded")),), ()
            )
        answering_own_card = (
            session.flow is Flow.DOSE_RESPONSE and session.slots.get("dose_id") == dose_id
        )
        after = self._idle(pid) if (answering_own_card or session.flow is Flow.IDLE) else session

        if action == "taken":
            streak = ctx.taken_streak + 1
            fid = feedback_for("taken", streak, milestone_streak=self.milestone_streak)
            return DialogueResult(
                after,
                (self._msg(pid, self.templates.feedback_text(fid, streak=streak)),),
                (RecordDoseEvent(dose_id, ReportTaken()),),
            )
        if action == "snooze":
            if not isinstance(dose.state, Reminded):
                return DialogueResult(
                    session, (self._msg(pid, self.templates.text("dose_cannot_snooze")),), ()
                )
            minutes = ctx.profile.reminder_prefs.snooze_minutes
            return DialogueResult(
                after,
                (self._msg(pid, self.templates.text("dose_snoozed", minutes=minutes)),),
                (SnoozeDose(dose_id),),
            )
        # skipped: ask for the optional reason unless a different flow is live
        if session.flow in (Flow.IDLE, Flow.DOSE_RESPONSE):
            reason_session = ConversationSession(
                pid, Flow.DOSE_RESPONSE, 1, {"dose_id": dose_id}
            )
            return DialogueResult(reason_session, (self._prompt(reason_session),), ())
        return DialogueResult(
            session,
            (self._msg(pid, self.templates.feedback_text("skipped_support")),),
            (RecordDoseEvent(dose_id, ReportSkipped(None)),),
        )

    def _on_info_callback(self, session, doc_id: str, cursor: int, now, ctx) -> DialogueResult:
        if session.flow is Flow.INFO_BROWSE:
            if session.slots.get("doc_id") != doc_id or session.slots.get("cursor") != cursor:
                return self._reprompt(session)  # stale Read more button
        elif session.flow is not Flow.IDLE:
            return self._reprompt(session)
        doc = self.kb.info_docs.get(doc_id)
        if doc is None:
            logger.warning("info callback for unknown doc %r", doc_id)
            return self._help_result(self._idle(session.patient_id), "fallback")
        try:
            return self._serve_info_page(session.patient_id, doc, cursor)
        except CursorOutOfRange:
            logger.warning("info callback cursor %d out of range for %r", cursor, doc_id)
            return self._help_result(self._idle(session.patient_id), "fallback")

    # -- info browsing ---------------------------------------------------------

    def _info_titles(self) -> str:
        return ", ".join(sorted(d.title for d in self.kb.info_docs.values()))

    def _info_index(self, session) -> DialogueResult:
        body = self.templates.text("info_index", titles=self._info_titles())
        return DialogueResult(session, (self._msg(session.patient_id, body),), ())

    def _open_info_by_topic(self, session, topic: str) -> DialogueResult:
        if not topic:
            return self._info_index(session)
        try:
            doc = kb_mod.get_info(topic, self.kb)
        except kb_mod.InfoNotFound:
            body = self.templates.text("info_not_found", topic=topic, titles=self._info_titles())
            return DialogueResult(session, (self._msg(session.patient_id, body),), ())
        return self._serve_info_page(session.patient_id, doc, 0)

    def _serve_info_page(self, pid: str, doc: InfoDocument, cursor: int) -> DialogueResult:
        page, nxt = paginate_info(doc, cursor, self.page_chars)
        body = f"{doc.title}\n{page}" if cursor == 0 else page
        if nxt is None:
            return DialogueResult(self._idle(pid), (self._msg(pid, body),), ())
        session = ConversationSession(pid, Flow.INFO_BROWSE, 0, {"doc_id": doc.doc_id, "cursor": nxt})
        replies = (QuickReply("Read more", f"info:{doc.doc_id}:{nxt}"),)
        return DialogueResult(session, (self._msg(pid, body, replies),), ())

    # -- stepping through flows -------------------------------------------------

    def _enter_flow(self, session, flow: Flow) -> DialogueResult:
        entered = ConversationSession(session.patient_id, flow, 0, {})
        return DialogueResult(entered, (self._prompt(entered),), ())

    def _answer_step(self, session, text: str | None, option: str | None, now, ctx) -> DialogueResult:
        spec = self.flows.spec(session.flow)
        step = spec.steps[session.step]

        if step.kind == "relay":
            return self._relay(session, text, ctx)
        if step.kind in ("wait", "paging"):
            return self._reprompt(session)
        if step.kind == "confirm":
            answer = self._parse_confirm(text, option)
            if answer is None:
                return self._reprompt(session)
            if answer:
                return self._finalize(session, now, ctx)
            return self._help_result(self._idle(session.patient_id), "cancelled")

        value, ok = self._parse_value(step, text, option, ctx)
        if not ok:
            return self._reprompt(session)
        slots = dict(session.slots)
        slots[step.slot] = value
        if session.flow is Flow.DOSE_RESPONSE and step.slot == "skip_reason":
            return self._record_skip(session, slots, ctx)
        if session.step + 1 < len(spec.steps):
            advanced = ConversationSession(session.patient_id, session.flow, session.step + 1, slots)
            return DialogueResult(advanced, (self._prompt(advanced),), ())
        return self._finalize(
            ConversationSession(session.patient_id, session.flow, session.step, slots), now, ctx
        )

    def _parse_confirm(self, text: str | None, option: str | None) -> bool | None:
        answer = option if option is not None else (text or "").strip().lower()
        if answer in ("yes", "y", "ok", "sure", "confirm", "save"):
            return True
        if answer in ("no", "n", "discard"):
            return False
        return None

    def _parse_value(self, step: FlowStep, text: str | None, option: str | None, ctx):
        """Returns (value, ok). Values are JSON-native so sessions serialize."""
        kind = step.kind
        raw = (text or "").strip()

        if kind == "text":
            if option is not None:
                return str(option), True
            return (raw, True) if raw else (None, False)

        if kind == "text_optional":
            if option == "none" or raw.lower() in ("none", "nothing", "no"):
                return None, True
            return (raw if raw else None), True

        if kind == "number":
            source = option if option is not None else raw
            try:
                value = float(source)
            except (TypeError, ValueError):
                return None, False
            low = step.params.get("min")
            high = step.params.get("max")
            low_x = step.params.get("min_exclusive")
            if low is not None and value < low:
                return None, False
            if high is not None and value > high:
                return None, False
            if low_x is not None and value <= low_x:
                return None, False
            return value, True

        if kind == "scale":
            source = option if option is not None else raw
            try:
                value = int(str(source))
            except (TypeError, ValueError):
                return None, False
            return (value, True) if 1 <= value <= 5 else (None, False)

        if kind == "choice":
            if option is not None:
                for o in step.options:
                    if str(o.value) == option:
                        return o.value, True
                return None, False
            for o in step.options:
                if raw.lower() in (str(o.value).lower(), o.label.lower()):
                    return o.value, True
            return None, False

        if kind == "timezone":
            source = option if option is not None else raw
            if not source:
                return None, False
            try:
                ZoneInfo(str(source))
            except Exception:
                return None, False
            return str(source), True

        if kind == "times":
            if not raw:
                return None, False
            parts = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
            times: list[str] = []
            for p in parts:
                try:
                    t = time.fromisoformat(p)
                except ValueError:
                    return None, False
                if t.second or t.microsecond:
                    return None, False
                times.append(t.strftime("%H:%M"))
            if not times:
                return None, False
            return sorted(set(times)), True

        if kind == "days":
            source = (option if option is not None else raw).lower()
            if source in ("daily", "every day", "everyday", "all"):
                return list(range(7)), True
            if source == "weekdays":
                return [0, 1, 2, 3, 4], True
            if source == "weekends":
                return [5, 6], True
            days: set[int] = set()
            for token in source.replace(",", " ").split():
                matched = [i for i, name in enumerate(WEEKDAY_NAMES) if token.startswith(name)]
                if len(matched) != 1:
                    return None, False
                days.add(matched[0])
            return (sorted(days), True) if days else (None, False)

        if kind in ("symptoms", "symptoms_required"):
            if kind == "symptoms" and (option == "none" or raw.lower() in ("none", "nothing", "no")):
                return [], True
            if not raw:
                return None, False
            intent = kb_mod.match_intent(raw, self.kb)
            if intent.kind is not IntentKind.SYMPTOM_REPORT:
                return None, False
            return sorted(intent.symptom_ids), True

        raise FlowConfigError(f"no parser for step kind '{kind}'")

    def _relay(self, session, text: str | None, ctx) -> DialogueResult:
        pid = session.patient_id
        raw = (text or "").strip()
        if not raw:
            return self._reprompt(session)
        if raw.lower() == "done":
            return DialogueResult(
                self._idle(pid), (self._msg(pid, self.templates.text("provider_chat_closed")),), ()
            )
        return DialogueResult(
            session,
            (self._msg(pid, self.templates.text("provider_chat_forwarded")),),
            (AppendIntervention(raw),),
        )

    def _record_skip(self, session, slots, ctx) -> DialogueResult:
        pid = session.patient_id
        reason = slots.get("skip_reason")
        return DialogueResult(
            self._idle(pid),
            (self._msg(pid, self.templates.feedback_text("skipped_support")),),
            (RecordDoseEvent(str(slots["dose_id"]), ReportSkipped(reason)),),
        )

    # -- flow finalizers ---------------------------------------------------------

    def _finalize(self, session, now, ctx) -> DialogueResult:
        finishers = {
            Flow.ONBOARDING: self._finish_onboarding,
            Flow.ADD_MEDICATION: self._finish_add_medication,
            Flow.CHECK_IN: self._finish_check_in,
            Flow.SYMPTOM_CHECK: self._finish_symptom_check,
            Flow.APPOINTMENT_REQUEST: self._finish_appointment,
        }
        return finishers[session.flow](session, now, ctx)

    def _finish_onboarding(self, session, now, ctx) -> DialogueResult:
        pid = session.patient_id
        slots = session.slots
        quiet_raw = slots.get("quiet_hours")
        quiet = None
        if isinstance(quiet_raw, str) and quiet_raw != "none":
            start_s, end_s = quiet_raw.split("-")
            quiet = LocalTimeInterval(time.fromisoformat(start_s), time.fromisoformat(end_s))
        current = ctx.profile.reminder_prefs
        prefs = ReminderPrefs(
            snooze_minutes=int(slots["snooze_minutes"]),
            max_reminders_per_dose=current.max_reminders_per_dose,
            response_window_minutes=current.response_window_minutes,
            quiet_hours=quiet,
        )
        changes = {
            "display_name": str(slots["display_name"]),
            "timezone": str(slots["timezone"]),
            "reminder_prefs": prefs,
        }
        body = self.templates.text("onboarding_saved", display_name=slots["display_name"])
        return DialogueResult(
            self._idle(pid),
            (self._msg(pid, body, MENU_REPLIES),),
            (UpdateProfile(changes),),
        )

    def _finish_add_medication(self, session, now, ctx) -> DialogueResult:
        pid = session.patient_id
        slots = session.slots
        local_today = now.astimezone(ctx.profile.tzinfo).date()
        draft = {
            "medication_id": f"{pid}-m{len(ctx.medications) + 1}",
            "name": slots.get("name"),
            "dose_quantity": slots.get("dose_quantity"),
            "dose_unit": slots.get("dose_unit"),
            "regimen": {
                "times_of_day": tuple(time.fromisoformat(t) for t in slots.get("times", [])),
                "days_of_week": frozenset(slots.get("days", [])),
                "start_date": local_today,
                "end_date": None,
            },
        }
        result = validate_medication(draft)
        if isinstance(result, list):
            problems = "; ".join(f"{e.field}: {e.reason}" for e in result)
            body = self.templates.text("medication_invalid", problems=problems)
            return DialogueResult(session, (self._msg(pid, body),), ())
        body = self.templates.text("medication_saved", name=result.name)
        return DialogueResult(self._idle(pid), (self._msg(pid, body),), (SaveMedication(result),))

    def _finish_check_in(self, session, now, ctx) -> DialogueResult:
        pid = session.patient_id
        slots = session.slots
        symptoms = tuple(slots.get("symptoms") or ())
        checkin = CheckIn(
            at=now,
            mood=int(slots["mood"]),
            stress=int(slots["stress"]),
            sleep_hours=float(slots["sleep_hours"]),
            symptoms=symptoms,
            diet_note=slots.get("diet_note"),
            exercise_note=slots.get("exercise_note"),
        )
        commands: list[DomainCommand] = [SaveCheckIn(checkin)]
        if symptoms:
            names = ", ".join(self.kb.symptoms[s].name for s in symptoms if s in self.kb.symptoms)
            commands.append(RaiseAlert(AlertKind.SYMPTOM_FLAG, Severity.LOW, detail=names))
        return DialogueResult(
            self._idle(pid),
            (self._msg(pid, self.templates.text("checkin_saved")),),
            tuple(commands),
        )

    def _finish_symptom_check(self, session, now, ctx) -> DialogueResult:
        ids = frozenset(session.slots.get("symptoms") or ())
        messages, commands = self._symptom_results(session.patient_id, ids)
        return DialogueResult(self._idle(session.patient_id), messages, commands)

    def _finish_appointment(self, session, now, ctx) -> DialogueResult:
        pid = session.patient_id
        note = str(session.slots.get("note", ""))
        return DialogueResult(
            self._idle(pid),
            (self._msg(pid, self.templates.text("appointment_sent")),),
            (
                RequestAppointment(note),
                RaiseAlert(AlertKind.PATIENT_REQUEST, Severity.LOW, detail=f"appointment: {note}"),
            ),
        )

    def _symptom_results(self, pid: str, symptom_ids: frozenset[str]):
        ranked = kb_mod.check_symptoms(symptom_ids, self.kb)
        names = ", ".join(sorted(self.kb.symptoms[s].name for s in symptom_ids))
        commands = (RaiseAlert(AlertKind.SYMPTOM_FLAG, Severity.LOW, detail=names),)
        if not ranked:
            body = self.templates.text("symptom_no_conditions")
            return (self._msg(pid, body),), commands
        lines = [self.templates.text("symptom_results_header")]
        lines += [f"- {c.name} ({score:.0%} match)" for c, score in ranked]
        lines += ["", self.templates.text("disclaimer")]
        replies = tuple(
            QuickReply(f"About {c.name}", f"info:{c.info_doc_id}:0") for c, _ in ranked[:5]
        )
        return (self._msg(pid, "\n".join(lines), replies),), commands

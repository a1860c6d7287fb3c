"""Core domain types plus the pure dose-lifecycle state machine.

Everything here is a plain value object: no I/O and no hidden clock reads.
Operations take ``now`` explicitly so callers (and tests) own time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta
from enum import Enum
from typing import Mapping, Union
from zoneinfo import ZoneInfo


class DomainError(Exception):
    """Base class for domain rule violations."""


class IllegalTransition(DomainError):
    """A dose event that is not legal in the dose's current state."""


class ReminderCapExceeded(DomainError):
    """A Remind event that would push past max_reminders_per_dose."""


WEEKDAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


@dataclass(frozen=True)
class LocalTimeInterval:
    """Half-open interval of local wall-clock time.

    ``start > end`` wraps past midnight (e.g. 22:00-07:00); ``start == end``
    is the empty interval.
    """

    start: time
    end: time

    def contains(self, t: time) -> bool:
        if self.start == self.end:
            return False
        if self.start < self.end:
            return self.start <= t < self.end
        return t >= self.start or t < self.end


@dataclass(frozen=True)
class ReminderPrefs:
    snooze_minutes: int = 10
    max_reminders_per_dose: int = 3
    response_window_minutes: int = 60
    quiet_hours: LocalTimeInterval | None = None

    def __post_init__(self) -> None:
        if self.snooze_minutes < 1:
            raise ValueError("snooze_minutes must be >= 1")
        if not 1 <= self.max_reminders_per_dose <= 5:
            raise ValueError("max_reminders_per_dose must be in 1..5")
        if self.response_window_minutes < 1:
            raise ValueError("response_window_minutes must be >= 1")
        if self.snooze_minutes >= self.response_window_minutes:
            raise ValueError("snooze_minutes must be smaller than response_window_minutes")

    @property
    def response_window(self) -> timedelta:
        return timedelta(minutes=self.response_window_minutes)


@dataclass(frozen=True)
class PatientProfile:
    patient_id: str
    display_name: str
    timezone: str
    provider_id: str
    condition_tags: tuple[str, ...] = ()
    reminder_prefs: ReminderPrefs = field(default_factory=ReminderPrefs)

    def __post_init__(self) -> None:
        object.__setattr__(self, "condition_tags", tuple(self.condition_tags))
        ZoneInfo(self.timezone)  # raises if the zone name does not resolve

    @property
    def tzinfo(self) -> ZoneInfo:
        return ZoneInfo(self.timezone)


def regimen_problems(
    times_of_day,
    days_of_week,
    start_date,
    end_date,
) -> list[tuple[str, str]]:
    """Invariant violations over the raw parts of a regimen as (field, reason)."""
    problems: list[tuple[str, str]] = []
    times = tuple(times_of_day or ())
    if not times:
        problems.append(("times_of_day", "must contain at least one time"))
    elif any(not isinstance(t, time) for t in times):
        problems.append(("times_of_day", "entries must be wall-clock times"))
    else:
        if any(t.second or t.microsecond for t in times):
            problems.append(("times_of_day", "must be minute-resolution (no seconds)"))
        if tuple(sorted(set(times))) != times:
            problems.append(("times_of_day", "must be strictly increasing with no duplicates"))
    days = frozenset(days_of_week or ())
    if not days:
        problems.append(("days_of_week", "must be non-empty"))
    elif not days <= frozenset(range(7)):
        problems.append(("days_of_week", "entries must be weekday numbers 0..6"))
    if not isinstance(start_date, date) or isinstance(start_date, datetime):
        problems.append(("start_date", "must be a calendar date"))
    elif end_date is not None:
        if not isinstance(end_date, date) or isinstance(end_date, datetime):
            problems.append(("end_date", "must be a calendar date"))
        elif end_date < start_date:
            problems.append(("end_date", "must be on or after start_date"))
    return problems


@dataclass(frozen=True)
class Regimen:
    """Recurrence rule: wall-clock times on selected weekdays in a date range.

    Weekdays use Monday=0 .. Sunday=6; times are minute-resolution local
    wall-clock values in the patient's timezone.
    """

    times_of_day: tuple[time, ...]
    days_of_week: frozenset[int]
    start_date: date
    end_date: date | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "times_of_day", tuple(self.times_of_day))
        object.__setattr__(self, "days_of_week", frozenset(self.days_of_week))
        problems = regimen_problems(
            self.times_of_day, self.days_of_week, self.start_date, self.end_date
        )
        if problems:
            raise ValueError("; ".join(f"{f}: {r}" for f, r in problems))

    def matches_date(self, d: date) -> bool:
        if d < self.start_date:
            return False
        if self.end_date is not None and d > self.end_date:
            return False
        return d.weekday() in self.days_of_week


@dataclass(frozen=True)
class Medication:
    medication_id: str
    name: str
    dose_quantity: float
    dose_unit: str
    regimen: Regimen
    icon: str | None = None
    photo_ref: str | None = None
    instructions: str | None = None

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("name must be non-empty")
        if not self.dose_quantity > 0:
            raise ValueError("dose_quantity must be positive")

    @property
    def dose_text(self) -> str:
        return f"{self.dose_quantity:g} {self.dose_unit}"


@dataclass(frozen=True)
class FieldError:
    field: str
    reason: str


def validate_medication(draft: Mapping[str, object]) -> Medication | list[FieldError]:
    """Validate a draft medication.

    Returns either a fully valid Medication or the complete list of field
    errors, never both. The regimen may be given as a Regimen or as a mapping
    with times_of_day / days_of_week / start_date / end_date parts.
    """
    errors: list[FieldError] = []

    med_id = draft.get("medication_id")
    if not isinstance(med_id, str) or not med_id.strip():
        errors.append(FieldError("medication_id", "must be a non-empty identifier"))

    name = draft.get("name")
    if not isinstance(name, str) or not name.strip():
        errors.append(FieldError("name", "must be non-empty"))

    qty = draft.get("dose_quantity")
    if isinstance(qty, bool) or not isinstance(qty, (int, float)) or not qty > 0:
        errors.append(FieldError("dose_quantity", "must be a positive number"))

    unit = draft.get("dose_unit")
    if not isinstance(unit, str) or not unit.strip():
        errors.append(FieldError("dose_unit", "must be non-empty"))

    for optional in ("icon", "photo_ref", "instructions"):
        value = draft.get(optional)
        if value is not None and not isinstance(value, str):
            errors.append(FieldError(optional, "must be text when present"))

    regimen = draft.get("regimen")
    if isinstance(regimen, Regimen):
        pass
    elif isinstance(regimen, Mapping):
        for part, reason in regimen_problems(
            regimen.get("times_of_day"),
            regimen.get("days_of_week"),
            regimen.get("start_date"),
            regimen.get("end_date"),
        ):
            errors.append(FieldError(f"regimen.{part}", reason))
    else:
        errors.append(FieldError("regimen", "must be present and non-empty"))

    if errors:
        return errors
    if isinstance(regimen, Mapping):
        regimen = Regimen(
            times_of_day=tuple(regimen["times_of_day"]),
            days_of_week=frozenset(regimen["days_of_week"]),
            start_date=regimen["start_date"],
            end_date=regimen.get("end_date"),
        )
    return Medication(
        medication_id=med_id.strip(),
        name=name.strip(),
        dose_quantity=float(qty),
        dose_unit=unit.strip(),
        regimen=regimen,
        icon=draft.get("icon"),
        photo_ref=draft.get("photo_ref"),
        instructions=draft.get("instructions"),
    )


# ---------------------------------------------------------------------------
# dose lifecycle


@dataclass(frozen=True)
class Pending:
    pass


@dataclass(frozen=True)
class Reminded:
    count: int
    last_reminded_at: datetime

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("reminder count starts at 1")


@dataclass(frozen=True)
class Taken:
    at: datetime


@dataclass(frozen=True)
class Skipped:
    at: datetime
    reason: str | None = None


@dataclass(frozen=True)
class Missed:
    at: datetime


DoseState = Union[Pending, Reminded, Taken, Skipped, Missed]
TERMINAL_STATES = (Taken, Skipped, Missed)


@dataclass(frozen=True)
class ScheduledDose:
    dose_id: str
    medication_id: str
    due_at: datetime
    state: DoseState = field(default_factory=Pending)

    @property
    def terminal(self) -> bool:
        return isinstance(self.state, TERMINAL_STATES)


@dataclass(frozen=True)
class Remind:
    pass


@dataclass(frozen=True)
class ReportTaken:
    pass


@dataclass(frozen=True)
class ReportSkipped:
    reason: str | None = None


@dataclass(frozen=True)
class Expire:
    pass


DoseEvent = Union[Remind, ReportTaken, ReportSkipped, Expire]


def transition_dose(
    dose: ScheduledDose,
    event: DoseEvent,
    now: datetime,
    prefs: ReminderPrefs,
) -> ScheduledDose:
    """Apply one lifecycle event, returning the updated dose.

    Terminal states absorb nothing (any event raises IllegalTransition).
    Expire is legal only once the response window has elapsed; Remind is
    capped at prefs.max_reminders_per_dose.
    """
    state = dose.state
    if isinstance(state, TERMINAL_STATES):
        raise IllegalTransition(
            f"dose {dose.dose_id} is terminal ({type(state).__name__.lower()})"
        )
    if isinstance(event, Remind):
        count = state.count + 1 if isinstance(state, Reminded) else 1
        if count > prefs.max_reminders_per_dose:
            raise ReminderCapExceeded(
                f"dose {dose.dose_id} already reminded {prefs.max_reminders_per_dose} times"
            )
        return replace(dose, state=Reminded(count=count, last_reminded_at=now))
    if isinstance(event, ReportTaken):
        return replace(dose, state=Taken(at=now))
    if isinstance(event, ReportSkipped):
        return replace(dose, state=Skipped(at=now, reason=event.reason))
    if isinstance(event, Expire):
        if now < dose.due_at + prefs.response_window:
            raise IllegalTransition(
                f"dose {dose.dose_id}: response window has not elapsed"
            )
        return replace(dose, state=Missed(at=now))
    raise TypeError(f"unknown dose event: {event!r}")


# ---------------------------------------------------------------------------
# check-ins, alerts, intervention chat


@dataclass(frozen=True)
class CheckIn:
    at: datetime
    mood: int
    stress: int
    sleep_hours: float
    symptoms: tuple[str, ...] = ()
    diet_note: str | None = None
    exercise_note: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "symptoms", tuple(self.symptoms))
        if not 1 <= self.mood <= 5:
            raise ValueError("mood must be 1..5")
        if not 1 <= self.stress <= 5:
            raise ValueError("stress must be 1..5")
        if not 0 <= self.sleep_hours <= 24:
            raise ValueError("sleep_hours must be 0..24")


class AlertKind(str, Enum):
    MISSED_STREAK = "missed_streak"
    ADHERENCE_DROP = "adherence_drop"
    SYMPTOM_FLAG = "symptom_flag"
    PATIENT_REQUEST = "patient_request"


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class Alert:
    alert_id: str
    patient_id: str
    kind: AlertKind
    severity: Severity
    created_at: datetime
    acknowledged: bool = False
    detail: str | None = None

    def acknowledge(self) -> Alert:
        # false -> true only; acking an acked alert is a no-op
        return replace(self, acknowledged=True)


class SenderRole(str, Enum):
    PATIENT = "patient"
    PROVIDER = "provider"


@dataclass(frozen=True)
class InterventionMessage:
    patient_id: str
    provider_id: str
    sender: SenderRole
    body: str
    sent_at: datetime

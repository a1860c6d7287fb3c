"""Dose scheduling: next-occurrence computation, the reminder tick loop,
snooze deferral, and missed-dose escalation.

All functions are pure; the service layer owns applying the returned
transitions and dispatching the reminder events.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

from .domain import (
    Alert,
    AlertKind,
    DoseEvent,
    Expire,
    IllegalTransition,
    Missed,
    Pending,
    Regimen,
    Remind,
    Reminded,
    ReminderPrefs,
    ScheduledDose,
    Severity,
    TERMINAL_STATES,
)


class UnresolvableLocalTime(Exception):
    """No instant on the requested date realizes the wall-clock time."""


def local_time_exists(naive: datetime, tz: ZoneInfo) -> bool:
    aware = naive.replace(tzinfo=tz, fold=0)
    roundtrip = aware.astimezone(timezone.utc).astimezone(tz)
    return roundtrip.replace(tzinfo=None) == naive


def resolve_local(day: date, t: time, tz: ZoneInfo) -> datetime:
    """Map a (date, wall-clock time) pair to a UTC instant.

    Ambiguous wall-clock times (clocks fall back) resolve to their first
    occurrence. Times swallowed by a clocks-forward gap resolve to the first
    valid wall-clock minute after the gap on the same date; if no valid
    minute remains on the date, raises UnresolvableLocalTime.
    """
    naive = datetime.combine(day, t)
    while naive.date() == day:
        if local_time_exists(naive, tz):
            return naive.replace(tzinfo=tz, fold=0).astimezone(timezone.utc)
        naive += timedelta(minutes=1)
    raise UnresolvableLocalTime(f"{t.isoformat('minutes')} on {day.isoformat()} in {tz.key}")


def next_due(regimen: Regimen, after: datetime, tz: ZoneInfo) -> datetime | None:
    """Earliest due instant strictly after ``after``; None once the regimen
    has ended."""
    day = max(after.astimezone(tz).date(), regimen.start_date)
    while True:
        if regimen.end_date is not None and day > regimen.end_date:
            return None
        if regimen.matches_date(day):
            for t in regimen.times_of_day:
                instant = resolve_local(day, t, tz)
                if instant > after:
                    return instant
        day += timedelta(days=1)


class ReminderKind(str, Enum):
    INITIAL = "initial"
    REPEAT = "repeat"
    ESCALATION = "escalation"


@dataclass(frozen=True)
class ReminderEvent:
    patient_id: str
    dose_id: str
    kind: ReminderKind
    fire_at: datetime
    repeat_n: int | None = None  # overall reminder number; >= 2 for REPEAT

    def __post_init__(self) -> None:
        if self.kind is ReminderKind.REPEAT and (self.repeat_n is None or self.repeat_n < 2):
            raise ValueError("repeat reminders are numbered from 2")


@dataclass(frozen=True)
class ScheduleEntry:
    """One open dose in the schedule book, with the owning patient's prefs."""

    patient_id: str
    dose: ScheduledDose
    prefs: ReminderPrefs
    tz: ZoneInfo


@dataclass(frozen=True)
class DoseTransition:
    patient_id: str
    dose_id: str
    event: DoseEvent


@dataclass(frozen=True)
class TickResult:
    reminders: tuple[ReminderEvent, ...]
    transitions: tuple[DoseTransition, ...]


def tick(now: datetime, book: Iterable[ScheduleEntry]) -> TickResult:
    """One scheduler pass over the schedule book.

    Emits reminder events plus the dose transitions the caller must apply.
    Idempotent by construction: once the returned transitions are applied, a
    second call at the same ``now`` emits nothing. Reminders are suppressed
    during the patient's quiet hours; expiry is not. Correct for any polling
    interval up to one minute.
    """
    reminders: list[ReminderEvent] = []
    transitions: list[DoseTransition] = []
    ordered = sorted(book, key=lambda e: (e.dose.due_at, e.patient_id, e.dose.dose_id))
    for entry in ordered:
        dose, prefs = entry.dose, entry.prefs
        state = dose.state
        if isinstance(state, TERMINAL_STATES):
            continue
        if now >= dose.due_at + prefs.response_window:
            transitions.append(DoseTransition(entry.patient_id, dose.dose_id, Expire()))
            continue
        if dose.due_at > now:
            continue
        quiet = prefs.quiet_hours
        if quiet is not None and quiet.contains(now.astimezone(entry.tz).time()):
            continue
        if isinstance(state, Pending):
            reminders.append(
                ReminderEvent(entry.patient_id, dose.dose_id, ReminderKind.INITIAL, fire_at=now)
            )
            transitions.append(DoseTransition(entry.patient_id, dose.dose_id, Remind()))
        elif isinstance(state, Reminded):
            eligible_at = state.last_reminded_at + timedelta(minutes=prefs.snooze_minutes)
            if state.count < prefs.max_reminders_per_dose and eligible_at <= now:
                reminders.append(
                    ReminderEvent(
                        entry.patient_id,
                        dose.dose_id,
                        ReminderKind.REPEAT,
                        fire_at=now,
                        repeat_n=state.count + 1,
                    )
                )
                transitions.append(DoseTransition(entry.patient_id, dose.dose_id, Remind()))
    return TickResult(tuple(reminders), tuple(transitions))


def apply_snooze(dose: ScheduledDose, now: datetime) -> ScheduledDose:
    """Defer the next repeat reminder to snooze_minutes from ``now``.

    Snoozing is not a reminder: the count is unchanged.
    """
    if not isinstance(dose.state, Reminded):
        raise IllegalTransition(f"only reminded doses can be snoozed: {dose.dose_id}")
    return replace(dose, state=replace(dose.state, last_reminded_at=now))


def escalation_for(
    patient_id: str,
    dose: ScheduledDose,
    recent_history: Sequence[ScheduledDose],
    *,
    streak_medium: int = 2,
    streak_high: int = 3,
) -> Alert | None:
    """Missed-streak alert for a dose that just transitioned to Missed.

    ``recent_history`` holds earlier terminal doses (any order; filtered to
    the same medication and sorted here). Returns None for an isolated miss,
    a Medium alert at the streak_medium-th consecutive miss, High from
    streak_high on.
    """
    if not isinstance(dose.state, Missed):
        raise IllegalTransition("escalation is evaluated on a dose in Missed state")
    prior = sorted(
        (
            d
            for d in recent_history
            if d.medication_id == dose.medication_id
            and d.due_at < dose.due_at
            and isinstance(d.state, TERMINAL_STATES)
        ),
        key=lambda d: d.due_at,
    )
    streak = 1
    for past in reversed(prior):
        if isinstance(past.state, Missed):
            streak += 1
        else:
            break
    if streak >= streak_high:
        severity = Severity.HIGH
    elif streak >= streak_medium:
        severity = Severity.MEDIUM
    else:
        return None
    return Alert(
        alert_id=f"missed-streak:{dose.dose_id}",
        patient_id=patient_id,
        kind=AlertKind.MISSED_STREAK,
        severity=severity,
        created_at=dose.state.at,
        detail=f"{streak} consecutive missed doses of {dose.medication_id}",
    )

"""Adherence metrics, deterioration detection, behavioral-stage
classification, and provider report assembly.

Pure functions over immutable inputs; thresholds arrive as keyword
arguments with the service-config defaults. The default numbers are
non-clinical placeholders.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta
from enum import Enum
from typing import Iterable, Sequence

from .domain import (
    Alert,
    AlertKind,
    CheckIn,
    Missed,
    ScheduledDose,
    Severity,
    Skipped,
    Taken,
    TERMINAL_STATES,
)


class MalformedWindow(Exception):
    pass


class InsufficientHistory(Exception):
    pass


class UnknownPatient(Exception):
    pass


@dataclass(frozen=True)
class Window:
    """Half-open instant interval [start, end)."""

    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise MalformedWindow(f"window start {self.start} must precede end {self.end}")

    def contains(self, at: datetime) -> bool:
        return self.start <= at < self.end


class BehaviourStage(str, Enum):
    TRIGGER_ATTENTION = "trigger_attention"
    INFLUENCE_DECISIONS = "influence_decisions"
    FACILITATE_ACTION = "facilitate_action"
    SUSTAIN_BEHAVIOUR = "sustain_behaviour"


STAGE_LABELS = {
    BehaviourStage.TRIGGER_ATTENTION: "Trigger Attention",
    BehaviourStage.INFLUENCE_DECISIONS: "Influence Decisions",
    BehaviourStage.FACILITATE_ACTION: "Facilitate Action",
    BehaviourStage.SUSTAIN_BEHAVIOUR: "Sustain New Behaviour",
}


def count_doses(doses: Iterable[ScheduledDose], window: Window) -> tuple[int, int, int, int]:
    """(due, taken, skipped, missed) over terminal doses due in the window.

    Non-terminal doses in the window are not countable yet and are excluded.
    """
    taken = skipped = missed = 0
    for dose in doses:
        if not window.contains(dose.due_at):
            continue
        if isinstance(dose.state, Taken):
            taken += 1
        elif isinstance(dose.state, Skipped):
            skipped += 1
        elif isinstance(dose.state, Missed):
            missed += 1
    return taken + skipped + missed, taken, skipped, missed


def adherence_rate(doses: Iterable[ScheduledDose], window: Window) -> float | None:
    """Taken over countable doses due in the window; None when nothing counts."""
    due, taken, _, _ = count_doses(doses, window)
    if due == 0:
        return None
    return taken / due


@dataclass(frozen=True)
class DayBucket:
    """One local calendar day of dose outcomes (patient-local midnight buckets)."""

    day: date
    due: int
    taken: int


def _weekly_rate(buckets: Sequence[DayBucket]) -> float | None:
    due = sum(b.due for b in buckets)
    if due == 0:
        return None
    return sum(b.taken for b in buckets) / due


def detect_adherence_drop(
    patient_id: str,
    history: Sequence[DayBucket],
    now: datetime,
    *,
    drop_delta: float = 0.2,
    floor_rate: float = 0.5,
) -> Alert | None:
    """Week-over-week deterioration check on 14 day-buckets.

    Fires when the newer week's rate fell by drop_delta or more, or sits
    below floor_rate; High severity when both hold, else Medium. Raises
    InsufficientHistory below 14 days or when either weekly rate is
    undefined.
    """
    if len(history) < 14:
        raise InsufficientHistory(f"need 14 day buckets, got {len(history)}")
    recent = sorted(history, key=lambda b: b.day)[-14:]
    week1 = _weekly_rate(recent[:7])
    week2 = _weekly_rate(recent[7:])
    if week1 is None or week2 is None:
        raise InsufficientHistory("a week in the comparison window has no countable doses")
    dropped = (week2 - week1) <= -drop_delta
    below_floor = week2 < floor_rate
    if not dropped and not below_floor:
        return None
    severity = Severity.HIGH if (dropped and below_floor) else Severity.MEDIUM
    return Alert(
        alert_id=f"adherence-drop:{patient_id}:{recent[-1].day.isoformat()}",
        patient_id=patient_id,
        kind=AlertKind.ADHERENCE_DROP,
        severity=severity,
        created_at=now,
        detail=f"weekly rate {week1:.2f} -> {week2:.2f}",
    )


def classify_stage(
    tenure_days: int,
    medications_count: int,
    rate_7d: float | None,
    *,
    sustain_rate: float = 0.8,
) -> BehaviourStage:
    """Map a patient's history onto the four design stages. Total: every
    input lands in exactly one stage."""
    if medications_count == 0:
        return BehaviourStage.TRIGGER_ATTENTION
    if tenure_days < 7 or rate_7d is None:
        return BehaviourStage.INFLUENCE_DECISIONS
    if rate_7d < sustain_rate:
        return BehaviourStage.FACILITATE_ACTION
    return BehaviourStage.SUSTAIN_BEHAVIOUR


def consecutive_taken(doses: Iterable[ScheduledDose]) -> int:
    """Length of the trailing all-Taken run over terminal doses by due time."""
    ordered = sorted(
        (d for d in doses if isinstance(d.state, TERMINAL_STATES)),
        key=lambda d: d.due_at,
    )
    streak = 0
    for dose in reversed(ordered):
        if isinstance(dose.state, Taken):
            streak += 1
        else:
            break
    return streak


@dataclass(frozen=True)
class CheckinSummary:
    count: int
    mood_avg: float | None
    stress_avg: float | None
    sleep_avg: float | None


def summarize_checkins(checkins: Iterable[CheckIn], window: Window) -> CheckinSummary:
    inside = [c for c in checkins if window.contains(c.at)]
    if not inside:
        return CheckinSummary(0, None, None, None)
    n = len(inside)
    return CheckinSummary(
        count=n,
        mood_avg=sum(c.mood for c in inside) / n,
        stress_avg=sum(c.stress for c in inside) / n,
        sleep_avg=sum(c.sleep_hours for c in inside) / n,
    )


@dataclass(frozen=True)
class AdherenceReport:
    patient_id: str
    window: Window
    doses_due: int
    taken: int
    skipped: int
    missed: int
    adherence_rate: float | None
    trend_delta: float | None
    stage: BehaviourStage
    checkin_summary: CheckinSummary
    alerts_open: int

    def __post_init__(self) -> None:
        if self.doses_due != self.taken + self.skipped + self.missed:
            raise ValueError("dose counts must partition doses_due")
        if self.adherence_rate is not None and not 0 <= self.adherence_rate <= 1:
            raise ValueError("adherence_rate out of [0, 1]")


def build_report(
    patient_id: str,
    window: Window,
    *,
    doses: Sequence[ScheduledDose],
    checkins: Sequence[CheckIn],
    open_alert_count: int,
    medications_count: int,
    registered_at: datetime,
    sustain_rate: float = 0.8,
) -> AdherenceReport:
    """Assemble the provider-facing report for one patient.

    trend_delta compares this window's rate with the immediately preceding
    window of equal length (None when either is undefined). The stage is
    classified on the trailing 7 days ending at the window's end.
    alerts_open counts the patient's currently unacknowledged alerts.
    """
    due, taken, skipped, missed = count_doses(doses, window)
    rate = taken / due if due else None

    previous = Window(window.start - (window.end - window.start), window.start)
    prev_rate = adherence_rate(doses, previous)
    trend = None if rate is None or prev_rate is None else rate - prev_rate

    trailing = Window(window.end - timedelta(days=7), window.end)
    stage = classify_stage(
        tenure_days=max((window.end - registered_at).days, 0),
        medications_count=medications_count,
        rate_7d=adherence_rate(doses, trailing),
        sustain_rate=sustain_rate,
    )
    return AdherenceReport(
        patient_id=patient_id,
        window=window,
        doses_due=due,
        taken=taken,
        skipped=skipped,
        missed=missed,
        adherence_rate=rate,
        trend_delta=trend,
        stage=stage,
        checkin_summary=summarize_checkins(checkins, window),
        alerts_open=open_alert_count,
    )

from dataclasses import FrozenInstanceError
from datetime import date, time, timedelta

import pytest
from hypothesis import given, strategies as st

from roberto.domain import (
    Expire,
    FieldError,
    IllegalTransition,
    LocalTimeInterval,
    Missed,
    Pending,
    Regimen,
    Remind,
    Reminded,
    ReminderCapExceeded,
    ReminderPrefs,
    ReportSkipped,
    ReportTaken,
    ScheduledDose,
    Skipped,
    Taken,
    transition_dose,
    validate_medication,
)

from conftest import DUE, PREFS

LATE = DUE + timedelta(minutes=PREFS.response_window_minutes)  # expiry becomes legal
EARLY = DUE + timedelta(minutes=PREFS.response_window_minutes - 1)


def dose_in(state):
    return ScheduledDose("d1", "m1", DUE, state)


STATES = {
    "pending": Pending(),
    "reminded": Reminded(count=1, last_reminded_at=DUE),
    "taken": Taken(at=DUE),
    "skipped": Skipped(at=DUE, reason=None),
    "missed": Missed(at=LATE),
}

EVENTS = {
    "remind": Remind(),
    "report_taken": ReportTaken(),
    "report_skipped": ReportSkipped("felt fine"),
    "expire": Expire(),
}

# Hand-enumerated transition matrix: (state, event) -> resulting state class
# or expected error. Expire entries assume the response window has elapsed;
# the window guard itself is tested separately.
MATRIX = {
    ("pending", "remind"): Reminded,
    ("pending", "report_taken"): Taken,
    ("pending", "report_skipped"): Skipped,
    ("pending", "expire"): Missed,
    ("reminded", "remind"): Reminded,
    ("reminded", "report_taken"): Taken,
    ("reminded", "report_skipped"): Skipped,
    ("reminded", "expire"): Missed,
    ("taken", "remind"): IllegalTransition,
    ("taken", "report_taken"): IllegalTransition,
    ("taken", "report_skipped"): IllegalTransition,
    ("taken", "expire"): IllegalTransition,
    ("skipped", "remind"): IllegalTransition,
    ("skipped", "report_taken"): IllegalTransition,
    ("skipped", "report_skipped"): IllegalTransition,
    ("skipped", "expire"): IllegalTransition,
    ("missed", "remind"): IllegalTransition,
    ("missed", "report_taken"): IllegalTransition,
    ("missed", "report_skipped"): IllegalTransition,
    ("missed", "expire"): IllegalTransition,
}


@pytest.mark.parametrize("state_name,event_name", sorted(MATRIX))
def test_transition_matrix_exhaustive(state_name, event_name):
    dose = dose_in(STATES[state_name])
    event = EVENTS[event_name]
    expected = MATRIX[(state_name, event_name)]
    if isinstance(expected, type) and issubclass(expected, Exception):
        with pytest.raises(expected):
            transition_dose(dose, event, LATE, PREFS)
    else:
        result = transition_dose(dose, event, LATE, PREFS)
        assert isinstance(result.state, expected)


def test_pending_taken_at_due():
    result = transition_dose(dose_in(Pending()), ReportTaken(), DUE, PREFS)
    assert result.state == Taken(at=DUE)


def test_terminal_remind_is_illegal():
    with pytest.raises(IllegalTransition):
        transition_dose(dose_in(Taken(at=DUE)), Remind(), DUE, PREFS)


def test_expire_before_window_is_illegal():
    with pytest.raises(IllegalTransition):
        transition_dose(dose_in(Pending()), Expire(), EARLY, PREFS)


def test_expire_at_window_boundary_marks_missed():
    result = transition_dose(dose_in(Pending()), Expire(), LATE, PREFS)
    assert result.state == Missed(at=LATE)
    assert result.state.at >= DUE + PREFS.response_window


def test_remind_increments_and_caps():
    dose = dose_in(Pending())
    for n in range(1, PREFS.max_reminders_per_dose + 1):
        dose = transition_dose(dose, Remind(), DUE + timedelta(minutes=n), PREFS)
        assert dose.state.count == n
    with pytest.raises(ReminderCapExceeded):
        transition_dose(dose, Remind(), LATE, PREFS)


def test_skip_reason_is_kept():
    result = transition_dose(dose_in(Reminded(1, DUE)), ReportSkipped("side effects"), DUE, PREFS)
    assert result.state.reason == "side effects"


def test_transition_is_pure():
    dose = dose_in(Pending())
    a = transition_dose(dose, Remind(), DUE, PREFS)
    b = transition_dose(dose, Remind(), DUE, PREFS)
    assert a == b
    assert dose.state == Pending()  # input untouched
    with pytest.raises(FrozenInstanceError):
        dose.due_at = LATE


# Reachability oracle for random walks: every state reached must be a legal
# target for its source per the matrix above, count never decreases, and
# terminal states absorb everything as errors.
_EVENT_STRATEGY = st.sampled_from(
    [Remind(), ReportTaken(), ReportSkipped(None), ReportSkipped("busy"), Expire()]
)


@given(st.lists(st.tuples(_EVENT_STRATEGY, st.integers(0, 120)), max_size=30))
def test_random_event_sequences_stay_legal(steps):
    dose = dose_in(Pending())
    prev_count = 0
    for event, minutes in steps:
        now = DUE + timedelta(minutes=minutes)
        was_terminal = dose.terminal
        try:
            dose = transition_dose(dose, event, now, PREFS)
        except IllegalTransition:
            assert was_terminal or (isinstance(event, Expire) and now < DUE + PREFS.response_window)
            continue
        except ReminderCapExceeded:
            assert isinstance(dose.state, Reminded)
            assert dose.state.count == PREFS.max_reminders_per_dose
            continue
        assert not was_terminal
        if isinstance(dose.state, Reminded):
            assert prev_count < dose.state.count <= PREFS.max_reminders_per_dose
            prev_count = dose.state.count
        if isinstance(dose.state, Missed):
            assert dose.state.at >= DUE + PREFS.response_window


# --- validate_medication ------------------------------------------------------------


def med_draft(**overrides):
    draft = {
        "medication_id": "p1-m9",
        "name": "Aspirin",
        "dose_quantity": 100.0,
        "dose_unit": "mg",
        "regimen": {
            "times_of_day": (time(8, 0), time(20, 0)),
            "days_of_week": frozenset(range(7)),
            "start_date": date(2025, 6, 1),
            "end_date": None,
        },
    }
    draft.update(overrides)
    return draft


def test_validate_medication_identity_on_valid_draft():
    result = validate_medication(med_draft())
    assert result.name == "Aspirin"
    assert result.dose_quantity == 100.0
    assert result.regimen.times_of_day == (time(8, 0), time(20, 0))


def test_validate_medication_collects_exactly_two_errors():
    result = validate_medication(med_draft(name="", dose_quantity=0))
    assert isinstance(result, list)
    assert sorted(e.field for e in result) == ["dose_quantity", "name"]


def test_validate_medication_flags_duplicate_times_once():
    draft = med_draft()
    draft["regimen"] = dict(draft["regimen"], times_of_day=(time(8, 0), time(8, 0)))
    result = validate_medication(draft)
    assert result == [
        FieldError("regimen.times_of_day", "must be strictly increasing with no duplicates")
    ]


def test_validate_medication_never_returns_both():
    for draft in (med_draft(), med_draft(name="")):
        result = validate_medication(draft)
        assert isinstance(result, list) ^ hasattr(result, "medication_id")


# --- supporting value types -----------------------------------------------------------


def test_reminder_prefs_invariants():
    with pytest.raises(ValueError):
        ReminderPrefs(snooze_minutes=0)
    with pytest.raises(ValueError):
        ReminderPrefs(max_reminders_per_dose=6)
    with pytest.raises(ValueError):
        ReminderPrefs(snooze_minutes=60, response_window_minutes=60)


def test_regimen_invariants():
    with pytest.raises(ValueError):
        Regimen((), frozenset({0}), date(2025, 6, 1))
    with pytest.raises(ValueError):
        Regimen((time(8), time(7)), frozenset({0}), date(2025, 6, 1))
    with pytest.raises(ValueError):
        Regimen((time(8),), frozenset(), date(2025, 6, 1))
    with pytest.raises(ValueError):
        Regimen((time(8),), frozenset({0}), date(2025, 6, 2), date(2025, 6, 1))


def test_quiet_hours_wraps_midnight():
    quiet = LocalTimeInterval(time(22, 0), time(7, 0))
    assert quiet.contains(time(23, 30))
    assert quiet.contains(time(6, 59))
    assert not quiet.contains(time(7, 0))
    assert not quiet.contains(time(12, 0))
    empty = LocalTimeInterval(time(9, 0), time(9, 0))
    assert not empty.contains(time(9, 0))

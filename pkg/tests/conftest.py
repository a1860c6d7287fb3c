from datetime import date, datetime, time, timezone

import pytest

from roberto.config import ServiceConfig, read_flows_text, read_kb_text, read_templates_text
from roberto.dialogue import load_flows, load_templates
from roberto.domain import Medication, Regimen, ReminderPrefs
from roberto.kb import load_kb

UTC = timezone.utc


def utc(y, mo, d, h=0, mi=0, s=0):
    return datetime(y, mo, d, h, mi, s, tzinfo=UTC)


DUE = utc(2025, 6, 2, 8, 0)

PREFS = ReminderPrefs(snooze_minutes=10, max_reminders_per_dose=3, response_window_minutes=60)


def daily_regimen(*times_of_day, start=date(2025, 6, 1), end=None):
    return Regimen(
        times_of_day=tuple(times_of_day) or (time(8, 0),),
        days_of_week=frozenset(range(7)),
        start_date=start,
        end_date=end,
    )


METFORMIN = Medication(
    medication_id="p1-m1",
    name="Metformin",
    dose_quantity=500.0,
    dose_unit="mg",
    regimen=daily_regimen(time(8, 0)),
)


@pytest.fixture(scope="session")
def kb():
    return load_kb(read_kb_text(ServiceConfig()))


@pytest.fixture(scope="session")
def flow_table():
    return load_flows(read_flows_text(ServiceConfig()))


@pytest.fixture(scope="session")
def templates():
    return load_templates(read_templates_text(ServiceConfig()))

"""Regenerates tests/fixtures/store_golden_50.jsonl: a 50-event log for two
patients covering every payload type. The expected view snapshot asserted in
tests/test_store.py was derived from this timeline by hand; keep the two in
sync when editing either.
"""

from datetime import date, datetime, time, timezone
from pathlib import Path

from roberto.dialogue import ConversationSession, Flow
from roberto.domain import (
    Alert,
    AlertKind,
    CheckIn,
    InterventionMessage,
    LocalTimeInterval,
    Medication,
    PatientProfile,
    Regimen,
    ReminderPrefs,
    SenderRole,
    Severity,
)
from roberto.store import (
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
)

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "store_golden_50.jsonl"


def utc(day, hour, minute=0):
    return datetime(2025, 6, day, hour, minute, tzinfo=timezone.utc)


def main():
    OUT.unlink(missing_ok=True)
    store = EventStore(OUT)

    p1_default = PatientProfile("p1", "Patient 1", "UTC", "prov1")
    maria_prefs = ReminderPrefs(10, 3, 60, LocalTimeInterval(time(22, 0), time(7, 0)))
    metformin = Medication(
        "p1-m1", "Metformin", 500.0, "mg",
        Regimen((time(8, 0),), frozenset(range(7)), date(2025, 6, 1)),
    )
    events = [
        ("p1", PatientRegistered(p1_default), utc(1, 7)),
        ("p1", ChatRegistered("webhook", "1001"), utc(1, 7)),
        ("p1", SessionReplaced(ConversationSession("p1", Flow.ONBOARDING, 0, {})), utc(1, 7)),
        ("p1", ProfileUpdated({"display_name": "Maria", "timezone": "Europe/Rome",
                               "reminder_prefs": maria_prefs}), utc(1, 7, 5)),
        ("p1", SessionReplaced(ConversationSession("p1")), utc(1, 7, 5)),
        ("p1", MedicationSaved(metformin), utc(1, 7, 6)),
        ("p1", DoseScheduled("p1-m1-d1", "p1-m1", utc(2, 6)), utc(1, 7, 6)),
        ("p1", ReminderFired("p1-m1-d1", "initial", 1), utc(2, 6)),
        ("p1", SessionReplaced(ConversationSession("p1", Flow.DOSE_RESPONSE, 0,
                                                   {"dose_id": "p1-m1-d1"})), utc(2, 6)),
        ("p1", DoseTaken("p1-m1-d1"), utc(2, 6, 1)),
        ("p1", SessionReplaced(ConversationSession("p1")), utc(2, 6, 1)),
        ("p1", DoseScheduled("p1-m1-d2", "p1-m1", utc(3, 6)), utc(2, 6, 1)),
        ("p1", ReminderFired("p1-m1-d2", "initial", 1), utc(3, 6)),
        ("p1", ReminderFired("p1-m1-d2", "repeat", 2), utc(3, 6, 10)),
        ("p1", DoseSkipped("p1-m1-d2", "nausea"), utc(3, 6, 12)),
        ("p1", DoseScheduled("p1-m1-d3", "p1-m1", utc(4, 6)), utc(3, 6, 12)),
        ("p1", ReminderFired("p1-m1-d3", "initial", 1), utc(4, 6)),
        ("p1", ReminderFired("p1-m1-d3", "repeat", 2), utc(4, 6, 10)),
        ("p1", ReminderFired("p1-m1-d3", "repeat", 3), utc(4, 6, 20)),
        ("p1", DoseExpired("p1-m1-d3"), utc(4, 7)),
        ("p1", DoseScheduled("p1-m1-d4", "p1-m1", utc(5, 6)), utc(4, 7)),
        ("p1", CheckInRecorded(CheckIn(utc(4, 9), 4, 2, 7.5, ("headache",))), utc(4, 9)),
        ("p1", AlertRaised(Alert("p1-a1", "p1", AlertKind.SYMPTOM_FLAG, Severity.LOW,
                                 utc(4, 9), detail="headache")), utc(4, 9)),
        ("p1", ReminderFired("p1-m1-d4", "initial", 1), utc(5, 6)),
        ("p1", DoseExpired("p1-m1-d4"), utc(5, 7)),
        ("p1", AlertRaised(Alert("missed-streak:p1-m1-d4", "p1", AlertKind.MISSED_STREAK,
                                 Severity.MEDIUM, utc(5, 7),
                                 detail="2 consecutive missed doses of p1-m1")), utc(5, 7)),
        ("p1", DoseScheduled("p1-m1-d5", "p1-m1", utc(6, 6)), utc(5, 7)),
        ("p1", InterventionAppended(InterventionMessage(
            "p1", "prov1", SenderRole.PROVIDER, "How are the morning doses going?", utc(5, 10))),
         utc(5, 10)),
        ("p1", DeliveryRecorded("p1-o1", "webhook", "delivered", 1,
                                "Message from your care team:\nHow are the morning doses going?",
                                wire={"method": "sendMessage", "chat_id": "1001",
                                      "text": "Message from your care team:\nHow are the morning doses going?"}),
         utc(5, 10)),
        ("p1", InterventionAppended(InterventionMessage(
            "p1", "prov1", SenderRole.PATIENT, "struggling with nausea", utc(5, 10, 5))),
         utc(5, 10, 5)),
        ("p1", AlertAcked("missed-streak:p1-m1-d4"), utc(5, 11)),
        ("p1", AppointmentRequested("next week checkup"), utc(5, 11, 30)),
        ("p1", AlertRaised(Alert("p1-a2", "p1", AlertKind.PATIENT_REQUEST, Severity.LOW,
                                 utc(5, 11, 30), detail="appointment: next week checkup")),
         utc(5, 11, 30)),
        ("p1", ReminderFired("p1-m1-d5", "initial", 1), utc(6, 6)),
        ("p1", SessionReplaced(ConversationSession("p1", Flow.DOSE_RESPONSE, 0,
                                                   {"dose_id": "p1-m1-d5"})), utc(6, 6)),
        ("p2", PatientRegistered(PatientProfile("p2", "Patient 2", "UTC", "prov1")), utc(3, 12)),
        ("p2", ChatRegistered("console", "2002"), utc(3, 12)),
        ("p2", SessionReplaced(ConversationSession("p2", Flow.ONBOARDING, 0, {})), utc(3, 12)),
        ("p2", ProfileUpdated({"display_name": "Ben"}), utc(3, 12, 5)),
        ("p2", SessionReplaced(ConversationSession("p2")), utc(3, 12, 5)),
        ("p2", MedicationSaved(Medication(
            "p2-m1", "Lisinopril", 10.0, "mg",
            Regimen((time(9, 0),), frozenset({0, 1, 2, 3, 4}), date(2025, 6, 4)))), utc(3, 12, 6)),
        ("p2", DoseScheduled("p2-m1-d1", "p2-m1", utc(4, 9)), utc(3, 12, 6)),
        ("p2", ReminderFired("p2-m1-d1", "initial", 1), utc(4, 9)),
        ("p2", DoseTaken("p2-m1-d1"), utc(4, 9, 1)),
        ("p2", DoseScheduled("p2-m1-d2", "p2-m1", utc(5, 9)), utc(4, 9, 1)),
        ("p2", ReminderFired("p2-m1-d2", "initial", 1), utc(5, 9)),
        ("p2", DoseSnoozed("p2-m1-d2"), utc(5, 9, 5)),
        ("p2", ReminderFired("p2-m1-d2", "repeat", 2), utc(5, 9, 15)),
        ("p2", DoseTaken("p2-m1-d2"), utc(5, 9, 16)),
        ("p2", DeliveryRecorded("p2-o1", "console", "delivered", 1,
                                "Logged as taken. Nice work, every dose counts!",
                                wire=None), utc(5, 9, 16)),
    ]
    assert len(events) == 50, len(events)
    for patient_id, payload, at in events:
        store.append(patient_id, payload, at)
    store.close()
    print(f"wrote {len(events)} events to {OUT}")


if __name__ == "__main__":
    main()

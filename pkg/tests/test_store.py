import json
import random
from datetime import date, time, timedelta
from pathlib import Path

import pytest

from roberto.dialogue import ConversationSession, Flow
from roberto.domain import (
    Alert,
    AlertKind,
    CheckIn,
    Medication,
    Missed,
    PatientProfile,
    Regimen,
    Reminded,
    SenderRole,
    Severity,
    Skipped,
    Taken,
)
from roberto.store import (
    AlertRaised,
    ChatRegistered,
    CheckInRecorded,
    CorruptLog,
    DomainEvent,
    DoseExpired,
    DoseScheduled,
    DoseSkipped,
    DoseTaken,
    EventStore,
    MedicationSaved,
    PatientRegistered,
    ReminderFired,
    SessionReplaced,
    Views,
    decode_event,
    encode_event,
    query,
    replay,
)

from conftest import utc

FIXTURES = Path(__file__).parent / "fixtures"
T0 = utc(2025, 6, 1, 12)


def profile(pid="p1"):
    return PatientProfile(pid, f"Patient {pid}", "UTC", "prov1")


# --- append / durability -------------------------------------------------------------


def test_first_event_gets_seq_one(tmp_path):
    store = EventStore(tmp_path / "log.jsonl")
    event = store.append("p1", PatientRegistered(profile()), T0)
    assert event.seq == 1


def test_appends_are_contiguous(tmp_path):
    store = EventStore(tmp_path / "log.jsonl")
    a = store.append("p1", PatientRegistered(profile()), T0)
    b = store.append("p1", ChatRegistered("console", "42"), T0)
    assert (a.seq, b.seq) == (1, 2)


def test_reopen_after_appends_preserves_everything(tmp_path):
    path = tmp_path / "log.jsonl"
    store = EventStore(path)
    store.append("p1", PatientRegistered(profile()), T0)
    for i in range(9):
        store.append("p1", CheckInRecorded(CheckIn(T0 + timedelta(hours=i), 3, 3, 8.0)), T0)
    store.close()

    reopened = EventStore(path)
    events = reopened.events()
    assert len(events) == 10
    assert [e.seq for e in events] == list(range(1, 11))
    views = reopened.snapshot()
    assert len(views.patients["p1"].checkins) == 9


def test_reopen_drops_unacknowledged_partial_line(tmp_path):
    path = tmp_path / "log.jsonl"
    store = EventStore(path)
    store.append("p1", PatientRegistered(profile()), T0)
    store.close()
    with open(path, "ab") as fh:
        fh.write(b'{"seq":2,"at":"2025-06-01T12:')  # crashed mid-write, no newline

    reopened = EventStore(path)
    assert len(reopened.events()) == 1
    event = reopened.append("p1", ChatRegistered("console", "42"), T0)
    assert event.seq == 2
    reopened.close()
    assert len(EventStore(path).events()) == 2


def test_corrupt_middle_line_raises(tmp_path):
    path = tmp_path / "log.jsonl"
    store = EventStore(path)
    store.append("p1", PatientRegistered(profile()), T0)
    store.append("p1", ChatRegistered("console", "42"), T0)
    store.close()
    lines = path.read_bytes().split(b"\n")
    lines[1] = b"not json at all"
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(CorruptLog):
        EventStore(path)


def test_seq_gap_raises(tmp_path):
    path = tmp_path / "log.jsonl"
    store = EventStore(path)
    store.append("p1", PatientRegistered(profile()), T0)
    store.append("p1", ChatRegistered("console", "42"), T0)
    store.close()
    lines = path.read_bytes().split(b"\n")
    del lines[1]  # drop seq 1
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(CorruptLog):
        EventStore(path)


def test_bad_header_raises(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text('{"format":"something-else","version":9}\n')
    with pytest.raises(CorruptLog):
        EventStore(path)


# --- codec round trip ------------------------------------------------------------------


def sample_events():
    med = Medication(
        "p1-m1", "Metformin", 500.0, "mg",
        Regimen((time(8, 0),), frozenset(range(7)), date(2025, 6, 1), date(2025, 7, 1)),
    )
    return [
        DomainEvent(1, T0, "p1", PatientRegistered(profile())),
        DomainEvent(2, T0, "p1", ChatRegistered("webhook", "1001")),
        DomainEvent(3, T0, "p1", MedicationSaved(med)),
        DomainEvent(4, T0, "p1", DoseScheduled("d1", "p1-m1", T0 + timedelta(hours=1))),
        DomainEvent(5, T0, "p1", ReminderFired("d1", "initial", 1)),
        DomainEvent(6, T0, "p1", DoseSkipped("d1", "fué difícil")),  # non-ASCII survives
        DomainEvent(
            7, T0, "p1",
            AlertRaised(Alert("a1", "p1", AlertKind.SYMPTOM_FLAG, Severity.LOW, T0, detail="x")),
        ),
        DomainEvent(
            8, T0, "p1",
            SessionReplaced(ConversationSession("p1", Flow.ADD_MEDICATION, 2, {"name": "Metformin"})),
        ),
    ]


def test_encode_decode_round_trip():
    for event in sample_events():
        assert decode_event(encode_event(event)) == event


def test_wire_lines_are_compact_json_with_stable_key_order():
    line = encode_event(sample_events()[0])
    record = json.loads(line)
    assert list(record) == ["seq", "at", "patient_id", "type", "data"]
    assert ": " not in line.split('"display_name"')[0]  # compact separators


# --- golden fixture --------------------------------------------------------------------
# The expected snapshot below was hand-derived from the 50-event timeline in
# scripts/make_store_fixture.py.


def load_golden():
    lines = (FIXTURES / "store_golden_50.jsonl").read_text(encoding="utf-8").splitlines()
    return [decode_event(line) for line in lines[1:]]


def test_golden_fixture_replays_to_expected_views():
    events = load_golden()
    assert len(events) == 50
    views = replay(events)
    assert views.last_seq == 50
    assert sorted(views.patients) == ["p1", "p2"]

    p1 = views.patients["p1"]
    assert p1.profile.display_name == "Maria"
    assert p1.profile.timezone == "Europe/Rome"
    assert p1.profile.reminder_prefs.quiet_hours.start == time(22, 0)
    assert p1.registered_at == utc(2025, 6, 1, 7)
    assert list(p1.medications) == ["p1-m1"]
    assert p1.dose_counts == {"p1-m1": 5}

    states = {d: type(p1.doses[d].state).__name__ for d in sorted(p1.doses)}
    assert states == {
        "p1-m1-d1": "Taken",
        "p1-m1-d2": "Skipped",
        "p1-m1-d3": "Missed",
        "p1-m1-d4": "Missed",
        "p1-m1-d5": "Reminded",
    }
    assert p1.doses["p1-m1-d1"].state == Taken(at=utc(2025, 6, 2, 6, 1))
    assert p1.doses["p1-m1-d2"].state == Skipped(at=utc(2025, 6, 3, 6, 12), reason="nausea")
    assert p1.doses["p1-m1-d3"].state == Missed(at=utc(2025, 6, 4, 7))
    assert p1.doses["p1-m1-d5"].state == Reminded(count=1, last_reminded_at=utc(2025, 6, 6, 6))

    assert len(p1.checkins) == 1 and p1.checkins[0].mood == 4
    assert p1.session == ConversationSession("p1", Flow.DOSE_RESPONSE, 0, {"dose_id": "p1-m1-d5"})
    assert [(m.sender, m.body) for m in p1.thread] == [
        (SenderRole.PROVIDER, "How are the morning doses going?"),
        (SenderRole.PATIENT, "struggling with nausea"),
    ]
    assert p1.appointments == [(utc(2025, 6, 5, 11, 30), "next week checkup")]
    assert p1.outbound_count == 1

    assert sorted(views.alerts) == ["missed-streak:p1-m1-d4", "p1-a1", "p1-a2"]
    assert views.alerts["missed-streak:p1-m1-d4"].acknowledged is True
    assert views.alerts["missed-streak:p1-m1-d4"].severity is Severity.MEDIUM
    assert views.alerts["p1-a1"].acknowledged is False
    assert views.alert_counts == {"p1": 3}

    p2 = views.patients["p2"]
    assert p2.profile.display_name == "Ben"
    assert {d: type(p2.doses[d].state).__name__ for d in p2.doses} == {
        "p2-m1-d1": "Taken",
        "p2-m1-d2": "Taken",
    }
    assert p2.doses["p2-m1-d2"].state == Taken(at=utc(2025, 6, 5, 9, 16))
    assert p2.outbound_count == 1

    assert views.registrations == {
        ("webhook", "1001"): "p1",
        ("console", "2002"): "p2",
    }
    assert views.channels == {"p1": ("webhook", "1001"), "p2": ("console", "2002")}
    assert len(views.deliveries) == 2


def test_golden_fixture_loads_through_event_store():
    store = EventStore(FIXTURES / "store_golden_50.jsonl")
    try:
        assert store.snapshot().last_seq == 50
    finally:
        store.close()


# --- incremental vs full replay ----------------------------------------------------------


def random_log(rng: random.Random, n_events=60):
    """A structurally valid random event sequence over two patients."""
    events = []
    seq = 0
    state = {}  # pid -> {med_ids, dose_ids, alert_no}
    at = T0

    def emit(pid, payload):
        nonlocal seq, at
        seq += 1
        at += timedelta(minutes=rng.randrange(0, 90))
        events.append(DomainEvent(seq, at, pid, payload))

    for pid in ("p1", "p2"):
        state[pid] = {"meds": [], "doses": [], "alerts": 0}
        emit(pid, PatientRegistered(profile(pid)))
        emit(pid, ChatRegistered("console", f"chat-{pid}"))

    for _ in range(n_events - 4):
        pid = rng.choice(("p1", "p2"))
        st = state[pid]
        roll = rng.random()
        if roll < 0.15 or not st["meds"]:
            mid = f"{pid}-m{len(st['meds']) + 1}"
            st["meds"].append(mid)
            emit(pid, MedicationSaved(Medication(
                mid, f"Med {mid}", 1.0 + len(mid), "mg",
                Regimen((time(8, 0),), frozenset({0, 2, 4}), date(2025, 6, 1)),
            )))
        elif roll < 0.45:
            mid = rng.choice(st["meds"])
            did = f"{mid}-d{sum(1 for d in st['doses'] if d.startswith(mid)) + 1}"
            st["doses"].append(did)
            emit(pid, DoseScheduled(did, mid, at + timedelta(hours=1)))
        elif roll < 0.60 and st["doses"]:
            emit(pid, ReminderFired(rng.choice(st["doses"]), "initial", 1))
        elif roll < 0.75 and st["doses"]:
            did = rng.choice(st["doses"])
            emit(pid, rng.choice((DoseTaken(did), DoseSkipped(did, None), DoseExpired(did))))
        elif roll < 0.85:
            st["alerts"] += 1
            emit(pid, AlertRaised(Alert(
                f"{pid}-a{st['alerts']}", pid, AlertKind.SYMPTOM_FLAG, Severity.LOW, at,
            )))
        elif roll < 0.92:
            emit(pid, CheckInRecorded(CheckIn(at, rng.randint(1, 5), rng.randint(1, 5), 8.0)))
        else:
            emit(pid, SessionReplaced(ConversationSession(pid, Flow.IDLE, 0, {})))
    return events


def summarize(views: Views):
    return {
        "last_seq": views.last_seq,
        "patients": {
            pid: {
                "doses": {d: repr(ps.doses[d].state) for d in sorted(ps.doses)},
                "meds": sorted(ps.medications),
                "checkins": len(ps.checkins),
                "session": ps.session,
            }
            for pid, ps in views.patients.items()
        },
        "alerts": {aid: (a.severity, a.acknowledged) for aid, a in views.alerts.items()},
    }


def test_incremental_equals_full_replay_on_random_logs():
    rng = random.Random(2025)
    for _ in range(25):
        events = random_log(rng)
        incremental = Views.empty()
        for event in events:
            incremental.apply(event)
        assert summarize(incremental) == summarize(replay(events))


def test_replay_rejects_gapped_log():
    events = [e for e in load_golden() if e.seq != 3]
    with pytest.raises(CorruptLog):
        replay(events)


# --- query ---------------------------------------------------------------------------------


def test_query_unknown_patient_is_empty():
    assert query(load_golden(), patient_id="p99") == []


def test_query_window_partition():
    events = load_golden()
    a, b, c = utc(2025, 6, 1), utc(2025, 6, 4), utc(2025, 6, 7)
    left = query(events, window=(a, b))
    right = query(events, window=(b, c))
    whole = query(events, window=(a, c))
    assert len(left) + len(right) == len(whole)
    assert {e.seq for e in left} | {e.seq for e in right} == {e.seq for e in whole}


def test_query_matches_linear_scan_on_random_logs():
    rng = random.Random(77)
    events = random_log(rng, 80)
    for _ in range(20):
        pid = rng.choice((None, "p1", "p2"))
        kinds = rng.choice((None, {"dose_scheduled", "dose_taken"}, {"alert_raised"}))
        lo = T0 + timedelta(hours=rng.randrange(72))
        window = rng.choice((None, (lo, lo + timedelta(hours=rng.randrange(1, 48)))))

        expected = [
            e for e in events
            if (pid is None or e.patient_id == pid)
            and (kinds is None or e.type_tag in kinds)
            and (window is None or window[0] <= e.at < window[1])
        ]
        expected.sort(key=lambda e: (e.at, e.seq))
        assert query(events, patient_id=pid, kinds=kinds, window=window) == expected


def test_query_sorts_by_at_then_seq():
    events = load_golden()  # p2's block has earlier timestamps than late p1 events
    ordered = query(events)
    ats = [(e.at, e.seq) for e in ordered]
    assert ats == sorted(ats)
    assert [e.seq for e in ordered] != sorted(e.seq for e in ordered)

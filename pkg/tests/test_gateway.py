import json
import threading
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from roberto.clock import VirtualClock
from roberto.config import ServiceConfig
from roberto.dialogue import InboundCallback, InboundText
from roberto.gateway import MalformedPayload, create_app, ingest_webhook, parse_webhook_update
from roberto.service import (
    ChannelUnavailable,
    ConsoleChannel,
    RobertoService,
    WebhookChannel,
)
from conftest import utc

FIXTURES = Path(__file__).parent / "fixtures"

AUTH = {"Authorization": "Bearer dev-token"}


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


def quiet_service(start=utc(2025, 6, 2, 7, 0)):
    clock = VirtualClock(start)
    service = RobertoService(
        ServiceConfig(),
        clock=clock,
        channels=[ConsoleChannel(sink=lambda _: None), WebhookChannel()],
    )
    return service, clock


# --- webhook parsing + ingestion -----------------------------------------------------------


def test_text_fixture_parses_to_normalized_text():
    update_id, chat_id, inbound = parse_webhook_update(load_fixture("webhook_text.json"))
    assert update_id == 7001
    assert chat_id == "1001"
    assert inbound == InboundText("hello")


def test_callback_fixture_parses_to_normalized_callback():
    update_id, chat_id, inbound = parse_webhook_update(load_fixture("webhook_callback.json"))
    assert update_id == 7002
    assert inbound == InboundCallback("dose:p1-m1-d1:taken")


def test_malformed_fixture_rejected():
    with pytest.raises(MalformedPayload):
        parse_webhook_update(load_fixture("webhook_malformed.json"))
    with pytest.raises(MalformedPayload):
        parse_webhook_update({"update_id": "not-an-int", "message": {"chat": {"id": 1}, "text": "x"}})
    with pytest.raises(MalformedPayload):
        parse_webhook_update(["not", "an", "object"])


def test_ingest_resolves_patient_and_registers_unknown_chat():
    service, _ = quiet_service()
    update, messages = ingest_webhook(service, load_fixture("webhook_text.json"))
    assert update.patient_id == "p1"
    assert update.channel == "webhook"
    assert update.external_chat_id == "1001"
    assert update.kind == InboundText("hello")
    # unregistered chats open Onboarding instead of being rejected
    assert "Roberto" in messages[0].body
    views = service.store.snapshot()
    assert views.registrations == {("webhook", "1001"): "p1"}


def test_duplicate_update_id_is_a_noop():
    service, _ = quiet_service()
    first, msgs1 = ingest_webhook(service, load_fixture("webhook_text.json"))
    seq_after_first = service.store.snapshot().last_seq
    second, msgs2 = ingest_webhook(service, load_fixture("webhook_text.json"))
    assert first is not None
    assert second is None and msgs2 == []
    assert service.store.snapshot().last_seq == seq_after_first


# --- a scripted two-patient deployment -------------------------------------------------------


def webhook_send(service, chat_id, text=None, callback=None, uid=[0]):
    uid[0] += 1
    if text is not None:
        body = {"update_id": uid[0], "message": {"chat": {"id": chat_id}, "text": text}}
    else:
        body = {
            "update_id": uid[0],
            "callback_query": {"data": callback, "message": {"chat": {"id": chat_id}}},
        }
    return ingest_webhook(service, body)


def onboard(service, chat_id, name):
    webhook_send(service, chat_id, text="hi")
    webhook_send(service, chat_id, text=name)
    webhook_send(service, chat_id, callback="opt:UTC")
    webhook_send(service, chat_id, callback="opt:10")
    webhook_send(service, chat_id, callback="opt:none")
    webhook_send(service, chat_id, callback="confirm:yes")


def add_daily_med(service, chat_id, name, quantity, times="08:00"):
    webhook_send(service, chat_id, text="add medication")
    webhook_send(service, chat_id, text=name)
    webhook_send(service, chat_id, text=quantity)
    webhook_send(service, chat_id, callback="opt:mg")
    webhook_send(service, chat_id, text=times)
    webhook_send(service, chat_id, callback="opt:daily")
    webhook_send(service, chat_id, callback="confirm:yes")


def advance(service, clock, *, minutes, step=10):
    for _ in range(0, minutes, step):
        clock.advance(minutes=step)
        service.run_tick()


def fixture_deployment():
    """Two patients: 1001 answers every card, 2002 never responds."""
    service, clock = quiet_service()
    onboard(service, 1001, "Maria")
    onboard(service, 2002, "Ben")
    add_daily_med(service, 1001, "Metformin", "500")
    add_daily_med(service, 2002, "Lisinopril", "10")
    for day in range(3):
        advance(service, clock, minutes=60)  # 07:00(+24h) -> 08:00 card
        webhook_send(service, 1001, callback=f"dose:p1-m1-d{day + 1}:taken")
        advance(service, clock, minutes=23 * 60)  # ben's dose expires on the way
    return service, clock


def test_quick_replies_map_one_to_one_onto_inline_buttons():
    from roberto.dialogue import OutboundMessage, QuickReply
    from roberto.service import telegram_wire

    message = OutboundMessage(
        "p1", "pick one", tuple(QuickReply(f"L{i}", f"t:{i}") for i in range(3))
    )
    wire = telegram_wire("42", message)
    buttons = [b for row in wire["reply_markup"]["inline_keyboard"] for b in row]
    assert [(b["text"], b["callback_data"]) for b in buttons] == [
        ("L0", "t:0"), ("L1", "t:1"), ("L2", "t:2")
    ]
    six = OutboundMessage("p1", "menu", tuple(QuickReply(f"L{i}", f"t:{i}") for i in range(6)))
    rows = telegram_wire("42", six)["reply_markup"]["inline_keyboard"]
    assert [len(r) for r in rows] == [3, 3]
    assert "reply_markup" not in telegram_wire("42", OutboundMessage("p1", "plain"))


def test_dose_card_wire_matches_golden():
    service, clock = quiet_service()
    onboard(service, 1001, "Maria")
    add_daily_med(service, 1001, "Metformin", "500")
    advance(service, clock, minutes=60)
    wires = [
        d.record.wire
        for d in service.store.snapshot().deliveries
        if d.record.card is not None
    ]
    assert len(wires) == 1
    golden = load_fixture("dose_card_wire.golden.json")
    assert json.dumps(wires[0], sort_keys=True) == json.dumps(golden, sort_keys=True)


def test_fixture_deployment_roster_matches_expected():
    service, clock = fixture_deployment()
    rows = service.list_patients()
    for row in rows:
        row.pop("last_activity_at")
    assert rows == [
        {
            "patient_id": "p1",
            "display_name": "Maria",
            "stage": "influence_decisions",  # tenure < 7 days
            "stage_label": "Influence Decisions",
            "rate_7d": 1.0,
            "open_alerts": 0,
            "open_high_alerts": 0,
        },
        {
            "patient_id": "p2",
            "display_name": "Ben",
            "stage": "influence_decisions",
            "stage_label": "Influence Decisions",
            "rate_7d": 0.0,
            "open_alerts": 2,  # medium streak alert at miss 2, high at miss 3
            "open_high_alerts": 1,
        },
    ]


def test_missed_streak_alerts_escalate_in_fixture_deployment():
    service, _ = fixture_deployment()
    alerts = service.list_alerts(patient_id="p2")
    assert [(a.kind.value, a.severity.value) for a in alerts] == [
        ("missed_streak", "medium"),
        ("missed_streak", "high"),
    ]


# --- provider API over HTTP -------------------------------------------------------------------


@pytest.fixture(scope="module")
def deployed():
    service, clock = fixture_deployment()
    return service, clock, TestClient(create_app(service))


def test_api_requires_bearer_token(deployed):
    _, _, client = deployed
    assert client.get("/api/patients").status_code == 401
    assert client.get("/api/patients", headers={"Authorization": "Bearer wrong"}).status_code == 401
    assert client.get("/api/patients", headers=AUTH).status_code == 200


def test_api_empty_deployment_roster():
    service, _ = quiet_service()
    client = TestClient(create_app(service))
    assert client.get("/api/patients", headers=AUTH).json() == []


def test_api_report_for_scripted_history(deployed):
    service, clock, client = deployed
    window = {"start": utc(2025, 6, 2).isoformat(), "end": clock.now().isoformat()}
    body = client.get("/api/patients/p1/report", params=window, headers=AUTH).json()
    assert body["doses_due"] == 3
    assert body["taken"] == 3
    assert body["adherence_rate"] == 1.0
    assert body["stage"] == "influence_decisions"
    assert body["checkin_summary"]["count"] == 0
    ben = client.get("/api/patients/p2/report", params=window, headers=AUTH).json()
    assert (ben["doses_due"], ben["missed"]) == (3, 3)
    assert ben["adherence_rate"] == 0.0
    assert ben["alerts_open"] == 2


def test_api_report_unknown_patient_404(deployed):
    _, _, client = deployed
    assert client.get("/api/patients/p99/report", headers=AUTH).status_code == 404


def test_api_report_is_snapshot_stable(deployed):
    _, clock, client = deployed
    window = {"start": utc(2025, 6, 2).isoformat(), "end": clock.now().isoformat()}
    first = client.get("/api/patients/p1/report", params=window, headers=AUTH)
    second = client.get("/api/patients/p1/report", params=window, headers=AUTH)
    assert first.content == second.content


def test_api_alert_filters_and_idempotent_ack(deployed):
    service, _, client = deployed
    alerts = client.get("/api/alerts?patient_id=p2&kind=missed_streak", headers=AUTH).json()
    assert len(alerts) == 2
    target = alerts[0]["alert_id"]
    first = client.post(f"/api/alerts/{target}/ack", headers=AUTH)
    assert first.status_code == 200 and first.json()["acknowledged"] is True
    second = client.post(f"/api/alerts/{target}/ack", headers=AUTH)
    assert second.status_code == 200 and second.json()["acknowledged"] is True
    assert client.post("/api/alerts/nope/ack", headers=AUTH).status_code == 404
    remaining = client.get("/api/alerts?patient_id=p2&acknowledged=false", headers=AUTH).json()
    assert len(remaining) == 1


def test_api_thread_round_trip_reaches_patient(deployed):
    service, _, client = deployed
    posted = client.post(
        "/api/patients/p1/thread", headers=AUTH, json={"body": "How are you feeling?"}
    )
    assert posted.status_code == 200
    assert posted.json()["sender"] == "provider"
    thread = client.get("/api/patients/p1/thread", headers=AUTH).json()
    assert thread[-1]["body"] == "How are you feeling?"
    # and the patient sees it on their channel
    deliveries = [d.record for d in service.store.snapshot().deliveries if d.patient_id == "p1"]
    assert any("How are you feeling?" in d.body for d in deliveries)


def test_api_timeline_lists_dose_and_checkin_events(deployed):
    _, clock, client = deployed
    window = {"start": utc(2025, 6, 2).isoformat(), "end": clock.now().isoformat()}
    rows = client.get("/api/patients/p2/timeline", params=window, headers=AUTH).json()
    kinds = {r["type"] for r in rows}
    assert "dose_scheduled" in kinds
    assert "reminder_fired" in kinds
    assert "dose_expired" in kinds
    ats = [r["at"] for r in rows]
    assert ats == sorted(ats)


def test_webhook_endpoint_acks_and_rejects(deployed):
    _, _, client = deployed
    ok = client.post("/webhook", json={"update_id": 999001,
                                       "message": {"chat": {"id": 7777}, "text": "hello"}})
    assert ok.status_code == 200 and ok.json() == {"ok": True}
    dup = client.post("/webhook", json={"update_id": 999001,
                                        "message": {"chat": {"id": 7777}, "text": "hello"}})
    assert dup.status_code == 200 and dup.json() == {"ok": True}
    bad = client.post("/webhook", json=load_fixture("webhook_malformed.json"))
    assert bad.status_code == 400
    assert client.get("/health").json() == {"ok": True}


def test_webhook_acks_wellformed_update_even_if_handling_fails(monkeypatch):
    service, _ = quiet_service()
    client = TestClient(create_app(service))

    def explode(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(service, "ingest", explode)
    response = client.post("/webhook", json={"update_id": 1,
                                             "message": {"chat": {"id": 5}, "text": "hi"}})
    assert response.status_code == 200 and response.json() == {"ok": True}


# --- outbound durability -----------------------------------------------------------------------


def test_unregistered_patient_dispatch_raises_and_queues():
    from roberto.dialogue import OutboundMessage
    from roberto.store import PatientRegistered
    from roberto.domain import PatientProfile

    service, clock = quiet_service()
    service.store.append(
        "p9", PatientRegistered(PatientProfile("p9", "Ghost", "UTC", "prov1")), clock.now()
    )
    with pytest.raises(ChannelUnavailable):
        service.dispatch_outbound(OutboundMessage("p9", "hello?"))
    record = service.store.snapshot().deliveries[-1].record
    assert record.status == "queued" and record.attempt == 1


def test_queued_message_fails_after_max_attempts():
    from roberto.dialogue import OutboundMessage
    from roberto.store import PatientRegistered
    from roberto.domain import PatientProfile

    service, clock = quiet_service()
    service.store.append(
        "p9", PatientRegistered(PatientProfile("p9", "Ghost", "UTC", "prov1")), clock.now()
    )
    with pytest.raises(ChannelUnavailable):
        service.dispatch_outbound(OutboundMessage("p9", "hello?"))
    for _ in range(40):  # exponential backoff: 30s, 60s, 120s, 240s
        clock.advance(minutes=1)
        service.run_tick()
    records = [d.record for d in service.store.snapshot().deliveries if d.patient_id == "p9"]
    assert [r.status for r in records] == ["queued", "queued", "queued", "queued", "failed"]
    assert [r.attempt for r in records] == [1, 2, 3, 4, 5]
    assert all(r.message_id == records[0].message_id for r in records)


def test_every_outbound_message_has_a_delivery_record():
    service, clock = fixture_deployment()
    views = service.store.snapshot()
    assert views.deliveries, "fixture produced no messages at all"
    assert all(d.record.status in ("delivered", "queued", "failed") for d in views.deliveries)


# --- per-patient ordering under concurrency ------------------------------------------------------


def test_updates_per_patient_process_in_receipt_order():
    service, _ = quiet_service()
    chats = {"cA": None, "cB": None}
    for chat in chats:
        service.ingest("console", chat, InboundText("hi"))  # registers + onboarding
        service.ingest("console", chat, InboundText("cancel"))
        service.ingest("console", chat, InboundText("talk to my doctor"))

    n = 30
    errors = []

    def send_all(chat):
        try:
            for i in range(n):
                service.ingest("console", chat, InboundText(f"note {i:03d} from {chat}"))
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=send_all, args=(chat,)) for chat in chats]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors

    views = service.store.snapshot()
    for pid, chat in zip(("p1", "p2"), chats):
        bodies = [m.body for m in views.patients[pid].thread]
        assert bodies == [f"note {i:03d} from {chat}" for i in range(n)]

"""Runs a two-patient week under the virtual clock and prints the provider's
view: roster, a report, alerts, and the intervention thread.

    python scripts/demo_report.py
"""

from datetime import timedelta

from roberto.analytics import Window
from roberto.clock import VirtualClock
from roberto.config import ServiceConfig
from roberto.dialogue import InboundCallback, InboundText
from roberto.gateway import alert_payload, report_payload
from roberto.service import ConsoleChannel, RobertoService
from roberto.store import DeliveryRecorded

START = "2025-06-02T07:00:00+00:00"


def say(service, chat, text):
    service.ingest("console", chat, InboundText(text))


def tap(service, chat, token):
    service.ingest("console", chat, InboundCallback(token))


def onboard(service, chat, name):
    say(service, chat, "hi")
    say(service, chat, name)
    tap(service, chat, "opt:UTC")
    tap(service, chat, "opt:10")
    tap(service, chat, "opt:none")
    tap(service, chat, "confirm:yes")


def add_med(service, chat, name, quantity):
    say(service, chat, "add medication")
    say(service, chat, name)
    say(service, chat, quantity)
    tap(service, chat, "opt:mg")
    say(service, chat, "08:00")
    tap(service, chat, "opt:daily")
    tap(service, chat, "confirm:yes")


def main():
    from datetime import datetime

    clock = VirtualClock(datetime.fromisoformat(START))
    service = RobertoService(
        ServiceConfig(), clock=clock, channels=[ConsoleChannel(sink=lambda _: None)]
    )
    onboard(service, "alice-chat", "Alice")
    onboard(service, "bob-chat", "Bob")
    add_med(service, "alice-chat", "Metformin", "500")
    add_med(service, "bob-chat", "Lisinopril", "10")

    # one week: Alice answers every card, Bob stops answering after day 2
    for day in range(7):
        for _ in range(24 * 6):
            clock.advance(minutes=10)
            service.run_tick()
            views = service.store.snapshot()
            for pid, chat in (("p1", "alice-chat"), ("p2", "bob-chat")):
                if pid == "p2" and day >= 2:
                    continue
                for dose in views.patients[pid].doses.values():
                    if type(dose.state).__name__ == "Reminded":
                        tap(service, chat, f"dose:{dose.dose_id}:taken")

    say(service, "bob-chat", "cancel")
    say(service, "bob-chat", "talk to my doctor")
    say(service, "bob-chat", "feeling low, the evenings are hard")
    service.post_intervention("p2", "Thanks for telling me, Bob. Let's talk tomorrow at 10.")

    print("== roster ==")
    for row in service.list_patients():
        print(f"  {row['patient_id']} {row['display_name']:<6} stage={row['stage_label']:<20}"
              f" rate7d={row['rate_7d']} alerts={row['open_alerts']}")

    window = Window(clock.now() - timedelta(days=7), clock.now())
    print("\n== Bob's report ==")
    for key, value in report_payload(service.get_report("p2", window)).items():
        print(f"  {key}: {value}")

    print("\n== open alerts ==")
    for alert in service.list_alerts(acknowledged=False):
        print("  ", alert_payload(alert))

    print("\n== Bob's thread ==")
    for message in service.get_thread("p2"):
        print(f"  [{message.sent_at:%m-%d %H:%M}] {message.sender.value}: {message.body}")

    print("\n== Bob's last notifications ==")
    deliveries = [d for d in service.store.snapshot().deliveries if d.patient_id == "p2"]
    for view in deliveries[-3:]:
        print(f"  [{view.at:%m-%d %H:%M}] {view.record.body.splitlines()[0]}")


if __name__ == "__main__":
    main()

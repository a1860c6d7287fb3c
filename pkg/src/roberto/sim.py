"""Scripted conversation runs under a virtual clock.

A script is a YAML mapping:

    start_at: "2025-06-02T07:00:00+00:00"
    chat_id: "1001"
    steps:
      - text: "/start"
      - text: "Maria"
      - tap: "Yes"              # tap a quick reply on the latest message
      - advance_minutes: 60     # step the clock a minute at a time, ticking
      - callback: "opt:none"    # raw callback token
      - tick: true

The transcript interleaves inbound lines with the deterministic console
rendering of every delivery the service records, so two runs of the same
script are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml

from .clock import VirtualClock
from .config import ServiceConfig
from .dialogue import InboundCallback, InboundText
from .service import ConsoleChannel, RobertoService
from .store import DeliveryRecorded


class ScriptError(Exception):
    pass


@dataclass
class _Transcript:
    lines: list[str]

    def inbound(self, at, chat_id: str, kind: str, payload: str) -> None:
        self.lines.append(f"[{at.isoformat()}] >> {chat_id} {kind}: {payload}")

    def outbound(self, at, patient_id: str, record: DeliveryRecorded) -> None:
        self.lines.append(f"[{at.isoformat()}] << {patient_id} ({record.status})")
        if record.card is not None:
            card = record.card
            self.lines.append(
                f"    card: {card['title']} | {card['medication_name']} | "
                f"{card['dose']} | due {card['due_local']}"
            )
        for line in record.body.splitlines():
            self.lines.append(f"    {line}")
        if record.quick_replies:
            buttons = " ".join(f"[{label}]({token})" for label, token in record.quick_replies)
            self.lines.append(f"    buttons: {buttons}")

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def run_script(script: dict, *, config: ServiceConfig | None = None) -> tuple[str, RobertoService]:
    """Run one scripted conversation; returns (transcript, service)."""
    start_at = script.get("start_at")
    if not start_at:
        raise ScriptError("script needs start_at")
    from datetime import datetime

    clock = VirtualClock(datetime.fromisoformat(str(start_at)))
    config = config or ServiceConfig()
    service = RobertoService(config, clock=clock, channels=[ConsoleChannel(sink=lambda _: None)])
    chat_id = str(script.get("chat_id", "sim-chat"))
    transcript = _Transcript(lines=[])
    seen_seq = 0

    def drain() -> None:
        nonlocal seen_seq
        for event in service.store.events():
            if event.seq <= seen_seq:
                continue
            if isinstance(event.payload, DeliveryRecorded):
                transcript.outbound(event.at, event.patient_id, event.payload)
            seen_seq = max(seen_seq, event.seq)

    def latest_tap_token(label: str) -> str:
        for event in reversed(service.store.events()):
            payload = event.payload
            if isinstance(payload, DeliveryRecorded) and payload.quick_replies:
                for qr_label, token in payload.quick_replies:
                    if qr_label.lower() == label.lower():
                        return token
                raise ScriptError(f"latest buttons have no '{label}'")
        raise ScriptError("no buttons to tap yet")

    for i, step in enumerate(script.get("steps") or []):
        if not isinstance(step, dict) or len(step) != 1:
            raise ScriptError(f"step {i} must be a single-key mapping")
        (action, value), = step.items()
        if action == "text":
            transcript.inbound(clock.now(), chat_id, "text", str(value))
            service.ingest("console", chat_id, InboundText(str(value)))
        elif action == "callback":
            transcript.inbound(clock.now(), chat_id, "callback", str(value))
            service.ingest("console", chat_id, InboundCallback(str(value)))
        elif action == "tap":
            token = latest_tap_token(str(value))
            transcript.inbound(clock.now(), chat_id, "tap", f"{value} -> {token}")
            service.ingest("console", chat_id, InboundCallback(token))
        elif action == "advance_minutes":
            for _ in range(int(value)):
                clock.advance(minutes=1)
                service.run_tick()
        elif action == "tick":
            service.run_tick()
        else:
            raise ScriptError(f"step {i}: unknown action '{action}'")
        drain()

    return transcript.text(), service


def run_script_text(text: str, *, config: ServiceConfig | None = None) -> tuple[str, RobertoService]:
    script = yaml.safe_load(text)
    if not isinstance(script, dict):
        raise ScriptError("script file must be a YAML mapping")
    return run_script(script, config=config)

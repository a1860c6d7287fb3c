"""HTTP shell: the chat-channel webhook (a compatible subset of the Telegram
bot update schema) and the provider API the dashboard consumes.

Webhook subset accepted at POST /webhook:
    {"update_id": <int>, "message": {"chat": {"id": <int|str>}, "text": <str>}}
    {"update_id": <int>, "callback_query": {"data": <str>,
                                            "message": {"chat": {"id": <int|str>}}}}

Provider API (bearer token from config, JSON bodies):
    GET  /api/patients, GET /api/patients/{id}/report?start&end
    GET  /api/alerts?patient_id&kind&acknowledged, POST /api/alerts/{id}/ack
    GET  /api/patients/{id}/thread, POST /api/patients/{id}/thread {"body": ...}
    GET  /api/patients/{id}/timeline?start&end, GET /health
"""

from __future__ import annotations

import logging
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .analytics import STAGE_LABELS, AdherenceReport, MalformedWindow, Window
from .dialogue import InboundCallback, InboundText, Inbound
from .domain import Alert, AlertKind, InterventionMessage
from .service import (
    NormalizedUpdate,
    RobertoService,
    UnknownAlert,
    UnknownPatient,
)


logger = logging.getLogger(__name__)


class MalformedPayload(Exception):
    pass


def parse_webhook_update(raw: object) -> tuple[int, str, Inbound]:
    """Validate one webhook update; returns (update_id, chat_id, inbound)."""
    if not isinstance(raw, Mapping):
        raise MalformedPayload("update must be an object")
    update_id = raw.get("update_id")
    if not isinstance(update_id, int):
        raise MalformedPayload("update_id must be an integer")
    message = raw.get("message")
    callback = raw.get("callback_query")
    if isinstance(message, Mapping):
        chat = message.get("chat")
        if not isinstance(chat, Mapping) or not isinstance(chat.get("id"), (int, str)):
            raise MalformedPayload("message.chat.id missing")
        text = message.get("text")
        if not isinstance(text, str):
            raise MalformedPayload("message.text must be a string")
        return update_id, str(chat["id"]), InboundText(text)
    if isinstance(callback, Mapping):
        data = callback.get("data")
        if not isinstance(data, str):
            raise MalformedPayload("callback_query.data must be a string")
        chat = (callback.get("message") or {}).get("chat") if isinstance(callback.get("message"), Mapping) else None
        if not isinstance(chat, Mapping) or not isinstance(chat.get("id"), (int, str)):
            raise MalformedPayload("callback_query.message.chat.id missing")
        return update_id, str(chat["id"]), InboundCallback(data)
    raise MalformedPayload("update carries neither message nor callback_query")


def ingest_webhook(service: RobertoService, raw: object):
    """Parse + normalize + process one webhook update.

    Returns (NormalizedUpdate or None when deduplicated, outbound messages).
    """
    update_id, chat_id, inbound = parse_webhook_update(raw)
    return service.ingest("webhook", chat_id, inbound, update_id=update_id)


# ---------------------------------------------------------------------------
# serializers


def _rate(value: float | None) -> float | None:
    return None if value is None else round(value, 6)


def report_payload(report: AdherenceReport) -> dict:
    summary = report.checkin_summary
    return {
        "patient_id": report.patient_id,
        "window": {"start": report.window.start.isoformat(), "end": report.window.end.isoformat()},
        "doses_due": report.doses_due,
        "taken": report.taken,
        "skipped": report.skipped,
        "missed": report.missed,
        "adherence_rate": _rate(report.adherence_rate),
        "trend_delta": _rate(report.trend_delta),
        "stage": report.stage.value,
        "stage_label": STAGE_LABELS[report.stage],
        "checkin_summary": {
            "count": summary.count,
            "mood_avg": _rate(summary.mood_avg),
            "stress_avg": _rate(summary.stress_avg),
            "sleep_avg": _rate(summary.sleep_avg),
        },
        "alerts_open": report.alerts_open,
    }


def alert_payload(alert: Alert) -> dict:
    return {
        "alert_id": alert.alert_id,
        "patient_id": alert.patient_id,
        "kind": alert.kind.value,
        "severity": alert.severity.value,
        "created_at": alert.created_at.isoformat(),
        "acknowledged": alert.acknowledged,
        "detail": alert.detail,
    }


def thread_payload(message: InterventionMessage) -> dict:
    return {
        "patient_id": message.patient_id,
        "provider_id": message.provider_id,
        "sender": message.sender.value,
        "body": message.body,
        "sent_at": message.sent_at.isoformat(),
    }


# ---------------------------------------------------------------------------
# the app


class InterventionBody(BaseModel):
    body: str


def create_app(service: RobertoService, *, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="roberto", docs_url=None, redoc_url=None)

    def require_auth(request: Request) -> None:
        header = request.headers.get("authorization", "")
        scheme, _, token = header.partition(" ")
        if scheme.lower() != "bearer" or token != service.config.auth_token:
            raise HTTPException(status_code=401, detail="unauthorized")

    def parse_window(start: str | None, end: str | None) -> Window:
        now = service.clock.now()
        try:
            end_dt = now if end is None else datetime.fromisoformat(end)
            start_dt = end_dt - timedelta(days=7) if start is None else datetime.fromisoformat(start)
            return Window(start_dt, end_dt)
        except (ValueError, MalformedWindow) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/health")
    def health():
        return {"ok": True}

    @app.post("/webhook")
    async def webhook(request: Request):
        try:
            raw = await request.json()
        except Exception:
            return JSONResponse({"ok": False, "error": "body is not JSON"}, status_code=400)
        try:
            ingest_webhook(service, raw)
        except MalformedPayload as exc:
            return JSONResponse({"ok": False, "error": str(exc)}, status_code=400)
        except Exception:
            # well-formed updates are acked even when handling trips up;
            # at-least-once redelivery of a poison update would loop forever
            logger.exception("webhook update failed after parsing")
        return {"ok": True}

    @app.get("/api/patients", dependencies=[Depends(require_auth)])
    def patients():
        return service.list_patients()

    @app.get("/api/patients/{patient_id}/report", dependencies=[Depends(require_auth)])
    def report(patient_id: str, start: str | None = None, end: str | None = None):
        window = parse_window(start, end)
        try:
            return report_payload(service.get_report(patient_id, window))
        except UnknownPatient:
            raise HTTPException(status_code=404, detail="unknown patient")

    @app.get("/api/alerts", dependencies=[Depends(require_auth)])
    def alerts(patient_id: str | None = None, kind: str | None = None, acknowledged: bool | None = None):
        kind_enum = None
        if kind is not None:
            try:
                kind_enum = AlertKind(kind)
            except ValueError:
                raise HTTPException(status_code=422, detail=f"unknown alert kind '{kind}'")
        found = service.list_alerts(patient_id=patient_id, kind=kind_enum, acknowledged=acknowledged)
        return [alert_payload(a) for a in found]

    @app.post("/api/alerts/{alert_id}/ack", dependencies=[Depends(require_auth)])
    def ack(alert_id: str):
        try:
            return alert_payload(service.ack_alert(alert_id))
        except UnknownAlert:
            raise HTTPException(status_code=404, detail="unknown alert")

    @app.get("/api/patients/{patient_id}/thread", dependencies=[Depends(require_auth)])
    def thread(patient_id: str):
        try:
            return [thread_payload(m) for m in service.get_thread(patient_id)]
        except UnknownPatient:
            raise HTTPException(status_code=404, detail="unknown patient")

    @app.post("/api/patients/{patient_id}/thread", dependencies=[Depends(require_auth)])
    def post_thread(patient_id: str, body: InterventionBody):
        try:
            return thread_payload(service.post_intervention(patient_id, body.body))
        except UnknownPatient:
            raise HTTPException(status_code=404, detail="unknown patient")

    @app.get("/api/patients/{patient_id}/timeline", dependencies=[Depends(require_auth)])
    def timeline(patient_id: str, start: str | None = None, end: str | None = None):
        window = parse_window(start, end)
        try:
            return service.get_timeline(patient_id, window)
        except UnknownPatient:
            raise HTTPException(status_code=404, detail="unknown patient")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="dashboard")

    return app

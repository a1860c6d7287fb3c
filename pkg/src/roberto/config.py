"""Service configuration: thresholds, defaults, paths, and auth.

All tunables live here with the shipped defaults; the numbers are
non-clinical placeholders. A YAML file overrides any subset of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import time
from importlib import resources
from pathlib import Path

import yaml

from .domain import LocalTimeInterval, ReminderPrefs


@dataclass(frozen=True)
class EscalationConfig:
    streak_medium: int = 2
    streak_high: int = 3


@dataclass(frozen=True)
class AnalyticsConfig:
    sustain_rate: float = 0.8
    floor_rate: float = 0.5
    drop_delta: float = 0.2
    rate_window_days: int = 7
    drop_window_days: int = 14
    milestone_streak: int = 7


@dataclass(frozen=True)
class ServiceConfig:
    auth_token: str = "dev-token"
    default_provider_id: str = "provider-1"
    default_timezone: str = "UTC"
    tick_interval_seconds: int = 30
    dedup_window: int = 1024
    page_chars: int = 600
    redelivery_base_seconds: int = 30
    redelivery_max_attempts: int = 5
    log_path: str | None = None  # None keeps the event log in memory
    kb_path: str | None = None  # None loads the packaged knowledge base
    flows_path: str | None = None
    templates_path: str | None = None
    default_prefs: ReminderPrefs = field(default_factory=ReminderPrefs)
    escalation: EscalationConfig = field(default_factory=EscalationConfig)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)


class ConfigError(Exception):
    pass


def _parse_quiet_hours(raw) -> LocalTimeInterval | None:
    if raw in (None, "", "none"):
        return None
    try:
        start_s, end_s = str(raw).split("-")
        return LocalTimeInterval(time.fromisoformat(start_s), time.fromisoformat(end_s))
    except ValueError as exc:
        raise ConfigError(f"quiet_hours must look like '22:00-07:00', got {raw!r}") from exc


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Defaults overlaid with the YAML file at `path` (when given)."""
    if path is None:
        return ServiceConfig()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must be a YAML mapping")

    prefs_raw = raw.get("default_prefs") or {}
    prefs = ReminderPrefs(
        snooze_minutes=prefs_raw.get("snooze_minutes", 10),
        max_reminders_per_dose=prefs_raw.get("max_reminders_per_dose", 3),
        response_window_minutes=prefs_raw.get("response_window_minutes", 60),
        quiet_hours=_parse_quiet_hours(prefs_raw.get("quiet_hours")),
    )
    esc_raw = raw.get("escalation") or {}
    analytics_raw = raw.get("analytics") or {}
    known = {
        "auth_token",
        "default_provider_id",
        "default_timezone",
        "tick_interval_seconds",
        "dedup_window",
        "page_chars",
        "redelivery_base_seconds",
        "redelivery_max_attempts",
        "log_path",
        "kb_path",
        "flows_path",
        "templates_path",
    }
    unknown = set(raw) - known - {"default_prefs", "escalation", "analytics"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    scalars = {k: raw[k] for k in known if k in raw}
    return ServiceConfig(
        default_prefs=prefs,
        escalation=EscalationConfig(**esc_raw),
        analytics=AnalyticsConfig(**analytics_raw),
        **scalars,
    )


def packaged_text(name: str) -> str:
    return resources.files("roberto.data").joinpath(name).read_text(encoding="utf-8")


def read_kb_text(config: ServiceConfig) -> str:
    if config.kb_path:
        return Path(config.kb_path).read_text(encoding="utf-8")
    return packaged_text("knowledge_base.yaml")


def read_flows_text(config: ServiceConfig) -> str:
    if config.flows_path:
        return Path(config.flows_path).read_text(encoding="utf-8")
    return packaged_text("flows.yaml")


def read_templates_text(config: ServiceConfig) -> str:
    if config.templates_path:
        return Path(config.templates_path).read_text(encoding="utf-8")
    return packaged_text("templates.yaml")

"""Command line entry points: serve, chat, simulate."""

from __future__ import annotations

import logging
import threading
import time as time_mod
from pathlib import Path

import click

from .clock import WallClock
from .config import load_config
from .dialogue import InboundText
from .gateway import create_app
from .service import RobertoService
from .sim import run_script_text


@click.group()
def main():
    """Roberto: medication-adherence chat service."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="YAML config file.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
@click.option("--log", "log_path", type=click.Path(), default=None, help="Event log file (overrides config).")
@click.option("--static", "static_dir", type=click.Path(), default=None, help="Dashboard bundle to serve at /.")
def serve(config_path, host, port, log_path, static_dir):
    """Run the webhook + provider API server with the wall clock."""
    import uvicorn
    from dataclasses import replace

    logging.basicConfig(level=logging.INFO)
    config = load_config(config_path)
    if log_path is not None:
        config = replace(config, log_path=log_path)
    service = RobertoService(config, clock=WallClock())

    def tick_loop():
        while True:
            time_mod.sleep(config.tick_interval_seconds)
            try:
                service.run_tick()
            except Exception:  # keep the loop alive; the log has the details
                logging.getLogger(__name__).exception("tick failed")

    threading.Thread(target=tick_loop, daemon=True).start()
    app = create_app(service, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--chat-id", default="console-1", show_default=True, help="Local chat identity.")
def chat(config_path, chat_id):
    """Interactive console channel against a local instance (manual testing)."""
    config = load_config(config_path)
    service = RobertoService(config, clock=WallClock())
    click.echo("Console chat. Type messages; ':tick' forces a scheduler pass; ':quit' exits.")
    while True:
        try:
            line = input("> ").strip()
        except (EOFError, KeyboardInterrupt):
            click.echo("")
            break
        if not line:
            continue
        if line == ":quit":
            break
        if line == ":tick":
            service.run_tick()
            continue
        service.run_tick()
        service.ingest("console", chat_id, InboundText(line))


@main.command()
@click.argument("script", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write the transcript here too.")
def simulate(script, config_path, out_path):
    """Replay a scripted patient transcript at virtual-clock speed."""
    config = load_config(config_path)
    transcript, _ = run_script_text(Path(script).read_text(encoding="utf-8"), config=config)
    if out_path:
        Path(out_path).write_text(transcript, encoding="utf-8")
    click.echo(transcript, nl=False)


if __name__ == "__main__":
    main()

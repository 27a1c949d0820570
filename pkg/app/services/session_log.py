"""Per-run event log: one JSON object per line in ``<out>/events.jsonl``."""
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

from app.services.logging import MAX_MESSAGE

logger = logging.getLogger(__name__)

_events_path: Path | None = None


def open_run_log(out_dir: str | Path) -> Path:
    global _events_path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _events_path = out_dir / "events.jsonl"
    return _events_path


def close_run_log() -> None:
    global _events_path
    _events_path = None


def log_run_event(
    step: str,
    message: str,
    payload: dict | None = None,
    response: dict | None = None,
) -> None:
    event = {
        "at": datetime.now(timezone.utc).isoformat(),
        "step": step,
        "message": message[:MAX_MESSAGE],
        "payload": payload,
        "response": response,
    }
    logger.debug("%s: %s", step, message)
    if _events_path is None:
        return
    with _events_path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(event, default=str) + "\n")

"""
Logging utilities with a local JSON event log
"""
import os
import sys
import json
import logging
from datetime import datetime, timedelta
from threading import Lock

import pytz
from dotenv import load_dotenv

load_dotenv()

EVENTS_FILE_NAME = "events.json"
EVENT_TYPES = ("event", "error", "metric")

_events_lock = Lock()


def _env_flag(name, default):
    return os.getenv(name, default).lower() == "true"


def is_debug():
    return _env_flag("BSPGRU_DEBUG", "False")


def setup_logging():
    """Setup stdlib logging for the toolkit"""
    logging.basicConfig(
        level=logging.INFO if is_debug() else logging.WARNING,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def debug_print(message):
    """Print debug messages to stderr"""
    if is_debug():
        print(f"[DEBUG {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}] {message}", file=sys.stderr)


def events_file():
    """Location of the event log, resolved on every call"""
    return os.path.join(os.getenv("BSPGRU_DATA_DIR", "data"), EVENTS_FILE_NAME)


def _max_events():
    try:
        return int(os.getenv("BSPGRU_MAX_EVENTS", "10000"))
    except ValueError:
        return 10000


def _load_events():
    """Load events from JSON file"""
    path = events_file()
    try:
        if os.path.exists(path):
            with open(path, 'r') as f:
                return json.load(f)
    except Exception as e:
        debug_print(f"Error loading events: {e}")
    return []


def _save_events(events):
    """Save events to JSON file"""
    try:
        os.makedirs(os.path.dirname(events_file()) or ".", exist_ok=True)
        limit = _max_events()
        if len(events) > limit:
            events = events[-limit:]

        with open(events_file(), 'w') as f:
            json.dump(events, f, indent=2)
        return True
    except Exception as e:
        debug_print(f"Error saving events: {e}")
        return False


def log_event(event_type, note="", type="event", metadata=None):
    """Append a structured record to the event log; never raises"""
    debug_print(f"{event_type} - {note}")
    if not _env_flag("BSPGRU_EVENTS", "True"):
        return False

    try:
        entry = {
            "timestamp": datetime.now(pytz.UTC).isoformat(),
            "event_type": event_type,
            "note": note[:255] if note else "",
            "type": type if type in EVENT_TYPES else "event",
            "metadata": metadata if metadata else {}
        }
        with _events_lock:
            events = _load_events()
            events.append(entry)
            return _save_events(events)

    except Exception as e:
        debug_print(f"Event log exception: {e}")
        return False


def get_events(hours=24, limit=500, event_type=None):
    """Fetch recent events, newest first"""
    try:
        with _events_lock:
            events = _load_events()

        since = datetime.now(pytz.UTC) - timedelta(hours=hours)
        selected = []
        for event in events:
            if event_type and event.get("event_type") != event_type:
                continue
            try:
                stamp = datetime.fromisoformat(event['timestamp'])
                if stamp.tzinfo is None:
                    stamp = pytz.UTC.localize(stamp)
                if stamp >= since:
                    selected.append(event)
            except Exception as e:
                debug_print(f"Error parsing event timestamp: {e}")
                selected.append(event)

        selected.sort(key=lambda x: x.get('timestamp', ''), reverse=True)
        return selected[:limit]

    except Exception as e:
        debug_print(f"Exception fetching events: {e}")
        return []

"""Canonical serialization primitives shared by every module.

All persisted and signed artifacts in this toolkit go through one encoding:
UTF-8 JSON with lexicographically sorted keys, no whitespace, ASCII-escaped
strings, and base64url (unpadded) for byte fields. Timestamps are RFC 3339
UTC strings. The encoding is a pure function of the value, so identical
values produce identical bytes on every platform and every run.

Also provides the flat ``key = value`` config format used by gateway,
honeypot, and triage configuration files.
"""

from __future__ import annotations

import base64
import json
import re
from datetime import datetime, timezone
from typing import Any


def canonical_json_bytes(obj: Any) -> bytes:
    """Serialize a JSON-compatible object to canonical bytes.

    Keys sorted, separators ``(",", ":")``, ``ensure_ascii=True`` so output
    is pure ASCII, ``allow_nan=False`` so every value round-trips exactly.
    """
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
        allow_nan=False,
    ).encode("ascii")


def b64url_encode(data: bytes) -> str:
    """Base64url without padding."""
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def b64url_decode(text: str) -> bytes:
    pad = -len(text) % 4
    return base64.urlsafe_b64decode(text + "=" * pad)


_RFC3339_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,6}))?Z$"
)


def format_rfc3339(dt: datetime) -> str:
    """Format an aware UTC datetime as RFC 3339.

    Fractional seconds are included only when nonzero and trimmed of
    trailing zeros, so the text form is a pure function of the instant.
    """
    if dt.tzinfo is None:
        raise ValueError("timestamp must be timezone-aware")
    dt = dt.astimezone(timezone.utc)
    text = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if dt.microsecond:
        text += (".%06d" % dt.microsecond).rstrip("0")
    return text + "Z"


def parse_rfc3339(text: str) -> datetime:
    m = _RFC3339_RE.match(text)
    if not m:
        raise ValueError(f"not an RFC 3339 UTC timestamp: {text!r}")
    year, month, day, hour, minute, second = (int(g) for g in m.groups()[:6])
    frac = m.group(7)
    micro = int(frac.ljust(6, "0")) if frac else 0
    return datetime(year, month, day, hour, minute, second, micro, tzinfo=timezone.utc)


def utc(year: int, month: int, day: int, hour: int = 0, minute: int = 0,
        second: int = 0, microsecond: int = 0) -> datetime:
    """Shorthand for constructing aware UTC datetimes."""
    return datetime(year, month, day, hour, minute, second, microsecond,
                    tzinfo=timezone.utc)


# ---------------------------------------------------------------------------
# Flat key/value config format: one "key = value" pair per line, "#" comments.
# Values are raw strings; typed accessors coerce on read.
# ---------------------------------------------------------------------------

def parse_flat_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def format_flat_config(entries: dict[str, str]) -> str:
    lines = [f"{key} = {value}" for key, value in sorted(entries.items())]
    return "\n".join(lines) + "\n"


def config_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")

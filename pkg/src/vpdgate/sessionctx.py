"""Per-session context: session user, reported location, reported time.

A SessionContext is the record consulted when a query references
sys_context keys. Location and time are client-reported and trusted as
reported; the engine only checks them against planned routes, it does
not verify them against any positioning infrastructure. A context with
no location/time models a wired (non-moving) login.

Contexts are immutable; re-login creates a new session id.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import UnboundContextKeyError, UnknownSubjectError

Point = tuple[float, float]

CONTEXT_KEYS = ("session_user", "l", "t")


@dataclass(frozen=True)
class SessionContext:
    session_id: str
    user: str
    location: Point | None
    timestamp: datetime | None
    opened_at: datetime

    @property
    def wireless(self) -> bool:
        """True when both location and time are reported."""
        return self.location is not None and self.timestamp is not None


def open_session(user: str, location: Point | None, timestamp: datetime | None,
                 dataset, *, session_id: str | None = None,
                 opened_at: datetime | None = None) -> SessionContext:
    """Open a session for an existing subject.

    Absent location/time is a wired login; such a session can evaluate
    queries that never touch sys_context:l or sys_context:t.
    """
    if user not in dataset.subject_by_name:
        raise UnknownSubjectError(user)
    if location is not None:
        lat, lon = location
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise ValueError(f"location ({lat}, {lon}) outside valid range")
        location = (float(lat), float(lon))
    return SessionContext(
        session_id=session_id or uuid.uuid4().hex,
        user=user,
        location=location,
        timestamp=timestamp,
        opened_at=opened_at or timestamp or datetime.now(timezone.utc),
    )


def context_lookup(ctx: SessionContext, key: str):
    """Bound value of a context key; raises UnboundContextKeyError when absent."""
    if key not in CONTEXT_KEYS:
        raise ValueError(f"not a context key: {key!r}")
    if key == "session_user":
        return ctx.user
    value = ctx.location if key == "l" else ctx.timestamp
    if value is None:
        raise UnboundContextKeyError(key)
    return value


class SessionRegistry:
    """Session store keyed by session id; inserts and removals serialized."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sessions: dict[str, SessionContext] = {}

    def add(self, ctx: SessionContext) -> None:
        with self._lock:
            self._sessions[ctx.session_id] = ctx

    def get(self, session_id: str) -> SessionContext | None:
        return self._sessions.get(session_id)

    def remove(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)

    def latest_by_user(self) -> dict[str, SessionContext]:
        """Most recently opened context per user (insertion order wins)."""
        out: dict[str, SessionContext] = {}
        for ctx in self._sessions.values():
            out[ctx.user] = ctx
        return out

    def __len__(self) -> int:
        return len(self._sessions)

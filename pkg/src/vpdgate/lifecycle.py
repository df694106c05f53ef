"""Grant/revoke lifecycle of per-subject VPDs.

A wireless session (reported location and time) is GRANTED exactly when
some carrier assignment of the subject accepts the report: distance to
the planned polyline within the corridor and the time inside
[departure, arrival], both inclusive, checked jointly per carrier. A
wired session is granted; with subordinates it is a supervisor whose
union shrinks and grows as subordinate validity changes. Two supervisor
modes exist:

* narrative (default): invalid subordinates are dropped from the
  supervisor's union, the supervisor itself stays granted;
* strict: any moving subordinate whose known context fails the route
  check revokes the supervisor wholesale.

States and events are plain values; nothing here caches a
materialization across context or dataset changes.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path

from . import linkage
from .errors import UnknownSubjectError
from .queryir import RowSet, Select, STAR, TableRef, parse_query, row_sort_key
from .relstore import Dataset
from .sessionctx import SessionContext
from .timeutil import format_timestamp, parse_timestamp
from .vpdrewrite import (
    ContextMap,
    VpdDefinition,
    expand_supervisor,
    materialize,
    rewrite,
    subordinate_known_invalid,
)

GRANTED = "GRANTED"
REVOKED = "REVOKED"
DENIED = "DENIED"

GRANT = "GRANT"
REVOKE = "REVOKE"
DENY = "DENY"
VPD_CHANGED = "VPD_CHANGED"

REASON_IN_RANGE = "in-range"
REASON_OUT_OF_ROUTE = "out-of-route"
REASON_OUT_OF_TIME = "out-of-time"
REASON_NO_ASSIGNMENT = "no-assignment"
REASON_STRICT_SUBORDINATE = "strict-subordinate-invalid"

SUPERVISOR_MODES = ("narrative", "strict")

EVENT_LOG_VERSION = 1

DEFAULT_QUERY = Select(projection=(STAR,), tables=(TableRef("object"),))


@dataclass(frozen=True)
class GrantState:
    subject: str
    session_id: str
    state: str  # GRANTED | REVOKED | DENIED
    since: datetime
    reason: str

    @property
    def valid(self) -> bool:
        return self.state == GRANTED


@dataclass(frozen=True)
class AccessEvent:
    at: datetime
    subject: str
    transition: str  # GRANT | REVOKE | DENY | VPD_CHANGED
    reason: str
    vpds: tuple[str, ...]


def check_validity(s: str, ctx: SessionContext, d: Dataset,
                   mode: str = "narrative", contexts: ContextMap | None = None) -> GrantState:
    """Stateless validity decision for subject s under context ctx.

    Wireless sessions are gated by the joint route/time check over the
    subject's assignments (out-of-time is reported when no carrier
    window contains the time, out-of-route otherwise). Wired sessions
    follow the supervisor rules of the selected mode.
    """
    if s not in d.subject_by_name:
        raise UnknownSubjectError(s)
    since = ctx.timestamp or ctx.opened_at

    if ctx.wireless:
        ranges = linkage.location_range(s, d)
        if not ranges:
            return GrantState(s, ctx.session_id, DENIED, since, REASON_NO_ASSIGNMENT)
        if linkage.any_in_range(ctx.location, ctx.timestamp, ranges):
            return GrantState(s, ctx.session_id, GRANTED, since, REASON_IN_RANGE)
        if not any(r.t_b <= ctx.timestamp <= r.t_e for r in ranges):
            return GrantState(s, ctx.session_id, REVOKED, since, REASON_OUT_OF_TIME)
        return GrantState(s, ctx.session_id, REVOKED, since, REASON_OUT_OF_ROUTE)

    if mode == "strict":
        for sub in sorted(linkage.subordinates(s, d)):
            if subordinate_known_invalid(sub, d, contexts):
                return GrantState(s, ctx.session_id, REVOKED, since,
                                  REASON_STRICT_SUBORDINATE)
    return GrantState(s, ctx.session_id, GRANTED, since, REASON_IN_RANGE)


def on_context_update(s: str, new_ctx: SessionContext, d: Dataset,
                      prior: GrantState | None, *, mode: str = "narrative",
                      contexts: ContextMap | None = None,
                      now: datetime | None = None) -> tuple[GrantState, list[AccessEvent]]:
    """Recompute validity after a context change and emit transition events.

    GRANT fires on the invalid-to-valid edge, REVOKE on valid-to-invalid,
    DENY on a first evaluation that is already invalid; no event when
    validity is unchanged. Supervisors of s additionally receive a
    VPD_CHANGED event whenever s's validity flips.
    """
    state = check_validity(s, new_ctx, d, mode, contexts)
    at = now or new_ctx.timestamp or new_ctx.opened_at
    state = replace(state, since=at)

    was_valid = prior is not None and prior.valid
    never_granted = prior is None or prior.state == DENIED
    if state.state == DENIED and not never_granted:
        # Previously valid subjects are revoked, not denied.
        state = replace(state, state=REVOKED)

    events: list[AccessEvent] = []
    flipped = False
    if state.valid and not was_valid:
        events.append(AccessEvent(at, s, GRANT, state.reason, (s,)))
        flipped = True
    elif not state.valid and was_valid:
        events.append(AccessEvent(at, s, REVOKE, state.reason, (s,)))
        flipped = True
    elif not state.valid and prior is None:
        events.append(AccessEvent(at, s, DENY, state.reason, (s,)))

    if flipped:
        for sup in linkage.supervisors(s, d):
            events.append(AccessEvent(at, sup, VPD_CHANGED, state.reason, (sup, s)))
    return state, events


# ---------------------------------------------------------------------------
# Gated materialization and privacy residual
# ---------------------------------------------------------------------------

def build_vpd(ctx: SessionContext, d: Dataset, query=None, *,
              chain_mode: str = "workflow", supervisor_mode: str = "narrative",
              contexts: ContextMap | None = None) -> VpdDefinition:
    """Rewrite (and, for subjects with subordinates, expand) a request."""
    if isinstance(query, str):
        query = parse_query(query)
    base = rewrite(query or DEFAULT_QUERY, ctx, d, (), chain_mode)
    if linkage.subordinates(ctx.user, d):
        return expand_supervisor(ctx.user, base, d, contexts=contexts,
                                 supervisor_mode=supervisor_mode)
    return base


def accessible_rowset(ctx: SessionContext, d: Dataset, query=None, *,
                      chain_mode: str = "workflow", supervisor_mode: str = "narrative",
                      contexts: ContextMap | None = None,
                      state: GrantState | None = None) -> RowSet:
    """Materialized VPD rows behind the lifecycle gate (invalid => empty)."""
    if state is None:
        state = check_validity(ctx.user, ctx, d, supervisor_mode, contexts)
    v = build_vpd(ctx, d, query, chain_mode=chain_mode,
                  supervisor_mode=supervisor_mode, contexts=contexts)
    rows = materialize(v, d, ctx)
    if not state.valid:
        return RowSet(rows.schema, ())
    return rows


def privacy_residual(a: str, b: str, ctx_a: SessionContext, ctx_b: SessionContext,
                     d: Dataset, *, mode_a: str = "workflow", mode_b: str = "workflow",
                     supervisor_mode: str = "narrative",
                     contexts: ContextMap | None = None) -> RowSet:
    """Rows private to a relative to b: materialize(vpd(a)) minus materialize(vpd(b)).

    Both sides are gated by validity, so an invalid VPD contributes the
    empty set. Rows are compared as sets over the materialized schema.
    """
    rows_a = accessible_rowset(ctx_a, d, chain_mode=mode_a,
                               supervisor_mode=supervisor_mode, contexts=contexts)
    rows_b = accessible_rowset(ctx_b, d, chain_mode=mode_b,
                               supervisor_mode=supervisor_mode, contexts=contexts)
    residual = set(rows_a.rows) - set(rows_b.rows)
    return RowSet(rows_a.schema, tuple(sorted(residual, key=row_sort_key)))


# ---------------------------------------------------------------------------
# Event log (JSON lines, stable field order)
# ---------------------------------------------------------------------------

def event_to_dict(e: AccessEvent) -> dict:
    return {
        "v": EVENT_LOG_VERSION,
        "at": format_timestamp(e.at),
        "subject": e.subject,
        "transition": e.transition,
        "reason": e.reason,
        "vpds": list(e.vpds),
    }


def event_from_dict(doc: dict) -> AccessEvent:
    return AccessEvent(at=parse_timestamp(doc["at"]), subject=doc["subject"],
                       transition=doc["transition"], reason=doc["reason"],
                       vpds=tuple(doc["vpds"]))


def render_event_log(events: list[AccessEvent]) -> str:
    out = io.StringIO()
    for e in events:
        out.write(json.dumps(event_to_dict(e), separators=(", ", ": ")))
        out.write("\n")
    return out.getvalue()


def write_event_log(events: list[AccessEvent], path: str | Path) -> None:
    Path(path).write_text(render_event_log(events), encoding="utf-8")


def read_event_log(path: str | Path) -> list[AccessEvent]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [event_from_dict(json.loads(line)) for line in lines if line.strip()]

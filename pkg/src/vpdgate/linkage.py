"""Link discovery between a requesting subject and target data.

Four kinds of linkage drive the access predicates:

* route ranges   - the planned polyline and time window of every carrier
                   a subject is assigned to (location_range / time_range),
                   with a configurable corridor width for "along the route";
* workflow       - the shortest declared foreign-key chain from the
                   subject table to a target table;
* organization   - transitive subordination over the org_hierarchy DAG;
* direct/specialty - sender/receiver identity or specialty/name match.

All functions are pure over an immutable Dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

from . import geo
from .errors import NoChainError, UnknownSubjectError
from .queryir import ColEqCol, ColEqContext, ColumnRef, Predicate
from .relstore import Dataset

Point = tuple[float, float]

CHAIN_MODES = ("workflow", "specialty", "direct")

SUBJECT_TABLE = "subject"


@dataclass(frozen=True)
class RouteRange:
    """Spatial corridor and time window of one carrier assignment."""

    carrier_id: str
    polyline: tuple[Point, ...]
    t_b: datetime
    t_e: datetime
    corridor_km: float

    def distance_km(self, loc: Point) -> float:
        return geo.polyline_distance_km(loc, self.polyline)


@dataclass(frozen=True)
class JoinChain:
    """Ordered equality predicates connecting subject to a target table."""

    predicates: tuple[ColEqCol, ...]
    tables: tuple[str, ...]  # traversal order, starts at subject


def _subject(name: str, d: Dataset):
    try:
        return d.subject_by_name[name]
    except KeyError:
        raise UnknownSubjectError(name) from None


def location_range(s: str, d: Dataset, *, corridor_km: float | None = None) -> list[RouteRange]:
    """One RouteRange per assignment of subject s; empty when unassigned."""
    subj = _subject(s, d)
    width = corridor_km if corridor_km is not None else d.manifest.corridor_km
    out = []
    for a in d.assignments_of(subj.id):
        c = d.carrier_by_id[a.carrier_id]
        out.append(RouteRange(carrier_id=c.id, polyline=c.waypoints,
                              t_b=c.departure, t_e=c.arrival, corridor_km=width))
    return out


def time_range(s: str, d: Dataset) -> list[tuple[datetime, datetime]]:
    """Planned (departure, arrival) window per assignment of subject s."""
    return [(r.t_b, r.t_e) for r in location_range(s, d)]


def in_range(loc: Point, t: datetime, r: RouteRange) -> bool:
    """True iff loc is within the corridor and t within [t_b, t_e], bounds inclusive."""
    return r.t_b <= t <= r.t_e and r.distance_km(loc) <= r.corridor_km


def any_in_range(loc: Point, t: datetime, ranges: list[RouteRange]) -> bool:
    return any(in_range(loc, t, r) for r in ranges)


def _fk_graph(d: Dataset) -> dict[str, list[tuple[str, str, str]]]:
    """table -> [(neighbor, own column, neighbor column)], from declared FKs."""
    graph: dict[str, list[tuple[str, str, str]]] = {}
    for left, right in d.manifest.foreign_keys:
        lt, lc = left.split(".", 1)
        rt, rc = right.split(".", 1)
        graph.setdefault(lt, []).append((rt, lc, rc))
        graph.setdefault(rt, []).append((lt, rc, lc))
    for neighbors in graph.values():
        neighbors.sort()
    return graph


def workflow(target: str, d: Dataset) -> JoinChain:
    """Shortest declared join chain from the subject table to target.

    Ties are broken by lexicographic table order so the chain is
    deterministic for a given manifest.
    """
    if target == SUBJECT_TABLE:
        return JoinChain((), (SUBJECT_TABLE,))
    graph = _fk_graph(d)
    # BFS; the frontier is expanded in sorted order, so the first path
    # reaching the target is the lexicographically least shortest path.
    frontier: list[tuple[tuple[str, ...], tuple[ColEqCol, ...]]] = [((SUBJECT_TABLE,), ())]
    seen = {SUBJECT_TABLE}
    while frontier:
        next_frontier = []
        for path, preds in frontier:
            here = path[-1]
            for neighbor, own_col, their_col in graph.get(here, ()):
                if neighbor in seen:
                    continue
                step = ColEqCol(ColumnRef(here, own_col), ColumnRef(neighbor, their_col))
                if neighbor == target:
                    return JoinChain(preds + (step,), path + (neighbor,))
                next_frontier.append((path + (neighbor,), preds + (step,)))
        seen.update(p[-1] for p, _ in next_frontier)
        frontier = next_frontier
    raise NoChainError(f"no declared chain links {SUBJECT_TABLE!r} to {target!r}")


def sub_ou_closure(ou: str, d: Dataset) -> set[str]:
    """Strict transitive closure of sub-units below ou (ou itself excluded)."""
    children: dict[str, list[str]] = {}
    for e in d.org_edges:
        children.setdefault(e.ou, []).append(e.sub_ou)
    out: set[str] = set()
    stack = list(children.get(ou, ()))
    while stack:
        node = stack.pop()
        if node in out:
            continue
        out.add(node)
        stack.extend(children.get(node, ()))
    return out


def sub_ou_levels(ou: str, d: Dataset) -> list[set[str]]:
    """Sub-units below ou grouped by minimum edge distance (level 1 first)."""
    children: dict[str, list[str]] = {}
    for e in d.org_edges:
        children.setdefault(e.ou, []).append(e.sub_ou)
    levels: list[set[str]] = []
    seen = {ou}
    current = {c for c in children.get(ou, ()) if c != ou}
    while current:
        levels.append(set(current))
        seen.update(current)
        current = {c for node in current for c in children.get(node, ()) if c not in seen}
    return levels


def organization(s1: str, s2: str, d: Dataset) -> bool:
    """True iff s1 is a (transitive, strict) subordinate of s2."""
    a, b = _subject(s1, d), _subject(s2, d)
    return a.dept in sub_ou_closure(b.dept, d)


def subordinates(s: str, d: Dataset) -> set[str]:
    """All subject names s' with organization(s', s)."""
    subj = _subject(s, d)
    below = sub_ou_closure(subj.dept, d)
    return {other.name for other in d.subjects if other.dept in below}


def org_distance(s1: str, s2: str, d: Dataset) -> int | None:
    """Edge distance from s2's dept down to s1's dept, None if unrelated."""
    a, b = _subject(s1, d), _subject(s2, d)
    for depth, level in enumerate(sub_ou_levels(b.dept, d), start=1):
        if a.dept in level:
            return depth
    return None


def supervisors(s: str, d: Dataset) -> list[str]:
    """Subjects s is subordinate to, nearest first, ties by name."""
    ranked = []
    for other in d.subjects:
        if other.name == s:
            continue
        dist = org_distance(s, other.name, d)
        if dist is not None:
            ranked.append((dist, other.name))
    return [name for _, name in sorted(ranked)]


def link(requester: str, target: str, mode: str, d: Dataset) -> list[tuple[Predicate, ...]]:
    """Join-predicate conjunctions binding the requester to target rows.

    Every conjunction starts with the session-identity predicate so a
    session can never act for another subject by query text. The result
    is a list of branches: workflow and specialty produce one, direct
    produces two (sender match, receiver match) that the rewriter joins
    with UNION.
    """
    _subject(requester, d)
    session = ColEqContext(ColumnRef(SUBJECT_TABLE, "name"), "session_user")
    if mode == "workflow":
        chain = workflow(target, d)
        return [(session, *chain.predicates)]
    if mode == "specialty":
        pred = ColEqCol(ColumnRef(SUBJECT_TABLE, "specialty"), ColumnRef(target, "name"))
        return [(session, pred)]
    if mode == "direct":
        sender = ColEqCol(ColumnRef(SUBJECT_TABLE, "id"), ColumnRef(target, "sender"))
        receiver = ColEqCol(ColumnRef(SUBJECT_TABLE, "id"), ColumnRef(target, "receiver"))
        return [(session, sender), (session, receiver)]
    raise ValueError(f"unknown chain mode: {mode!r}")


def link_tables(target: str, mode: str, d: Dataset) -> tuple[str, ...]:
    """FROM tables a link-mode rewrite needs, in canonical chain order."""
    if mode == "workflow":
        return workflow(target, d).tables
    if mode in ("specialty", "direct"):
        return (SUBJECT_TABLE, target) if target != SUBJECT_TABLE else (SUBJECT_TABLE,)
    raise ValueError(f"unknown chain mode: {mode!r}")

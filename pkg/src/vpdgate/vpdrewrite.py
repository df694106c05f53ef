"""Rewrites user queries into per-subject virtual private databases.

A rewrite widens the FROM clause with the subject table and the declared
join chain, then prepends access predicates to the user's own condition:

* wireless sessions (location and time reported) get the two range
  gates `sys_context:l IN range(user, location)` and
  `sys_context:t IN range(user, time)`;
* every rewrite gets the session-identity predicate
  `subject.name = sys_context:session_user`;
* the chain-mode predicates follow (workflow join chain, specialty/name
  match, or sender/receiver identity as a two-branch UNION);
* the user's original conjunction comes last.

The projection keeps the user query's column scope: `select * from
object` projects `object.*` after rewriting, so a VPD result has the
same schema as the request and the VPD can only ever shrink it.

Supervisors (subjects with subordinates in the org hierarchy) are
expanded into a UNION of their own branch plus one branch per
subordinate, and equivalently into a closed form whose branches select
subjects by department membership through IN-subqueries over
org_hierarchy, one nesting level per hierarchy level.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import linkage
from .errors import UnknownColumnError, UnsupportedFeatureError
from .queryir import (
    ColEqCol,
    ColEqConst,
    ColEqContext,
    ColumnRef,
    InRange,
    InSubquery,
    Predicate,
    Query,
    RangeRef,
    RowSet,
    Select,
    STAR,
    TableRef,
    Union,
    evaluate,
)
from .relstore import TABLE_COLUMNS, Dataset
from .sessionctx import SessionContext

ContextMap = dict  # subject name -> SessionContext


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VpdDefinition:
    subject: str
    location_dependent: bool
    time_dependent: bool
    query: Query
    provenance: tuple[str, ...]
    closed_query: Query | None = None  # set by expand_supervisor


@dataclass(frozen=True)
class Privilege:
    action: str  # "read" | "write" | "grant" | "admin"
    sign: str  # "+" | "-"
    scope: str = "object"  # "object" | "system"

    def __post_init__(self):
        if self.sign not in ("+", "-"):
            raise ValueError(f"privilege sign must be + or -, got {self.sign!r}")
        if self.scope not in ("object", "system"):
            raise ValueError(f"privilege scope must be object or system, got {self.scope!r}")


@dataclass(frozen=True)
class InferenceRule:
    """premise (action, sign) implies conclusion (action, sign), same scope."""

    premise: tuple[str, str]
    conclusion: tuple[str, str]


WRITE_IMPLIES_READ = InferenceRule(premise=("write", "+"), conclusion=("read", "+"))
DEFAULT_RULES: tuple[InferenceRule, ...] = (WRITE_IMPLIES_READ,)


@dataclass(frozen=True)
class DomainPolicy:
    """A pre-defined policy every rewritten query must satisfy.

    kind "inference-rule" carries a privilege implication; kind
    "constraint" names a built-in extensional check run against the
    materialized VPD rows.
    """

    id: str
    kind: str  # "inference-rule" | "constraint"
    rule: InferenceRule | None = None
    constraint: str | None = None

    def __post_init__(self):
        if self.kind not in ("inference-rule", "constraint"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "inference-rule" and self.rule is None:
            raise ValueError("inference-rule policy needs a rule")
        if self.kind == "constraint" and self.constraint not in CONSTRAINT_CHECKS:
            raise ValueError(f"unknown constraint {self.constraint!r}")


# ---------------------------------------------------------------------------
# Rewriting
# ---------------------------------------------------------------------------

def _alias_map(q: Select) -> dict[str, str]:
    out: dict[str, str] = {}
    for t in q.tables:
        if t.table in out.values():
            raise UnsupportedFeatureError("self-joins cannot be rewritten")
        out[t.binding] = t.table
    return out


def _requalify_ref(ref: ColumnRef, aliases: dict[str, str], tables: list[str]) -> ColumnRef:
    """Rebind a user column reference to plain table names."""
    if ref.qualifier is not None:
        if ref.qualifier not in aliases:
            raise UnknownColumnError(
                f"column {ref} references {ref.qualifier!r}, which is not in FROM")
        return ColumnRef(aliases[ref.qualifier], ref.column)
    hits = [t for t in tables if ref.column in TABLE_COLUMNS.get(t, ())]
    if not hits:
        raise UnknownColumnError(f"no column {ref.column!r} in FROM tables")
    if len(hits) > 1:
        raise UnknownColumnError(f"column {ref.column!r} is ambiguous")
    return ColumnRef(hits[0], ref.column)


def _requalify_predicate(p: Predicate, aliases: dict[str, str], tables: list[str]) -> Predicate:
    if isinstance(p, ColEqCol):
        return ColEqCol(_requalify_ref(p.a, aliases, tables),
                        _requalify_ref(p.b, aliases, tables))
    if isinstance(p, ColEqConst):
        return ColEqConst(_requalify_ref(p.a, aliases, tables), p.value)
    if isinstance(p, ColEqContext):
        return ColEqContext(_requalify_ref(p.a, aliases, tables), p.key)
    if isinstance(p, InSubquery):
        return InSubquery(_requalify_ref(p.a, aliases, tables), p.query)
    return p


def _scoped_projection(q: Select, aliases: dict[str, str]) -> tuple[ColumnRef, ...]:
    """Pin the user's projection to its original table scope."""
    user_tables = [aliases[t.binding] for t in q.tables]
    out: list[ColumnRef] = []
    for item in q.projection:
        if item == STAR:
            out.extend(ColumnRef(t, "*") for t in user_tables)
        elif item.column == "*":
            out.append(ColumnRef(aliases.get(item.qualifier, item.qualifier), "*"))
        else:
            out.append(_requalify_ref(item, aliases, user_tables))
    return tuple(out)


def rewrite(q: Query, ctx: SessionContext, d: Dataset,
            policies: tuple[DomainPolicy, ...] = (), mode: str = "workflow") -> VpdDefinition:
    """Rewrite a user query into the requesting subject's VPD definition.

    Wireless sessions get range gates; wired sessions get the plain
    linked form. The mode selects how the subject is tied to the target
    table (workflow chain, specialty match, or direct sender/receiver).
    """
    if isinstance(q, Union):
        left = rewrite(q.left, ctx, d, policies, mode)
        right = rewrite(q.right, ctx, d, policies, mode)
        return VpdDefinition(
            subject=ctx.user,
            location_dependent=left.location_dependent,
            time_dependent=left.time_dependent,
            query=Union(left.query, right.query),
            provenance=left.provenance + right.provenance + ("union-request",))

    aliases = _alias_map(q)
    user_tables = [aliases[t.binding] for t in q.tables]
    target = user_tables[0]

    chain_tables = linkage.link_tables(target, mode, d)
    from_tables = list(chain_tables) + [t for t in user_tables if t not in chain_tables]

    wireless = ctx.wireless
    gates: tuple[Predicate, ...] = ()
    if wireless:
        gates = (InRange("l", RangeRef(ctx.user, "location")),
                 InRange("t", RangeRef(ctx.user, "time")))

    user_preds = tuple(_requalify_predicate(p, aliases, user_tables) for p in q.where)
    projection = _scoped_projection(q, aliases)

    branches = []
    for branch_preds in linkage.link(ctx.user, target, mode, d):
        branches.append(Select(
            projection=projection,
            tables=tuple(TableRef(t) for t in from_tables),
            where=gates + branch_preds + user_preds))

    query: Query = branches[0]
    for branch in branches[1:]:
        query = Union(query, branch)

    provenance = [f"mode:{mode}", "session-predicate"]
    if wireless:
        provenance.insert(1, "range-gates")
    if user_preds:
        provenance.append(f"user-conditions:{len(user_preds)}")
    if len(branches) > 1:
        provenance.append(f"union-branches:{len(branches)}")

    return VpdDefinition(
        subject=ctx.user,
        location_dependent=wireless,
        time_dependent=wireless,
        query=query,
        provenance=tuple(provenance))


# ---------------------------------------------------------------------------
# Supervisor expansion
# ---------------------------------------------------------------------------

def _selects(q: Query) -> list[Select]:
    if isinstance(q, Union):
        return _selects(q.left) + _selects(q.right)
    return [q]


def _union_of(selects: list[Select]) -> Query:
    out: Query = selects[0]
    for s in selects[1:]:
        out = Union(out, s)
    return out


def _instantiate(sel: Select, subject_name: str, *, strip_gates: bool) -> Select:
    """Pin a rewritten branch to a fixed subject and optionally drop range gates."""
    preds = []
    for p in sel.where:
        if isinstance(p, InRange) and strip_gates:
            continue
        if isinstance(p, ColEqContext) and p.key == "session_user":
            preds.append(ColEqConst(p.a, subject_name))
        else:
            preds.append(p)
    return replace(sel, where=tuple(preds))


def _swap_identity(preds: tuple[Predicate, ...], subject_name: str,
                   replacement: Predicate) -> tuple[Predicate, ...]:
    """Replace the injected subject-identity predicate (the first
    subject.name constant) with a different selection predicate."""
    out = []
    swapped = False
    for p in preds:
        if (not swapped and isinstance(p, ColEqConst) and p.value == subject_name
                and p.a == ColumnRef(linkage.SUBJECT_TABLE, "name")):
            out.append(replacement)
            swapped = True
        else:
            out.append(p)
    return tuple(out)


def _dept_membership(depth: int, dept: str) -> InSubquery:
    """subject.dept IN (... nested sub-OU selection, `depth` levels deep)."""
    inner: Query = Select(
        projection=(ColumnRef(None, "sub_ou"),),
        tables=(TableRef("org_hierarchy"),),
        where=(ColEqConst(ColumnRef(None, "ou"), dept),))
    for _ in range(depth - 1):
        inner = Select(
            projection=(ColumnRef(None, "sub_ou"),),
            tables=(TableRef("org_hierarchy"),),
            where=(InSubquery(ColumnRef(None, "ou"), inner),))
    return InSubquery(ColumnRef("subject", "dept"), inner)


def subordinate_known_invalid(s: str, d: Dataset, contexts: ContextMap | None) -> bool:
    """True when s has a reported wireless context that fails the route check.

    Subjects with no reported context (or a wired one) count as valid:
    revocation is driven by known state, never by absence of it.
    """
    ctx = (contexts or {}).get(s)
    if ctx is None or not ctx.wireless:
        return False
    ranges = linkage.location_range(s, d)
    if not ranges:  # not a moving subject; cannot be route-invalid
        return False
    return not linkage.any_in_range(ctx.location, ctx.timestamp, ranges)


def expand_supervisor(s: str, base: VpdDefinition, d: Dataset, *,
                      contexts: ContextMap | None = None,
                      supervisor_mode: str = "narrative") -> VpdDefinition:
    """Union a subject's VPD with its transitive subordinates' VPDs.

    The union form pins each branch to a subordinate by name; in
    narrative mode subordinates whose reported context fails the route
    check are dropped. The closed form reaches the same subjects through
    department-membership subqueries over org_hierarchy and is attached
    as closed_query; both forms evaluate identically whenever no
    subordinate is known-invalid.
    """
    subs = sorted(linkage.subordinates(s, d),
                  key=lambda name: d.subject_by_name[name].id)
    if not subs:
        return base

    own = [_instantiate(sel, s, strip_gates=False) for sel in _selects(base.query)]
    branches = list(own)
    dropped = []
    for sub in subs:
        if supervisor_mode == "narrative" and subordinate_known_invalid(sub, d, contexts):
            dropped.append(sub)
            continue
        branches.extend(_instantiate(sel, sub, strip_gates=True)
                        for sel in _selects(base.query))

    dept = d.subject_by_name[s].dept
    levels = linkage.sub_ou_levels(dept, d)
    closed = list(own)
    for depth in range(1, len(levels) + 1):
        membership = _dept_membership(depth, dept)
        for sel in _selects(base.query):
            pinned = _instantiate(sel, s, strip_gates=True)
            closed.append(replace(pinned,
                                  where=_swap_identity(pinned.where, s, membership)))

    provenance = base.provenance + (f"supervisor:{supervisor_mode}",
                                    f"subordinates:{','.join(subs)}")
    if dropped:
        provenance += (f"dropped-invalid:{','.join(dropped)}",)

    return VpdDefinition(
        subject=s,
        location_dependent=base.location_dependent,
        time_dependent=base.time_dependent,
        query=_union_of(branches),
        provenance=provenance,
        closed_query=_union_of(closed))


# ---------------------------------------------------------------------------
# Materialization and entailment
# ---------------------------------------------------------------------------

def materialize(v: VpdDefinition, d: Dataset, ctx: SessionContext) -> RowSet:
    """Evaluate the VPD query. Callers enforce lifecycle validity first."""
    return evaluate(v.query, d, ctx)


def _reachable_oids(subject_name: str, d: Dataset) -> set[str]:
    """Objects a single subject can reach by any linkage, enumerated row by row."""
    subj = d.subject_by_name.get(subject_name)
    if subj is None:
        return set()
    out: set[str] = set()
    carriers = {a.carrier_id for a in d.assignments_of(subj.id)}
    for o in d.objects:
        if o.carrier_id is not None and o.carrier_id in carriers:
            out.add(o.oid)
        if subj.id in (o.sender, o.receiver):
            out.add(o.oid)
        if subj.specialty is not None and subj.specialty == o.name:
            out.add(o.oid)
    return out


def _check_head_of_ou(v: VpdDefinition, rows: RowSet, d: Dataset,
                      contexts: ContextMap | None) -> tuple | None:
    """Every object in the VPD must be reachable by the subject or a subordinate.

    Abstains (no witness) when the materialized schema carries no
    object identity column to check against.
    """
    try:
        oids = rows.column("object.oid")
    except UnknownColumnError:
        return None
    allowed = _reachable_oids(v.subject, d)
    for sub in linkage.subordinates(v.subject, d):
        allowed |= _reachable_oids(sub, d)
    for row, oid in zip(rows.rows, oids):
        if oid not in allowed:
            return row
    return None


CONSTRAINT_CHECKS = {
    "head-of-ou-containment": _check_head_of_ou,
}

HEAD_OF_OU_POLICY = DomainPolicy(id="head-of-ou", kind="constraint",
                                 constraint="head-of-ou-containment")


def entails(policies, v: VpdDefinition, d: Dataset, ctx: SessionContext, *,
            contexts: ContextMap | None = None) -> tuple[bool, tuple | None]:
    """Check the materialized VPD against every constraint policy.

    Returns (True, None) when all constraints hold (vacuously for no
    policies), else (False, witness_row) for the first violation.
    """
    constraint_policies = [p for p in policies if p.kind == "constraint"]
    if not constraint_policies:
        return True, None
    rows = materialize(v, d, ctx)
    for policy in constraint_policies:
        witness = CONSTRAINT_CHECKS[policy.constraint](v, rows, d, contexts)
        if witness is not None:
            return False, witness
    return True, None


# ---------------------------------------------------------------------------
# Privilege inference
# ---------------------------------------------------------------------------

def infer_closure(granted, rules: tuple[InferenceRule, ...] = DEFAULT_RULES
                  ) -> tuple[frozenset, int]:
    """Close a privilege set under the inference rules.

    Returns the closure and the number of productive passes (passes
    that added at least one privilege).
    """
    current = set(granted)
    passes = 0
    while True:
        added = set()
        for rule in rules:
            for priv in current:
                if (priv.action, priv.sign) == rule.premise and priv.scope == "object":
                    inferred = Privilege(action=rule.conclusion[0],
                                         sign=rule.conclusion[1], scope=priv.scope)
                    if inferred not in current:
                        added.add(inferred)
        if not added:
            return frozenset(current), passes
        current |= added
        passes += 1


def infer_privileges(granted, rules: tuple[InferenceRule, ...] = DEFAULT_RULES) -> frozenset:
    return infer_closure(granted, rules)[0]

"""One-call request pipeline: validity gate, rewrite, materialize, entail.

The CLI and tests go through this module; it contains no authorization
logic of its own, it only sequences lifecycle and vpdrewrite calls.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import linkage
from .lifecycle import GrantState, build_vpd, check_validity
from .queryir import Query, RowSet, Select, Union, parse_query, render_query
from .relstore import Dataset
from .sessionctx import SessionContext
from .vpdrewrite import ContextMap, VpdDefinition, entails, materialize


@dataclass(frozen=True)
class QueryOutcome:
    state: GrantState
    vpd: VpdDefinition
    rows: RowSet
    entailed: bool
    witness: tuple | None


def run_query(d: Dataset, ctx: SessionContext, query: str | Query, *,
              chain_mode: str = "workflow", supervisor_mode: str = "narrative",
              contexts: ContextMap | None = None, policies=()) -> QueryOutcome:
    """Decide, rewrite and (when granted) materialize one request."""
    if isinstance(query, str):
        query = parse_query(query)
    state = check_validity(ctx.user, ctx, d, supervisor_mode, contexts)
    vpd = build_vpd(ctx, d, query, chain_mode=chain_mode,
                    supervisor_mode=supervisor_mode, contexts=contexts)
    rows = materialize(vpd, d, ctx)
    if not state.valid:
        rows = RowSet(rows.schema, ())
    entailed, witness = entails(policies, vpd, d, ctx, contexts=contexts)
    return QueryOutcome(state=state, vpd=vpd, rows=rows, entailed=entailed, witness=witness)


def _union_tree(q: Query, indent: str = "") -> list[str]:
    if isinstance(q, Union):
        return [indent + "UNION"] + _union_tree(q.left, indent + "  ") \
            + _union_tree(q.right, indent + "  ")
    return [indent + render_query(q)]


def explain(d: Dataset, ctx: SessionContext, query: str | Query, *,
            chain_mode: str = "workflow", supervisor_mode: str = "narrative",
            contexts: ContextMap | None = None, policies=()) -> str:
    """Human-readable derivation trace for one request."""
    if isinstance(query, str):
        query = parse_query(query)
    outcome = run_query(d, ctx, query, chain_mode=chain_mode,
                        supervisor_mode=supervisor_mode, contexts=contexts,
                        policies=policies)
    original = render_query(query)
    rewritten = outcome.vpd.query
    injected: list[str] = []
    first_branch = rewritten
    while isinstance(first_branch, Union):
        first_branch = first_branch.left
    if isinstance(first_branch, Select) and isinstance(query, Select):
        user_preds = len(query.where)
        from .queryir import _render_predicate
        preds = first_branch.where[:len(first_branch.where) - user_preds] \
            if user_preds else first_branch.where
        injected = [_render_predicate(p) for p in preds]

    lines = [
        f"subject: {ctx.user}",
        f"original: {original}",
        f"mode: {chain_mode} (supervisor: {supervisor_mode})",
        "injected predicates:",
        *(f"  {p}" for p in injected),
        "expansion:",
        *(f"  {line}" for line in _union_tree(rewritten)),
        f"provenance: {', '.join(outcome.vpd.provenance)}",
        f"verdict: {outcome.state.state} ({outcome.state.reason})",
        f"entailment: {'satisfied' if outcome.entailed else 'VIOLATED'}",
    ]
    if outcome.witness is not None:
        lines.append(f"witness: {outcome.witness}")
    if outcome.vpd.closed_query is not None:
        lines.append("closed form:")
        lines.extend(f"  {line}" for line in _union_tree(outcome.vpd.closed_query))
    return "\n".join(lines)


def accessible_ids(d: Dataset, ctx: SessionContext, *, chain_mode: str = "workflow",
                   supervisor_mode: str = "narrative",
                   contexts: ContextMap | None = None) -> set[str]:
    """Object ids reachable through the default object request; gate applied."""
    outcome = run_query(d, ctx, "select * from object", chain_mode=chain_mode,
                        supervisor_mode=supervisor_mode, contexts=contexts)
    if not outcome.state.valid:
        return set()
    return set(outcome.rows.column("object.oid"))


def subject_has_subordinates(d: Dataset, user: str) -> bool:
    return bool(linkage.subordinates(user, d))

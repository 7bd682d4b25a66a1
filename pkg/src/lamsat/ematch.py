"""E-matching of patterns against an e-graph, with binder-aware match guards."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

from .egraph import EGraph
from .term import All, App, Bvar, Eps, Lam, Lit, MVar, Sym, Term, children, _binds
from .term import parse_pattern  # re-exported for convenience

__all__ = ["MatchBinding", "MatchDecision", "ematch", "ematch_class", "pattern_depths",
           "validate_match", "parse_pattern"]


@dataclass
class MatchBinding:
    root: int
    assignment: dict[str, int]
    depths: dict[str, frozenset[int]]

    def key(self) -> tuple:
        return (self.root, tuple(sorted(self.assignment.items())))


class MatchDecision(enum.Enum):
    VALID = "valid"
    ABORT_CASE1 = "abort-case1"  # same variable seen under different binder depths
    ABORT_CASE2 = "abort-case2"  # variable bound by a binder of the pattern itself


def pattern_depths(p: Term) -> dict[str, frozenset[int]]:
    """Binder depths at which each metavariable occurs."""
    acc: dict[str, set[int]] = {}
    stack = [(p, 0)]
    while stack:
        u, d = stack.pop()
        if isinstance(u, MVar):
            acc.setdefault(u.name, set()).add(d)
            continue
        for i, c in enumerate(children(u)):
            stack.append((c, d + _binds(u, i)))
    return {k: frozenset(v) for k, v in acc.items()}


def _leaf_key(p: Term):
    match p:
        case Bvar(i, tag):
            return "bvar", (i, tag)
        case Sym(name):
            return "sym", name
        case Lit(v):
            return "lit", v
        case Eps():
            return "eps", None
    return None


_OPS = {App: "app", Lam: "lam", All: "all"}


def _match(g: EGraph, p: Term, cid: int, subst: dict[str, int]) -> Iterator[dict[str, int]]:
    cid = g.find(cid)
    if isinstance(p, MVar):
        bound = subst.get(p.name)
        if bound is None:
            yield {**subst, p.name: cid}
        elif g.find(bound) == cid:
            yield subst
        return
    leaf = _leaf_key(p)
    nodes = g.class_nodes(cid)
    if leaf is not None:
        for node in nodes:
            if node.op == leaf[0] and node.payload == leaf[1]:
                yield subst
                return
        return
    op = _OPS.get(type(p))
    if op is None:
        raise TypeError(f"cannot e-match {p!r}")
    kids = children(p)
    for node in list(nodes):
        if node.op != op:
            continue
        todo = [subst]
        for kp, kc in zip(kids, node.children):
            todo = [s2 for s1 in todo for s2 in _match(g, kp, kc, s1)]
            if not todo:
                break
        yield from todo


def ematch_class(g: EGraph, p: Term, cid: int) -> list[dict[str, int]]:
    return list(_match(g, p, cid, {}))


def ematch(g: EGraph, p: Term) -> list[MatchBinding]:
    """All matches of ``p`` over every class, in class-id order."""
    depths = pattern_depths(p)
    out = []
    seen = set()
    for cid in g.class_ids():
        for assignment in _match(g, p, cid, {}):
            m = MatchBinding(cid, assignment, depths)
            if m.key() not in seen:
                seen.add(m.key())
                out.append(m)
    return out


def validate_match(g: EGraph, p: Term, m: MatchBinding) -> MatchDecision:
    """Reject bindings whose free variables would mean something else.

    Case 1: a variable that may contain free indices occurs under different
    binder depths, so its occurrences cannot all denote the same thing.
    Case 2: a variable at binder depth ``d`` may contain a free index below
    ``d``, i.e. one bound by the pattern's own binders.
    """
    for name, cid in m.assignment.items():
        depths = m.depths.get(name, frozenset())
        if len(depths) > 1 and g.class_free_vars(cid):
            return MatchDecision.ABORT_CASE1
    for name, cid in m.assignment.items():
        free = g.class_free_vars(cid)
        if not free:
            continue
        deepest = max(m.depths.get(name, (0,)))
        if min(free) < deepest:
            return MatchDecision.ABORT_CASE2
    return MatchDecision.VALID

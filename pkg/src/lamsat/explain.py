"""Linear rewrite explanations from the union log, and a replay checker
that verifies them on plain terms without looking at the e-graph."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

from .egraph import EGraph, ProofEdge
from .rewrite import Direction, RuleSpec, step_connects
from .term import Term, parse_term, print_term, replace_at, subterm_at

__all__ = [
    "Step", "Explanation", "ExplanationIncomplete", "Accepted", "Rejected",
    "explain", "replay_check", "explanation_to_json", "explanation_from_json",
]

MAX_STEPS = 20_000


@dataclass(frozen=True)
class Step:
    rule: str
    direction: Direction
    position: tuple[int, ...]
    result: Term


@dataclass(frozen=True)
class Explanation:
    start: Term
    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)


class ExplanationIncomplete(Exception):
    pass


@dataclass(frozen=True)
class Accepted:
    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Rejected:
    step_index: int
    reason: str

    def __bool__(self) -> bool:
        return False


# a step before materialisation: the subterm at ``position`` becomes ``new``
_RelStep = tuple[str, Direction, tuple[int, ...], Term]


class _Explainer:
    def __init__(self, g: EGraph):
        self.g = g
        self.memo: dict[tuple[int, int, int], list[_RelStep]] = {}
        self.bad: set[int] = set()  # congruence edges whose children cannot be explained
        self.child_steps: dict[int, list[_RelStep]] = {}
        self.active: set[int] = set()

    def path(self, a: int, b: int, bound: int) -> Optional[list[tuple[ProofEdge, bool]]]:
        """Shortest edge path a -> b using edges stamped below ``bound``."""
        g = self.g
        prev: dict[int, tuple[int, int]] = {a: (-1, -1)}
        queue = deque([a])
        while queue:
            u = queue.popleft()
            if u == b:
                break
            for ei in g.adjacency[u]:
                e = g.edges[ei]
                if e.stamp >= bound or e.just.kind == "subst" or ei in self.bad:
                    continue
                v = e.b if e.a == u else e.a
                if v not in prev:
                    prev[v] = (u, ei)
                    queue.append(v)
        if b not in prev:
            return None
        out = []
        v = b
        while v != a:
            u, ei = prev[v]
            e = g.edges[ei]
            out.append((e, e.a == u))
            v = u
        out.reverse()
        return out

    def steps(self, a: int, b: int, bound: int) -> list[_RelStep]:
        if a == b:
            return []
        key = (a, b, bound)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        while True:
            p = self.path(a, b, bound)
            if p is None:
                raise ExplanationIncomplete(
                    f"no justified path between ids {a} and {b}: the link relies on "
                    "substitution-internal unions")
            out: list[_RelStep] = []
            ok = True
            for e, forward in p:
                sub = self.edge_steps(e, forward)
                if sub is None:
                    ok = False
                    break
                out.extend(sub)
                if len(out) > MAX_STEPS:
                    raise ExplanationIncomplete("explanation exceeds the step cap")
            if ok:
                self.memo[key] = out
                return out

    def edge_steps(self, e: ProofEdge, forward: bool) -> Optional[list[_RelStep]]:
        g = self.g
        src, dst = (e.a, e.b) if forward else (e.b, e.a)
        if e.just.kind != "congruence":
            if e.just.kind == "rule":
                name, d = e.just.name, Direction(e.just.direction)
            else:
                name, d = e.just.kind, Direction.FORWARD
            if not forward:
                d = d.flipped()
            return [(name, d, (), g.term_of(dst))]
        fwd = self.congruence(e)
        if fwd is None:
            return None
        if forward:
            return fwd
        return self.reverse(e, fwd)

    def congruence(self, e: ProofEdge) -> Optional[list[_RelStep]]:
        ei = e.stamp
        if ei in self.child_steps:
            return self.child_steps[ei]
        if ei in self.active:
            # cannot happen with strictly decreasing bounds; be defensive
            return None
        g = self.g
        na, nb = g.exact_node(e.a), g.exact_node(e.b)
        self.active.add(ei)
        try:
            out: list[_RelStep] = []
            for i, (x, y) in enumerate(zip(na.children, nb.children)):
                for name, d, pos, new in self.steps(x, y, e.stamp):
                    out.append((name, d, (i,) + pos, new))
        except ExplanationIncomplete:
            self.bad.add(ei)
            return None
        finally:
            self.active.discard(ei)
        self.child_steps[ei] = out
        return out

    def reverse(self, e: ProofEdge, fwd: list[_RelStep]) -> list[_RelStep]:
        # walk the forward sequence from term_of(a), then emit it backwards
        g = self.g
        cur = g.term_of(e.a)
        olds = []
        for name, d, pos, new in fwd:
            olds.append(subterm_at(cur, pos))
            cur = replace_at(cur, pos, new)
        return [(name, d.flipped(), pos, old) for (name, d, pos, _), old in zip(reversed(fwd), reversed(olds))]


def explain(g: EGraph, lhs: int, rhs: int, start_term: Optional[Term] = None) -> Explanation:
    """Rewrite steps turning ``start_term`` (default: the term of ``lhs``)
    into the term of ``rhs``.

    Raises :class:`ExplanationIncomplete` if the only connection between the
    two passes through substitution-internal unions.
    """
    if not g.is_equal(lhs, rhs):
        raise ValueError("the two ids are not in the same class")
    if start_term is None:
        start_term = g.term_of(lhs)
    start = g.lookup_term(start_term)
    if start is None or not g.is_equal(start, lhs):
        raise ValueError("start term is not a member of the lhs class")
    ex = _Explainer(g)
    cur = start_term
    steps = []
    for name, d, pos, new in ex.steps(start, rhs, len(g.edges)):
        cur = replace_at(cur, pos, new)
        steps.append(Step(name, d, pos, cur))
    return Explanation(start_term, tuple(steps))


def replay_check(
    e: Explanation,
    rules: Sequence[RuleSpec],
    goal: tuple[Term, Term],
) -> Accepted | Rejected:
    """Re-derive every step with plain-term rewriting."""
    by_name = {r.name: r for r in rules}
    if e.start != goal[0]:
        return Rejected(0, "start term differs from the goal lhs")
    cur = e.start
    for i, s in enumerate(e.steps):
        if s.rule not in by_name and s.rule not in ("beta", "eta"):
            return Rejected(i, f"unknown rule {s.rule!r}")
        if not step_connects(cur, s.result, s.rule, s.direction, s.position, by_name):
            return Rejected(i, "mismatch")
        cur = s.result
    if cur != goal[1]:
        return Rejected(len(e.steps), "endpoint mismatch: final term differs from the goal rhs")
    return Accepted()


def explanation_to_json(e: Explanation) -> dict:
    return {
        "start": print_term(e.start),
        "steps": [
            {"rule": s.rule, "dir": s.direction.value, "pos": list(s.position), "result": print_term(s.result)}
            for s in e.steps
        ],
    }


def explanation_from_json(data: dict) -> Explanation:
    try:
        steps = tuple(
            Step(s["rule"], Direction(s["dir"]), tuple(int(p) for p in s["pos"]), parse_term(s["result"]))
            for s in data["steps"]
        )
        return Explanation(parse_term(data["start"]), steps)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed explanation: {exc}") from exc

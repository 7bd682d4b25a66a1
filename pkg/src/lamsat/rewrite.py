"""Rewriting plain terms at positions, and the brute-force search oracle.

Matching here is capture-avoiding: a metavariable that occurs under ``d``
binders of its pattern only matches a subterm with no free index below ``d``,
and its value is stored relative to the pattern root.  Instantiation lifts the
value back up by the binder depth of each output occurrence.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from .term import (
    MVar, Term,
    beta_step, children, eta_step, fvars_term, metavars, print_term,
    replace_at, shift_term, subterm_at, term_size, _binds, _rebuild,
)

__all__ = [
    "Direction", "RuleSpec", "OracleLimits", "OracleStep", "LimitExceeded",
    "match_pattern", "instantiate", "rewrite_root", "apply_step", "neighbors",
    "oracle_search",
]


class Direction(str, enum.Enum):
    FORWARD = "fwd"
    BACKWARD = "bwd"
    BOTH = "both"

    def flipped(self) -> "Direction":
        if self is Direction.FORWARD:
            return Direction.BACKWARD
        if self is Direction.BACKWARD:
            return Direction.FORWARD
        return self


@dataclass(frozen=True)
class RuleSpec:
    name: str
    lhs: Term
    rhs: Term
    directions: Direction = Direction.BOTH

    @property
    def is_ground(self) -> bool:
        return not metavars(self.lhs) and not metavars(self.rhs)

    def oriented(self, direction: Direction) -> tuple[Term, Term]:
        if direction is Direction.BACKWARD:
            return self.rhs, self.lhs
        return self.lhs, self.rhs

    def allowed(self) -> list[Direction]:
        if self.directions is Direction.BOTH:
            return [Direction.FORWARD, Direction.BACKWARD]
        return [self.directions]


@dataclass(frozen=True)
class OracleLimits:
    max_depth: int = 8
    max_term_size: int = 24
    max_states: int = 50_000

    def __post_init__(self):
        if min(self.max_depth, self.max_term_size, self.max_states) <= 0:
            raise ValueError("oracle limits must be positive")


@dataclass(frozen=True)
class OracleStep:
    rule: str
    direction: Direction
    position: tuple[int, ...]
    term: Term


class LimitExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# matching


def match_pattern(pattern: Term, term: Term) -> Optional[dict[str, Term]]:
    """Match at the root; values are relative to the pattern root."""
    binding: dict[str, Term] = {}
    if _match(pattern, term, 0, binding):
        return binding
    return None


def _match(p: Term, t: Term, depth: int, binding: dict[str, Term]) -> bool:
    if isinstance(p, MVar):
        if depth:
            if any(i < depth for i in fvars_term(t)):
                return False
            t = shift_term(t, -depth, 0)
        seen = binding.get(p.name)
        if seen is None:
            binding[p.name] = t
            return True
        return seen == t
    if type(p) is not type(t):
        return False
    pk = children(p)
    if not pk:
        return p == t
    tk = children(t)
    return all(_match(a, b, depth + _binds(p, i), binding) for i, (a, b) in enumerate(zip(pk, tk)))


def instantiate(pattern: Term, binding: dict[str, Term]) -> Term:
    return _instantiate(pattern, binding, 0)


def _instantiate(p: Term, binding: dict[str, Term], depth: int) -> Term:
    if isinstance(p, MVar):
        return shift_term(binding[p.name], depth, 0)
    kids = children(p)
    if not kids:
        return p
    return _rebuild(p, tuple(_instantiate(c, binding, depth + _binds(p, i)) for i, c in enumerate(kids)))


def rewrite_root(term: Term, rule: RuleSpec, direction: Direction) -> Optional[Term]:
    """One application of ``rule`` in ``direction`` at the root of ``term``."""
    trigger, output = rule.oriented(direction)
    binding = match_pattern(trigger, term)
    if binding is None:
        return None
    if any(v not in binding for v in metavars(output)):
        return None
    return instantiate(output, binding)


def apply_step(
    term: Term,
    rule: str,
    direction: Direction,
    position: Sequence[int],
    rules: dict[str, RuleSpec],
) -> Optional[Term]:
    """Rewrite ``term`` at ``position``; ``None`` if the step does not apply.

    ``rule`` is a user rule name, ``"beta"`` or ``"eta"``.  The forward
    direction of beta/eta reduces.  Backward steps are not computed here since
    expansion is not a function; use :func:`step_connects` to validate them.
    """
    sub = subterm_at(term, position)
    if rule in ("beta", "eta"):
        if direction is not Direction.FORWARD:
            return None
        new = beta_step(sub) if rule == "beta" else eta_step(sub)
    else:
        spec = rules.get(rule)
        if spec is None:
            return None
        new = rewrite_root(sub, spec, direction)
    if new is None:
        return None
    return replace_at(term, tuple(position), new)


def step_connects(
    before: Term,
    after: Term,
    rule: str,
    direction: Direction,
    position: Sequence[int],
    rules: dict[str, RuleSpec],
) -> bool:
    """Does one ``rule`` step at ``position`` turn ``before`` into ``after``?

    For a user rule the two subterms at ``position`` must be an instance of
    the oriented equation under a single binding, so sides that bind
    different metavariables are fine.  A backward beta/eta step is the
    reduction from ``after`` to ``before``.
    """
    if direction not in (Direction.FORWARD, Direction.BACKWARD):
        return False
    position = tuple(position)
    try:
        if rule in ("beta", "eta"):
            if direction is Direction.BACKWARD:
                before, after = after, before
            return apply_step(before, rule, Direction.FORWARD, position, rules) == after
        spec = rules.get(rule)
        if spec is None:
            return False
        old, new = subterm_at(before, position), subterm_at(after, position)
    except IndexError:
        return False
    if replace_at(before, position, new) != after:
        return False
    trigger, output = spec.oriented(direction)
    binding: dict[str, Term] = {}
    return _match(trigger, old, 0, binding) and _match(output, new, 0, binding)


# ---------------------------------------------------------------------------
# oracle


def neighbors(
    term: Term,
    rules: Sequence[RuleSpec],
    enable_beta: bool,
    enable_eta: bool,
) -> Iterator[tuple[str, Direction, tuple[int, ...], Term]]:
    """Every single-position step out of ``term``.

    User rules are used in both orientations (an equation holds both ways
    whatever its search direction); beta and eta only reduce.
    """
    for pos in _positions_with_terms(term):
        p, sub = pos
        for rule in rules:
            for direction in (Direction.FORWARD, Direction.BACKWARD):
                new = rewrite_root(sub, rule, direction)
                if new is not None and new != sub:
                    yield rule.name, direction, p, replace_at(term, p, new)
        if enable_beta:
            new = beta_step(sub)
            if new is not None:
                yield "beta", Direction.FORWARD, p, replace_at(term, p, new)
        if enable_eta:
            new = eta_step(sub)
            if new is not None:
                yield "eta", Direction.FORWARD, p, replace_at(term, p, new)


def _positions_with_terms(t: Term) -> list[tuple[tuple[int, ...], Term]]:
    out = []
    stack: list[tuple[Term, tuple[int, ...]]] = [(t, ())]
    while stack:
        u, p = stack.pop()
        out.append((p, u))
        kids = children(u)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((kids[i], p + (i,)))
    return out


def oracle_search(
    start: Term,
    goal: Term,
    rules: Sequence[RuleSpec],
    enable_beta: bool = True,
    enable_eta: bool = False,
    limits: OracleLimits = OracleLimits(),
) -> Optional[list[OracleStep]]:
    """Shortest rewrite trace from ``start`` to ``goal``, or ``None``.

    The explored space grows level by level from every seed term (the two
    goal sides plus both sides of each ground rule), following rule steps in
    both orientations and beta/eta reductions.  Edges are undirected, so a
    reduction discovered from a seed can be walked backwards as an expansion.
    Raises :class:`LimitExceeded` if ``max_states`` is hit before the goal
    sides connect.
    """
    if start == goal:
        return []
    index: dict[str, int] = {}
    terms: list[Term] = []
    adj: list[list[tuple[int, str, Direction, tuple[int, ...]]]] = []
    dsu: list[int] = []

    def find(x: int) -> int:
        while dsu[x] != x:
            dsu[x] = dsu[dsu[x]]
            x = dsu[x]
        return x

    def intern(t: Term) -> tuple[int, bool]:
        key = print_term(t)
        i = index.get(key)
        if i is not None:
            return i, False
        if len(terms) >= limits.max_states:
            raise LimitExceeded(f"oracle explored {limits.max_states} states")
        i = len(terms)
        index[key] = i
        terms.append(t)
        adj.append([])
        dsu.append(i)
        return i, True

    seeds = [start, goal]
    for r in rules:
        if r.is_ground:
            seeds.extend([r.lhs, r.rhs])
    frontier = []
    for s in seeds:
        i, fresh = intern(s)
        if fresh:
            frontier.append(i)
    s_id, g_id = index[print_term(start)], index[print_term(goal)]

    for _level in range(limits.max_depth):
        if find(s_id) == find(g_id) or not frontier:
            break
        nxt = []
        for u in frontier:
            for name, direction, pos, new in neighbors(terms[u], rules, enable_beta, enable_eta):
                if term_size(new) > limits.max_term_size:
                    continue
                v, fresh = intern(new)
                if fresh:
                    nxt.append(v)
                if v == u:
                    continue
                adj[u].append((v, name, direction, pos))
                adj[v].append((u, name, direction.flipped(), pos))
                ru, rv = find(u), find(v)
                if ru != rv:
                    dsu[max(ru, rv)] = min(ru, rv)
        frontier = nxt

    if find(s_id) != find(g_id):
        return None
    return _shortest(s_id, g_id, terms, adj)


def _shortest(s, g, terms, adj) -> list[OracleStep]:
    prev: dict[int, tuple[int, str, Direction, tuple[int, ...]]] = {s: (-1, "", Direction.FORWARD, ())}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        if u == g:
            break
        for v, name, direction, pos in adj[u]:
            if v not in prev:
                prev[v] = (u, name, direction, pos)
                queue.append(v)
    trace = []
    v = g
    while v != s:
        u, name, direction, pos = prev[v]
        trace.append(OracleStep(name, direction, pos, terms[v]))
        v = u
    trace.reverse()
    return trace

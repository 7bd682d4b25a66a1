"""Rule compilation, guarded rewrite application and the saturation loop."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

from .egraph import BETA, ETA, SUBST_INTERNAL, EGraph, Justification
from .ematch import MatchBinding, MatchDecision, ematch, pattern_depths, validate_match
from .rewrite import Direction, RuleSpec
from .subst import Shift, SubstTimeout, beta_class, eta_class, new_share, subst
from .term import (
    App, Lam, MVar, Term, UnderflowError,
    children, contains_let, metavars, _binds, _rebuild,
)

log = logging.getLogger(__name__)

__all__ = [
    "CompiledRewrite", "SaturationConfig", "SaturationReport", "Status", "RewriteResult",
    "UnboundMetavar", "compile_rule", "compile_rules", "apply_rewrite",
    "builtin_beta", "builtin_eta", "run",
]


class UnboundMetavar(ValueError):
    def __init__(self, rule: str, name: str, direction: Direction):
        super().__init__(f"rule {rule!r}: ?{name} is unbound in the {direction.value} direction")
        self.rule = rule
        self.name = name
        self.direction = direction


@dataclass(frozen=True, eq=False)
class CompiledRewrite:
    name: str
    direction: Direction
    trigger: Optional[Term]
    output: Optional[Term]
    lhs_depths: dict[str, frozenset[int]] = field(default_factory=dict)
    rhs_depths: dict[str, list[int]] = field(default_factory=dict)
    builtin: Optional[str] = None

    @property
    def label(self) -> str:
        if self.builtin:
            return self.builtin
        return f"{self.name}:{self.direction.value}"


def _occurrence_depths(p: Term) -> dict[str, list[int]]:
    acc: dict[str, list[int]] = {}
    stack = [(p, 0)]
    while stack:
        u, d = stack.pop()
        if isinstance(u, MVar):
            acc.setdefault(u.name, []).append(d)
            continue
        kids = children(u)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((kids[i], d + _binds(u, i)))
    return {k: sorted(v) for k, v in acc.items()}


def compile_rule(r: RuleSpec) -> list[CompiledRewrite]:
    out = []
    for direction in r.allowed():
        trigger, output = r.oriented(direction)
        bound = set(metavars(trigger))
        for name in metavars(output):
            if name not in bound:
                raise UnboundMetavar(r.name, name, direction)
        for side in (trigger, output):
            if metavars(side) and contains_let(side):
                raise ValueError(f"rule {r.name!r}: let-expressions around metavariables are not supported")
        out.append(CompiledRewrite(
            r.name, direction, trigger, output,
            pattern_depths(trigger), _occurrence_depths(output),
        ))
    return out


def compile_rules(rules: Sequence[RuleSpec]) -> list[CompiledRewrite]:
    names = set()
    out = []
    for r in rules:
        if r.name in names:
            raise ValueError(f"duplicate rule name {r.name!r}")
        names.add(r.name)
        out.extend(compile_rule(r))
    return out


class RewriteResult(NamedTuple):
    """Outcome of one application.

    ``root`` and ``result`` are the classes to be made equal.  ``lhs_id`` and
    ``rhs_id`` denote the concrete instance that justifies it; the caller
    unions those two, and congruence then connects them to ``root`` and
    ``result``.
    """

    root: int
    result: int
    justification: Justification
    lhs_id: int
    rhs_id: int


def _plug(p: Term, fill: Callable[[str, int], Term], depth: int = 0) -> Term:
    if isinstance(p, MVar):
        return fill(p.name, depth)
    kids = children(p)
    if not kids:
        return p
    return _rebuild(p, tuple(_plug(c, fill, depth + _binds(p, i)) for i, c in enumerate(kids)))


def _add_pattern(g: EGraph, p: Term, fill: Callable[[str, int], int], depth: int = 0) -> int:
    if isinstance(p, MVar):
        return fill(p.name, depth)
    kids = children(p)
    if not kids:
        return g.add_term(p)
    ids = tuple(_add_pattern(g, c, fill, depth + _binds(p, i)) for i, c in enumerate(kids))
    op = {App: "app", Lam: "lam"}.get(type(p), "all")
    return g.add_node(op, None, ids)


def _trigger_depth(rw: CompiledRewrite, name: str) -> int:
    # several depths only survive validation for closed classes, where the
    # shift is the identity anyway
    return max(rw.lhs_depths[name])


def apply_rewrite(g: EGraph, rw: CompiledRewrite, m: MatchBinding) -> Optional[RewriteResult]:
    """Instantiate the output of ``rw`` for match ``m``.

    Each output occurrence of ``?x`` at depth ``d_r`` whose trigger depth is
    ``d_l`` gets the class of ``?x`` shifted by ``d_r - d_l`` above cutoff
    ``d_l``.  Returns ``None`` if a shift underflows.
    """
    assignment = {k: g.find(v) for k, v in m.assignment.items()}
    best = {k: g.best(v) for k, v in assignment.items()}

    def lift_class(name: str, depth: int) -> int:
        cls = assignment[name]
        d_l = _trigger_depth(rw, name)
        if depth == d_l or not g.class_free_vars(cls):
            return cls
        return subst(g, cls, Shift(depth - d_l, d_l))

    def lift_best(name: str, depth: int) -> int:
        d_l = _trigger_depth(rw, name)
        return g.shift_exact(best[name], depth - d_l, d_l)

    try:
        result = _add_pattern(g, rw.output, lift_class)
        rhs = _add_pattern(g, rw.output, lift_best)
    except UnderflowError:
        log.debug("abandoned %s: shift underflow", rw.label)
        return None
    lhs = _add_pattern(g, rw.trigger, lambda name, depth: best[name])
    return RewriteResult(m.root, result, Justification.rule(rw.name, rw.direction.value), lhs, rhs)


class _Redex(NamedTuple):
    root: int
    ty: int
    body: int
    arg: int
    tag: object = None


def _beta_redexes(g: EGraph) -> list[_Redex]:
    out = []
    seen = set()
    for cid in g.class_ids():
        for node in list(g.class_nodes(cid)):
            if node.op != "app":
                continue
            f, a = (g.find(k) for k in node.children)
            for fn in list(g.class_nodes(f)):
                if fn.op != "lam":
                    continue
                t, b = (g.find(k) for k in fn.children)
                key = (cid, b, a)
                if key not in seen:
                    seen.add(key)
                    out.append(_Redex(cid, t, b, a))
    return out


def _apply_beta(g: EGraph, r: _Redex) -> RewriteResult:
    body, arg = g.best(r.body), g.best(r.arg)
    redex = g.add_node("app", None, (g.add_node("lam", None, (g.best(r.ty), body)), arg))
    reduct = g.instantiate_exact(body, arg)
    result = beta_class(g, r.body, r.arg)
    return RewriteResult(r.root, result, BETA, redex, reduct)


def builtin_beta(g: EGraph) -> list[RewriteResult]:
    """Beta-reduce every ``(app (lam ?t ?b) ?a)`` match on the class level."""
    return [_apply_beta(g, r) for r in _beta_redexes(g)]


def _eta_redexes(g: EGraph) -> list[_Redex]:
    out = []
    seen = set()
    for cid in g.class_ids():
        for node in list(g.class_nodes(cid)):
            if node.op != "lam":
                continue
            t, body = (g.find(k) for k in node.children)
            for bn in list(g.class_nodes(body)):
                if bn.op != "app":
                    continue
                f, x = (g.find(k) for k in bn.children)
                if 0 in g.class_free_vars(f):
                    continue
                tag = next((n.payload[1] for n in g.class_nodes(x)
                            if n.op == "bvar" and n.payload[0] == 0), False)
                if tag is False:
                    continue
                key = (cid, f)
                if key not in seen:
                    seen.add(key)
                    out.append(_Redex(cid, t, f, x, tag))
    return out


def _apply_eta(g: EGraph, r: _Redex) -> Optional[RewriteResult]:
    if 0 in g.class_free_vars(r.body):
        return None
    ty, f = g.best(r.ty), g.best(r.body)
    redex = g.add_node("lam", None, (ty, g.add_node("app", None, (f, g.add_node("bvar", (0, r.tag))))))
    reduct = g.shift_exact(f, -1, 0)
    result = eta_class(g, r.body)
    return RewriteResult(r.root, result, ETA, redex, reduct)


def builtin_eta(g: EGraph) -> list[RewriteResult]:
    """Eta-reduce every ``(lam ?t (app ?f (bvar 0)))`` with 0 not free in ``?f``."""
    return [res for r in _eta_redexes(g) if (res := _apply_eta(g, r)) is not None]


BETA_RULE = CompiledRewrite("beta", Direction.FORWARD, None, None, builtin="beta")
ETA_RULE = CompiledRewrite("eta", Direction.FORWARD, None, None, builtin="eta")


# ---------------------------------------------------------------------------
# the loop


class Status(str, enum.Enum):
    PROVED = "Proved"
    SATURATED = "Saturated"
    ITER_LIMIT = "IterLimit"
    NODE_LIMIT = "NodeLimit"
    TIME_LIMIT = "TimeLimit"


@dataclass
class SaturationConfig:
    iter_limit: int = 16
    node_limit: int = 20_000
    time_limit_ms: int = 60_000
    enable_beta: bool = True
    enable_eta: bool = True
    annotate_bvars: bool = False
    proof_heads: tuple[str, ...] = ()

    def __post_init__(self):
        if min(self.iter_limit, self.node_limit, self.time_limit_ms) <= 0:
            raise ValueError("limits must be positive")


@dataclass
class SaturationReport:
    status: Status
    iterations: int
    node_count: int
    class_count: int
    goal_lhs: int
    goal_rhs: int
    applications: dict[str, int] = field(default_factory=dict)
    aborts: dict[str, int] = field(default_factory=dict)
    fallback_unions: int = 0


def run(
    g: EGraph,
    rewrites: Sequence[CompiledRewrite],
    config: SaturationConfig,
    goal_lhs: int,
    goal_rhs: int,
    on_iteration: Optional[Callable[[EGraph, int], None]] = None,
) -> SaturationReport:
    builtins = [BETA_RULE] * config.enable_beta + [ETA_RULE] * config.enable_eta
    rewrites = builtins + [rw for rw in rewrites if not rw.builtin]
    report = SaturationReport(Status.ITER_LIMIT, 0, g.node_count, g.class_count, goal_lhs, goal_rhs)
    for rw in rewrites:
        report.applications.setdefault(rw.label, 0)
        report.aborts.setdefault(rw.label, 0)
    deadline = time.monotonic() + config.time_limit_ms / 1000
    g.deadline = deadline
    try:
        return _loop(g, rewrites, config, report, deadline, on_iteration)
    finally:
        g.deadline = None
        g.subst_shared = None


def _loop(g, rewrites, config, report, deadline, on_iteration) -> SaturationReport:
    goal_lhs, goal_rhs = report.goal_lhs, report.goal_rhs
    g.rebuild()

    def finish(status: Status) -> SaturationReport:
        report.status = status
        report.node_count = g.node_count
        report.class_count = g.class_count
        return report

    if g.is_equal(goal_lhs, goal_rhs):
        return finish(Status.PROVED)

    for iteration in range(1, config.iter_limit + 1):
        report.iterations = iteration
        shape = (g.class_count, g.canonical_node_count)
        merges = g.merges

        matches: list[tuple[CompiledRewrite, object]] = []
        for rw in rewrites:
            if rw.builtin == "beta":
                matches.extend((rw, r) for r in _beta_redexes(g))
            elif rw.builtin == "eta":
                matches.extend((rw, r) for r in _eta_redexes(g))
            else:
                matches.extend((rw, m) for m in ematch(g, rw.trigger))

        pending: list[tuple[int, int]] = []
        stop: Optional[Status] = None
        # the next iteration re-matches, so states built from this
        # iteration's classes may be reused until then
        g.subst_shared = new_share()
        for rw, m in matches:
            if g.node_count >= config.node_limit:
                stop = Status.NODE_LIMIT
                break
            if time.monotonic() > deadline:
                stop = Status.TIME_LIMIT
                break
            if not rw.builtin and validate_match(g, rw.trigger, m) is not MatchDecision.VALID:
                report.aborts[rw.label] += 1
                continue
            try:
                if rw.builtin == "beta":
                    res = _apply_beta(g, m)
                elif rw.builtin == "eta":
                    res = _apply_eta(g, m)
                else:
                    res = apply_rewrite(g, rw, m)
            except SubstTimeout:
                stop = Status.TIME_LIMIT
                break
            if res is None:
                report.aborts[rw.label] += 1
                continue
            report.applications[rw.label] += 1
            g.union(res.lhs_id, res.rhs_id, res.justification)
            pending.append((res.lhs_id, res.root))
            pending.append((res.rhs_id, res.result))

        g.subst_shared = None
        g.rebuild()
        for a, b in pending:
            if not g.is_equal(a, b):
                # congruence should already have connected these
                report.fallback_unions += 1
                g.union(a, b, SUBST_INTERNAL)
        g.rebuild()
        if on_iteration is not None:
            on_iteration(g, iteration)

        if g.is_equal(goal_lhs, goal_rhs):
            return finish(Status.PROVED)
        if stop is None and g.node_count >= config.node_limit:
            stop = Status.NODE_LIMIT
        if stop is None and time.monotonic() > deadline:
            stop = Status.TIME_LIMIT
        if stop is not None:
            return finish(stop)
        if g.merges == merges and (g.class_count, g.canonical_node_count) == shape:
            return finish(Status.SATURATED)
    return finish(Status.ITER_LIMIT)

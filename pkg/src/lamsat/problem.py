"""Problem files and the prove pipeline: normalize, encode, saturate,
explain, replay."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .egraph import EGraph
from .explain import (
    Accepted, Explanation, ExplanationIncomplete, Rejected, explain, explanation_to_json, replay_check,
)
from .rewrite import Direction, RuleSpec
from .saturate import SaturationConfig, SaturationReport, Status, compile_rules, run
from .term import (
    Term, _Parser, annotate_bound_vars, contains_let, erase_proofs, metavars, zeta_reduce,
)

__all__ = [
    "ProblemFile", "DuplicateRule", "ProofOutcome", "parse_problem", "load_problem",
    "resolve_config", "normalize_term", "normalize_rule", "prove", "report_json",
]


class DuplicateRule(ValueError):
    pass


@dataclass
class ProblemFile:
    goal: tuple[Term, Term]
    rules: list[RuleSpec] = field(default_factory=list)
    config: dict[str, object] = field(default_factory=dict)  # SaturationConfig field -> value


_BOOL_KEYS = {"beta": "enable_beta", "eta": "enable_eta", "annotate-bvars": "annotate_bvars"}
_NAT_KEYS = {"iter-limit": "iter_limit", "node-limit": "node_limit", "time-limit-ms": "time_limit_ms"}
CONFIG_KEYS = (*_BOOL_KEYS, *_NAT_KEYS, "proof-heads")


class _ProblemParser(_Parser):
    def keyword(self, expected: Optional[str] = None) -> tuple[str, tuple]:
        tok = self.next()
        if tok[0] != "atom" or (expected is not None and tok[1] != expected):
            raise self.error(f"expected {expected or 'keyword'}", tok)
        return tok[1], tok

    def open(self) -> None:
        tok = self.next()
        if tok[0] != "(":
            raise self.error("expected '('", tok)

    def problem(self) -> ProblemFile:
        self.open()
        self.keyword("problem")
        goal = None
        rules: list[RuleSpec] = []
        config: dict[str, object] = {}
        seen_config = False
        while self.peek()[0] != ")":
            self.open()
            head, tok = self.keyword()
            match head:
                case "goal":
                    if goal is not None:
                        raise self.error("more than one goal", tok)
                    self.allow_mvars = False
                    goal = (self.term(), self.term())
                    self.expect_close()
                case "rule":
                    rules.append(self.rule(rules))
                case "config":
                    if seen_config:
                        raise self.error("more than one config block", tok)
                    seen_config = True
                    config = self.config()
                case _:
                    raise self.error(f"unknown section {head!r}", tok)
        end = self.next()
        if goal is None:
            raise self.error("missing goal", end)
        if self.peek()[0] != "eof":
            raise self.error("trailing input")
        return ProblemFile(goal, rules, config)

    def rule(self, earlier: list[RuleSpec]) -> RuleSpec:
        name, tok = self.keyword()
        if any(r.name == name for r in earlier):
            raise DuplicateRule(f"duplicate rule name {name!r}")
        if name in ("beta", "eta"):
            raise self.error(f"rule name {name!r} is reserved", tok)
        self.allow_mvars = True
        lhs, rhs = self.term(), self.term()
        self.allow_mvars = False
        direction = Direction.BOTH
        if self.peek()[0] != ")":
            self.keyword(":dir")
            value, vtok = self.keyword()
            try:
                direction = Direction(value)
            except ValueError:
                raise self.error(f"bad direction {value!r}", vtok) from None
        self.expect_close()
        return RuleSpec(name, lhs, rhs, direction)

    def config(self) -> dict[str, object]:
        out: dict[str, object] = {}
        while self.peek()[0] != ")":
            self.open()
            key, tok = self.keyword()
            if key in _BOOL_KEYS:
                value, vtok = self.keyword()
                if value not in ("true", "false"):
                    raise self.error("expected true or false", vtok)
                out[_BOOL_KEYS[key]] = value == "true"
            elif key in _NAT_KEYS:
                out[_NAT_KEYS[key]] = self.nat(key)
            elif key == "proof-heads":
                self.open()
                heads = []
                while self.peek()[0] != ")":
                    heads.append(self.keyword()[0])
                self.next()
                out["proof_heads"] = tuple(heads)
            else:
                raise self.error(f"unknown config key {key!r}", tok)
            self.expect_close()
        self.next()
        return out


def parse_problem(text: str) -> ProblemFile:
    """Parse ``(problem (goal t t) (rule NAME p p [:dir d])* (config ...)?)``.

    Raises :class:`lamsat.term.TermSyntaxError` (a ``SyntaxError``) with a
    byte offset, or :class:`DuplicateRule`.
    """
    return _ProblemParser(text, allow_mvars=False).problem()


def load_problem(path: str) -> ProblemFile:
    with open(path, encoding="utf-8") as fh:
        return parse_problem(fh.read())


def resolve_config(problem: ProblemFile, overrides: Optional[dict[str, object]] = None) -> SaturationConfig:
    """Defaults, then the file's config block, then ``overrides``."""
    values = {**problem.config, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    names = {f.name for f in dataclasses.fields(SaturationConfig)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return SaturationConfig(**values)


def normalize_term(t: Term, config: SaturationConfig) -> Term:
    """zeta-reduce, erase proofs, then optionally tag bound variables."""
    if metavars(t) and contains_let(t):
        raise ValueError("let-expressions around metavariables are not supported")
    t = zeta_reduce(t)
    t = erase_proofs(t, config.proof_heads)
    if config.annotate_bvars:
        t = annotate_bound_vars(t)
    return t


def normalize_rule(r: RuleSpec, config: SaturationConfig) -> RuleSpec:
    return RuleSpec(r.name, normalize_term(r.lhs, config), normalize_term(r.rhs, config), r.directions)


@dataclass
class ProofOutcome:
    report: SaturationReport
    goal: tuple[Term, Term]
    rules: list[RuleSpec]
    explanation: Optional[Explanation] = None
    replay: str = "unavailable"  # accepted | rejected | unavailable
    reason: Optional[str] = None
    graph: Optional[EGraph] = None

    @property
    def exit_code(self) -> int:
        if self.report.status is not Status.PROVED:
            return 1
        return 0 if self.replay == "accepted" else 3


def prove(problem: ProblemFile, config: SaturationConfig, on_iteration=None) -> ProofOutcome:
    goal = (normalize_term(problem.goal[0], config), normalize_term(problem.goal[1], config))
    rules = [normalize_rule(r, config) for r in problem.rules]
    rewrites = compile_rules(rules)
    g = EGraph()
    lhs, rhs = g.add_term(goal[0]), g.add_term(goal[1])
    for r in rules:
        if r.is_ground:
            g.add_term(r.lhs)
            g.add_term(r.rhs)
    g.rebuild()
    report = run(g, rewrites, config, lhs, rhs, on_iteration)
    out = ProofOutcome(report, goal, rules, graph=g)
    if report.status is not Status.PROVED:
        return out
    try:
        out.explanation = explain(g, lhs, rhs, goal[0])
    except ExplanationIncomplete as exc:
        out.reason = f"ExplanationIncomplete: {exc}"
        return out
    decision = replay_check(out.explanation, rules, goal)
    if isinstance(decision, Accepted):
        out.replay = "accepted"
    else:
        assert isinstance(decision, Rejected)
        out.replay = "rejected"
        out.reason = f"step {decision.step_index}: {decision.reason}"
    return out


def report_json(out: ProofOutcome) -> dict:
    return {
        "status": out.report.status.value,
        "iterations": out.report.iterations,
        "nodes": out.report.node_count,
        "classes": out.report.class_count,
        "explanation": explanation_to_json(out.explanation) if out.explanation is not None else None,
        "replay": out.replay,
    }

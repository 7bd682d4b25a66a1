"""Equality saturation over de Bruijn lambda terms with capture-avoiding rewrites."""

from .egraph import EGraph, Justification
from .explain import Accepted, Explanation, ExplanationIncomplete, Rejected, Step, explain, replay_check
from .problem import ProblemFile, parse_problem, prove
from .rewrite import Direction, OracleLimits, RuleSpec, oracle_search
from .saturate import SaturationConfig, SaturationReport, Status, compile_rule, run
from .subst import Beta, Shift, subst
from .term import parse_pattern, parse_term, print_term

__all__ = [
    "EGraph", "Justification", "Accepted", "Explanation", "ExplanationIncomplete", "Rejected", "Step",
    "explain", "replay_check", "ProblemFile", "parse_problem", "prove", "Direction", "OracleLimits",
    "RuleSpec", "oracle_search", "SaturationConfig", "SaturationReport", "Status", "compile_rule", "run",
    "Beta", "Shift", "subst", "parse_pattern", "parse_term", "print_term",
]

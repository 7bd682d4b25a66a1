"""Command line front-end: ``prove``, ``check`` and ``oracle``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

from .explain import Accepted, explanation_from_json, explanation_to_json, replay_check
from .problem import load_problem, normalize_rule, normalize_term, prove, report_json, resolve_config
from .rewrite import LimitExceeded, OracleLimits, oracle_search
from .term import print_term

EXIT_OK, EXIT_FAIL, EXIT_ERROR, EXIT_UNVERIFIED = 0, 1, 2, 3


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=True)


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("saturation config (overrides the problem file)")
    g.add_argument("--beta", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--eta", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--annotate-bvars", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--iter-limit", type=int)
    g.add_argument("--node-limit", type=int)
    g.add_argument("--time-limit-ms", type=int)
    g.add_argument("--proof-heads", help="comma separated symbols")


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    heads = None
    if args.proof_heads is not None:
        heads = tuple(h for h in args.proof_heads.split(",") if h)
    return {
        "enable_beta": args.beta,
        "enable_eta": args.eta,
        "annotate_bvars": args.annotate_bvars,
        "iter_limit": args.iter_limit,
        "node_limit": args.node_limit,
        "time_limit_ms": args.time_limit_ms,
        "proof_heads": heads,
    }


def _human(path: str, out) -> str:
    rep = out.report
    lines = [f"{path}: {rep.status.value} after {rep.iterations} iterations "
             f"({rep.node_count} nodes, {rep.class_count} classes)"]
    if out.explanation is not None:
        lines.append(f"  start  {print_term(out.explanation.start)}")
        for i, s in enumerate(out.explanation.steps, 1):
            pos = ".".join(map(str, s.position)) or "root"
            lines.append(f"  {i:3d}. {s.rule} {s.direction.value} @{pos}  {print_term(s.result)}")
    lines.append(f"  replay: {out.replay}")
    if out.reason:
        lines.append(f"  note: {out.reason}")
    return "\n".join(lines)


def _prove_one(path: str, overrides: dict, as_json: bool, explanation_out: Optional[str]) -> tuple[int, str, str]:
    try:
        problem = load_problem(path)
        config = resolve_config(problem, overrides)
        out = prove(problem, config)
    except (OSError, SyntaxError, ValueError, RecursionError) as exc:
        return EXIT_ERROR, "", f"{path}: error: {exc}\n"
    if explanation_out and out.explanation is not None:
        try:
            with open(explanation_out, "w", encoding="utf-8") as fh:
                fh.write(_dumps(explanation_to_json(out.explanation)) + "\n")
        except OSError as exc:
            return EXIT_ERROR, "", f"{explanation_out}: error: {exc}\n"
    text = _dumps(report_json(out)) if as_json else _human(path, out)
    err = f"{path}: {out.reason}\n" if out.reason and as_json else ""
    return out.exit_code, text + "\n", err


def cmd_prove(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    if args.explanation_out and len(args.problems) > 1:
        print("error: --explanation-out needs a single problem", file=sys.stderr)
        return EXIT_ERROR
    jobs = [(p, overrides, args.json, args.explanation_out) for p in args.problems]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_prove_one, *zip(*jobs)))
    else:
        results = [_prove_one(*j) for j in jobs]
    code = 0
    for rc, out, err in results:
        sys.stdout.write(out)
        sys.stderr.write(err)
        code = max(code, rc)
    return code


def cmd_check(args: argparse.Namespace) -> int:
    try:
        problem = load_problem(args.problem)
        config = resolve_config(problem, _overrides(args))
        goal = (normalize_term(problem.goal[0], config), normalize_term(problem.goal[1], config))
        rules = [normalize_rule(r, config) for r in problem.rules]
        with open(args.explanation, encoding="utf-8") as fh:
            expl = explanation_from_json(json.load(fh))
    except (OSError, SyntaxError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    decision = replay_check(expl, rules, goal)
    if isinstance(decision, Accepted):
        print(f"accepted ({len(expl.steps)} steps)")
        return EXIT_OK
    print(f"rejected at step {decision.step_index}: {decision.reason}")
    return EXIT_FAIL


def cmd_oracle(args: argparse.Namespace) -> int:
    try:
        problem = load_problem(args.problem)
        config = resolve_config(problem, _overrides(args))
        goal = (normalize_term(problem.goal[0], config), normalize_term(problem.goal[1], config))
        rules = [normalize_rule(r, config) for r in problem.rules]
        limits = OracleLimits(args.max_depth, args.max_term_size, args.max_states)
        trace = oracle_search(goal[0], goal[1], rules, config.enable_beta, config.enable_eta, limits)
    except LimitExceeded as exc:
        print(f"LimitExceeded: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, SyntaxError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if trace is None:
        print("NOT-REACHED")
        return EXIT_FAIL
    print(f"start  {print_term(goal[0])}")
    for i, s in enumerate(trace, 1):
        pos = ".".join(map(str, s.position)) or "root"
        print(f"  {i:3d}. {s.rule} {s.direction.value} @{pos}  {print_term(s.term)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lamsat", description="Equality saturation over de Bruijn lambda terms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prove", help="saturate, explain and replay-check problems")
    p.add_argument("problems", nargs="+", metavar="PROBLEM")
    p.add_argument("--json", action="store_true", help="print the JSON report")
    p.add_argument("--explanation-out", metavar="PATH")
    p.add_argument("--jobs", type=int, default=1, help="problems to run in parallel")
    _config_flags(p)
    p.set_defaults(func=cmd_prove)

    c = sub.add_parser("check", help="replay a saved explanation")
    c.add_argument("problem")
    c.add_argument("explanation")
    _config_flags(c)
    c.set_defaults(func=cmd_check)

    o = sub.add_parser("oracle", help="brute-force search for a rewrite trace")
    o.add_argument("problem")
    defaults = OracleLimits()
    o.add_argument("--max-depth", type=int, default=defaults.max_depth)
    o.add_argument("--max-term-size", type=int, default=defaults.max_term_size)
    o.add_argument("--max-states", type=int, default=defaults.max_states)
    _config_flags(o)
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 20_000))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:  # e.g. non-positive limits from flags
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

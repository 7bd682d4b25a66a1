"""Random generators and independent reference implementations for tests.

Nothing here calls into ``lamsat.subst`` or the shifting helpers of
``lamsat.term``: the reference de Bruijn operations are written out again so
the tests compare two separate routes.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass
from typing import Optional

from lamsat.egraph import CONGRUENCE, EGraph, ENode
from lamsat.rewrite import Direction, RuleSpec, neighbors
from lamsat.subst import Beta, Shift
from lamsat.term import All, App, Bvar, Lam, Lit, MVar, Sym, Term, metavars

T = Sym("T")
SYMS = [Sym("a"), Sym("b"), Sym("f"), Sym("g"), Lit(0), Lit(1)]


# ---------------------------------------------------------------------------
# reference de Bruijn operations


def ref_size(t: Term) -> int:
    match t:
        case App(f, a):
            return 1 + ref_size(f) + ref_size(a)
        case Lam(ty, b) | All(ty, b):
            return 1 + ref_size(ty) + ref_size(b)
    return 1


def ref_free(t: Term, depth: int = 0) -> set[int]:
    match t:
        case Bvar(i, _):
            return {i - depth} if i >= depth else set()
        case App(f, a):
            return ref_free(f, depth) | ref_free(a, depth)
        case Lam(ty, b) | All(ty, b):
            return ref_free(ty, depth) | ref_free(b, depth + 1)
    return set()


class RefUnderflow(Exception):
    pass


def ref_shift(t: Term, offset: int, cutoff: int, depth: int = 0) -> Term:
    """Shift the free variables ``j >= cutoff`` of ``t`` (seen ``depth``
    binders below the point where the shift applies) to ``j + offset``."""
    match t:
        case Bvar(i, tag):
            j = i - depth
            if j < cutoff:
                return t
            if j + offset < 0:
                raise RefUnderflow
            return Bvar(j + offset + depth, tag)
        case App(f, a):
            return App(ref_shift(f, offset, cutoff, depth), ref_shift(a, offset, cutoff, depth))
        case Lam(ty, b):
            return Lam(ref_shift(ty, offset, cutoff, depth), ref_shift(b, offset, cutoff, depth + 1))
        case All(ty, b):
            return All(ref_shift(ty, offset, cutoff, depth), ref_shift(b, offset, cutoff, depth + 1))
    return t


def ref_beta_body(t: Term, value: Term, depth: int = 0) -> Term:
    """Replace the index bound ``depth`` binders above the root of ``t``
    (seen from inside) by ``value``, lowering the indices above it."""
    match t:
        case Bvar(i, tag):
            if i == depth:
                return ref_shift(value, depth, 0)
            return Bvar(i - 1, tag) if i > depth else t
        case App(f, a):
            return App(ref_beta_body(f, value, depth), ref_beta_body(a, value, depth))
        case Lam(ty, b):
            return Lam(ref_beta_body(ty, value, depth), ref_beta_body(b, value, depth + 1))
        case All(ty, b):
            return All(ref_beta_body(ty, value, depth), ref_beta_body(b, value, depth + 1))
    return t


# ---------------------------------------------------------------------------
# term enumeration straight from the class structure


def _node_term(op: str, payload, kids: tuple) -> Term:
    match op:
        case "bvar":
            return Bvar(*payload)
        case "sym":
            return Sym(payload)
        case "lit":
            return Lit(payload)
        case "app":
            return App(*kids)
        case "lam":
            return Lam(*kids)
        case "all":
            return All(*kids)
    raise ValueError(op)


def terms_upto(g: EGraph, cls: int, max_size: int) -> set[Term]:
    """Every term of size at most ``max_size`` that class ``cls`` represents."""
    memo: dict[tuple[int, int], frozenset[Term]] = {}

    def go(c: int, budget: int) -> frozenset[Term]:
        c = g.find(c)
        key = (c, budget)
        if key in memo:
            return memo[key]
        memo[key] = frozenset()  # cycles contribute nothing at a shrinking budget
        out = set()
        for node in g.nodes(c):
            if not node.children:
                out.add(_node_term(node.op, node.payload, ()))
                continue
            if budget < 3:
                continue
            x, y = node.children
            for tx in go(x, budget - 2):
                for ty in go(y, budget - 1 - ref_size(tx)):
                    out.add(_node_term(node.op, None, (tx, ty)))
        memo[key] = frozenset(out)
        return memo[key]

    return set(go(cls, max_size))


def all_terms(g: EGraph, cls: int, memo: Optional[dict] = None) -> frozenset[Term]:
    """Every term of class ``cls`` in an acyclic graph."""
    memo = {} if memo is None else memo
    gray = set()
    stack = [(g.find(cls), False)]
    while stack:
        c, expanded = stack.pop()
        if c in memo:
            continue
        if not expanded:
            if c in gray:
                raise ValueError("class graph is cyclic")
            gray.add(c)
            stack.append((c, True))
            stack.extend((k, False) for k in {g.find(k) for n in g.nodes(c) for k in n.children})
            continue
        out = set()
        for node in g.nodes(c):
            if not node.children:
                out.add(_node_term(node.op, node.payload, ()))
                continue
            x, y = (memo[g.find(k)] for k in node.children)
            out.update(_node_term(node.op, None, (tx, ty)) for tx in x for ty in y)
        memo[c] = frozenset(out)
    return memo[g.find(cls)]


def class_of(g: EGraph, t: Term) -> Optional[int]:
    """Class representing ``t`` in a rebuilt graph, found through canonical
    nodes rather than exact ids; ``None`` if ``t`` is not represented."""
    match t:
        case Bvar(i, tag):
            node = ENode("bvar", (i, tag), ())
        case Sym(name):
            node = ENode("sym", name, ())
        case Lit(v):
            node = ENode("lit", v, ())
        case App(f, a) | Lam(f, a) | All(f, a):
            kids = (class_of(g, f), class_of(g, a))
            if None in kids:
                return None
            op = {App: "app", Lam: "lam", All: "all"}[type(t)]
            node = ENode(op, None, kids)
        case _:
            node = ENode("eps", None, ())
    for c in g.class_ids():
        if node in g.class_nodes(c):
            return c
    return None


def is_acyclic(g: EGraph) -> bool:
    state: dict[int, int] = {}
    for root in g.class_ids():
        if root in state:
            continue
        stack = [(root, iter(g.nodes(root)), iter(()))]
        state[root] = 1
        while stack:
            c, nodes, kids = stack[-1]
            k = next(kids, None)
            if k is None:
                node = next(nodes, None)
                if node is None:
                    state[c] = 2
                    stack.pop()
                    continue
                stack[-1] = (c, nodes, iter([g.find(x) for x in node.children]))
                continue
            s = state.get(k)
            if s == 1:
                return False
            if s is None:
                state[k] = 1
                stack.append((k, iter(g.nodes(k)), iter(())))
    return True


# ---------------------------------------------------------------------------
# subst oracle


def lift_terms(terms: set[Term], s, depth: int, arg_terms: Optional[set[Term]] = None) -> set[Term]:
    if isinstance(s, Shift):
        return {ref_shift(t, s.offset, s.cutoff, depth) for t in terms}
    return {ref_beta_body(t, a, depth) for t in terms for a in arg_terms}


@dataclass
class SubstExpectation:
    lifted: set[Term]      # sigma applied to each represented term
    closed: set[Term]      # the same, closed under the graph's own equalities
    graph: EGraph          # the copy with every state's lifted set merged


def expected_subst(g: EGraph, cls: int, s, max_size: int) -> SubstExpectation:
    """Oracle for ``subst(g, cls, s)`` on an acyclic graph.

    Each state (class, sigma, depth) reached by walking down from ``cls``
    denotes a set of lifted terms that must all become equal.  A copy of the
    graph gets those sets added and merged, which accounts for lifted terms
    that already existed in other classes.
    """
    ref = copy.deepcopy(g)
    memo: dict = {}
    seen = set()
    todo = [(g.find(cls), s, 0)]
    root_lifted = None
    while todo:
        c, sig, d = todo.pop()
        if (c, sig, d) in seen:
            continue
        seen.add((c, sig, d))
        arg = all_terms(g, sig.arg, memo) if isinstance(sig, Beta) else None
        lifted = lift_terms(all_terms(g, c, memo), sig, d, arg)
        if root_lifted is None:
            root_lifted = lifted
        ids = [ref.add_term(t) for t in sorted(lifted, key=repr)]
        for i in ids[1:]:
            ref.union(ids[0], i, CONGRUENCE)
        for node in g.nodes(c):
            if node.op == "bvar" and isinstance(sig, Beta) and node.payload[0] == d:
                todo.append((g.find(sig.arg), Shift(d, 0), 0))
            elif node.op == "app":
                todo.extend((g.find(k), sig, d) for k in node.children)
            elif node.op in ("lam", "all"):
                ty, body = node.children
                todo.append((g.find(ty), sig, d))
                todo.append((g.find(body), sig, d + 1))
    ref.rebuild()
    root_id = ref.lookup_term(next(iter(root_lifted)))
    return SubstExpectation(
        {t for t in root_lifted if ref_size(t) <= max_size},
        terms_upto(ref, root_id, max_size),
        ref,
    )


def random_acyclic_graph(rng: random.Random, max_terms: int = 50, max_unions: int = 6,
                         cap: int = 200) -> tuple[EGraph, list[int]]:
    """An acyclic rebuilt graph from up to ``max_terms`` random terms and a few
    unions, with at most ``cap`` terms in any class."""
    while True:
        g = EGraph()
        ids = [g.add_term(random_term(rng, rng.randint(1, 8))) for _ in range(rng.randint(2, max_terms))]
        for _ in range(rng.randint(0, max_unions)):
            g.union(rng.choice(ids), rng.choice(ids), CONGRUENCE)
        g.rebuild()
        if not is_acyclic(g):
            continue
        memo: dict = {}
        if max(len(all_terms(g, c, memo)) for c in g.class_ids()) <= cap:
            return g, ids


def random_subst_case(seed: int):
    """Graph, class and substitution for one randomized subst check."""
    rng = random.Random(seed)
    g, ids = random_acyclic_graph(rng)
    open_ids = [i for i in ids if g.class_free_vars(i)] or ids
    c = rng.choice(open_ids)
    if rng.random() < 0.5:
        s = Shift(rng.choice([-1, 1, 2]), rng.randint(0, 2))
    else:
        s = Beta(g.find(rng.choice(ids)))
    return g, c, s


# ---------------------------------------------------------------------------
# brute-force congruence closure


def subterms(t: Term) -> list[Term]:
    out = [t]
    match t:
        case App(f, a):
            out += subterms(f) + subterms(a)
        case Lam(ty, b) | All(ty, b):
            out += subterms(ty) + subterms(b)
    return out


def congruence_reference(terms: list[Term], equations: list[tuple[Term, Term]]) -> dict[Term, int]:
    """Block number per subterm under the congruence generated by ``equations``."""
    universe = list(dict.fromkeys(u for t in terms for u in subterms(t)))
    parent = {u: u for u in universe}

    def find(u):
        while parent[u] != u:
            u = parent[u]
        return u

    for a, b in equations:
        parent[find(a)] = find(b)
    changed = True
    while changed:
        changed = False
        sig: dict[tuple, Term] = {}
        for u in universe:
            match u:
                case App(f, a):
                    key = ("app", find(f), find(a))
                case Lam(ty, b):
                    key = ("lam", find(ty), find(b))
                case All(ty, b):
                    key = ("all", find(ty), find(b))
                case _:
                    continue
            other = sig.setdefault(key, u)
            if find(other) != find(u):
                parent[find(u)] = find(other)
                changed = True
    blocks: dict[Term, int] = {}
    return {u: blocks.setdefault(find(u), len(blocks)) for u in universe}


# ---------------------------------------------------------------------------
# random terms, patterns and problems


def random_term(rng: random.Random, size: int, binders: int = 0, free: int = 2,
                leaves=SYMS) -> Term:
    """A random term of size at most ``size``; ``free`` extra indices may
    escape the root."""
    if size < 3 or rng.random() < 0.25:
        if binders + free and rng.random() < 0.45:
            return Bvar(rng.randrange(binders + free))
        return rng.choice(leaves)
    if size >= 3 and rng.random() < 0.3:
        return Lam(T, random_term(rng, size - 2, binders + 1, free, leaves))
    left = rng.randint(1, size - 2)
    return App(random_term(rng, left, binders, free, leaves),
               random_term(rng, size - 1 - left, binders, free, leaves))


PATTERN_LEAVES = [Sym("a"), Sym("b"), Sym("c"), Sym("f"), Sym("g"), Sym("h")]
PATTERN_VARS = ["x", "y"]


def random_pattern(rng: random.Random, size: int, binders: int = 0) -> Term:
    """A pattern whose bound variables are all bound inside it."""
    if size < 3 or rng.random() < 0.3:
        r = rng.random()
        if r < 0.35:
            return MVar(rng.choice(PATTERN_VARS))
        if binders and r < 0.55:
            return Bvar(rng.randrange(binders))
        return rng.choice(PATTERN_LEAVES)
    if rng.random() < 0.25:
        return Lam(T, random_pattern(rng, size - 2, binders + 1))
    left = rng.randint(1, size - 2)
    return App(random_pattern(rng, left, binders), random_pattern(rng, size - 1 - left, binders))


def random_rule(rng: random.Random, name: str) -> RuleSpec:
    while True:
        lhs = random_pattern(rng, rng.randint(1, 6))
        rhs = random_pattern(rng, rng.randint(1, 6))
        if lhs == rhs:
            continue
        lv, rv = set(metavars(lhs)), set(metavars(rhs))
        allowed = []
        if rv <= lv and not isinstance(lhs, MVar):
            allowed.append(Direction.FORWARD)
        if lv <= rv and not isinstance(rhs, MVar):
            allowed.append(Direction.BACKWARD)
        if not allowed:
            continue
        d = Direction.BOTH if len(allowed) == 2 else allowed[0]
        return RuleSpec(name, lhs, rhs, d)


def _instance(rng: random.Random, p: Term) -> Term:
    """Fill a pattern's metavariables with small closed terms (one per name)."""
    fill = {v: random_term(rng, 3, free=0, leaves=PATTERN_LEAVES) for v in metavars(p)}

    def go(u: Term, depth: int) -> Term:
        match u:
            case MVar(n):
                return ref_shift(fill[n], depth, 0)
            case App(f, a):
                return App(go(f, depth), go(a, depth))
            case Lam(ty, b):
                return Lam(go(ty, depth), go(b, depth + 1))
        return u

    return go(p, 0)


def random_problem(rng: random.Random):
    """Up to five rules and a goal of size at most 8.

    The lhs is often an instance of a rule side and the rhs is usually a short
    random walk from it, so a good share of the problems are provable.
    """
    rules = [random_rule(rng, f"r{i}") for i in range(rng.randint(1, 5))]
    rule = rng.choice(rules)
    trigger, _ = rule.oriented(rule.allowed()[0])
    lhs = _instance(rng, trigger)
    if ref_size(lhs) > 8 or rng.random() < 0.25:
        lhs = random_term(rng, 8, free=1, leaves=PATTERN_LEAVES)
    if rng.random() < 0.2:
        return (lhs, random_term(rng, 8, free=1, leaves=PATTERN_LEAVES)), rules
    rhs = lhs
    for _ in range(rng.randint(1, 3)):
        options = [t for *_, t in neighbors(rhs, rules, True, False) if ref_size(t) <= 8]
        if not options:
            break
        rhs = rng.choice(options)
    return (lhs, rhs), rules


# ---------------------------------------------------------------------------
# named-variable reference for beta/eta


def to_named(t: Term, env: tuple = (), fresh=None):
    """Convert to a tree with explicit binder names; free index k stays ("free", k)."""
    fresh = fresh if fresh is not None else iter(range(10**9))
    match t:
        case Bvar(i, tag):
            return ("var", env[-1 - i] if i < len(env) else ("free", i - len(env)), tag)
        case App(f, a):
            return ("app", to_named(f, env, fresh), to_named(a, env, fresh))
        case Lam(ty, b) | All(ty, b):
            name = f"v{next(fresh)}"
            kind = "lam" if isinstance(t, Lam) else "all"
            return (kind, name, to_named(ty, env, fresh), to_named(b, env + (name,), fresh))
    return ("const", t)


def from_named(n, env: tuple = ()) -> Term:
    match n:
        case ("var", name, tag):
            if isinstance(name, tuple):
                return Bvar(name[1] + len(env), tag)
            return Bvar(len(env) - 1 - max(i for i, x in enumerate(env) if x == name), tag)
        case ("app", f, a):
            return App(from_named(f, env), from_named(a, env))
        case ("lam", name, ty, b):
            return Lam(from_named(ty, env), from_named(b, env + (name,)))
        case ("all", name, ty, b):
            return All(from_named(ty, env), from_named(b, env + (name,)))
        case ("const", t):
            return t
    raise ValueError(n)


def named_subst(n, name, value):
    """Replace variable ``name``; binder names are globally fresh, so no capture."""
    match n:
        case ("var", x, _):
            return value if x == name else n
        case ("app", f, a):
            return ("app", named_subst(f, name, value), named_subst(a, name, value))
        case (kind, x, ty, b) if kind in ("lam", "all"):
            return (kind, x, named_subst(ty, name, value), named_subst(b, name, value))
    return n


def named_occurs(n, name) -> bool:
    match n:
        case ("var", x, _):
            return x == name
        case ("app", f, a):
            return named_occurs(f, name) or named_occurs(a, name)
        case (kind, _, ty, b) if kind in ("lam", "all"):
            return named_occurs(ty, name) or named_occurs(b, name)
    return False


def named_beta(t: Term) -> Optional[Term]:
    n = to_named(t)
    if n[0] == "app" and n[1][0] == "lam":
        _, (_, x, _, body), arg = n
        return from_named(named_subst(body, x, arg))
    return None


def named_eta(t: Term) -> Optional[Term]:
    n = to_named(t)
    if n[0] == "lam" and n[3][0] == "app" and n[3][2][0] == "var" and n[3][2][1] == n[1]:
        f = n[3][1]
        if not named_occurs(f, n[1]):
            return from_named(f)
    return None


# ---------------------------------------------------------------------------
# hypothesis strategies


def term_strategy(max_leaves: int = 6, tags: bool = False, lets: bool = False):
    from hypothesis import strategies as st

    from lamsat.term import EPS, Let

    bvars = st.builds(Bvar, st.integers(0, 3), st.sampled_from([None, "Nat"]) if tags else st.none())
    names = st.sampled_from(["a", "f", "g", "_", "Nat", "x.y", "h'"]).map(Sym)
    leaves = st.one_of(bvars, names, st.integers(0, 20).map(Lit), st.just(EPS))

    def extend(inner):
        options = [
            st.builds(App, inner, inner),
            st.builds(Lam, inner, inner),
            st.builds(All, inner, inner),
        ]
        if lets:
            options.append(st.builds(Let, inner, inner, inner))
        return st.one_of(options)

    return st.recursive(leaves, extend, max_leaves=max_leaves)

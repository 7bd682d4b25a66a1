"""Hashconsed e-graph with a may-free-variable analysis and a proof log.

Every e-node that is ever added gets its own id, and that id's node keeps the
exact child ids it was built from.  So each id denotes one concrete term
(:meth:`EGraph.term_of`), and union-find classes are sets of such ids.
Explanations are paths through the logged unions between concrete ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from .term import All, App, Bvar, Eps, Lam, Let, Lit, MVar, Sym, Term, UnderflowError, EPS

__all__ = [
    "ENode", "EClass", "EGraph", "Justification", "ProofEdge",
    "StaleId", "EncodeError", "node_to_term_head",
]


class ENode(NamedTuple):
    op: str
    payload: object
    children: tuple[int, ...]


class StaleId(KeyError):
    pass


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class Justification:
    kind: str  # rule | congruence | beta | eta | subst
    name: Optional[str] = None
    direction: Optional[str] = None

    @staticmethod
    def rule(name: str, direction: str) -> "Justification":
        return Justification("rule", name, direction)

    def __str__(self) -> str:
        if self.kind == "rule":
            return f"rule:{self.name}:{self.direction}"
        return self.kind


CONGRUENCE = Justification("congruence")
BETA = Justification("beta")
ETA = Justification("eta")
SUBST_INTERNAL = Justification("subst")


class ProofEdge(NamedTuple):
    a: int
    b: int
    just: Justification
    stamp: int


@dataclass
class EClass:
    id: int
    nodes: dict[ENode, int] = field(default_factory=dict)  # canonical node -> witness id
    parents: list[tuple[ENode, int]] = field(default_factory=list)
    free: frozenset[int] = frozenset()
    best: int = -1


_LEAF_OPS = ("bvar", "sym", "lit", "eps")


def _term_to_node(t: Term) -> tuple[str, object, tuple[Term, ...]]:
    match t:
        case Bvar(i, tag):
            return "bvar", (i, tag), ()
        case Sym(name):
            return "sym", name, ()
        case Lit(v):
            return "lit", v, ()
        case Eps():
            return "eps", None, ()
        case App(f, a):
            return "app", None, (f, a)
        case Lam(ty, b):
            return "lam", None, (ty, b)
        case All(ty, b):
            return "all", None, (ty, b)
        case Let():
            raise EncodeError("let-expressions must be zeta-reduced before encoding")
        case MVar(name):
            raise EncodeError(f"metavariable ?{name} in a plain term")
    raise TypeError(f"not a term: {t!r}")


def node_to_term_head(node: ENode, kids: tuple[Term, ...]) -> Term:
    match node.op:
        case "bvar":
            i, tag = node.payload
            return Bvar(i, tag)
        case "sym":
            return Sym(node.payload)
        case "lit":
            return Lit(node.payload)
        case "eps":
            return EPS
        case "app":
            return App(*kids)
        case "lam":
            return Lam(*kids)
        case "all":
            return All(*kids)
    raise ValueError(f"unknown e-node op {node.op!r}")


def _node_str(node: ENode) -> str:
    match node.op:
        case "bvar":
            i, tag = node.payload
            return f"(bvar {i})" if tag is None else f'(bvar {i} : "{tag}")'
        case "sym":
            return f"(sym {node.payload})"
        case "lit":
            return f"(lit {node.payload})"
        case "eps":
            return "(eps)"
    return "(" + " ".join([node.op, *map(str, node.children)]) + ")"


class EGraph:
    def __init__(self):
        self._nodes: list[ENode] = []  # exact node per id
        self._memo: dict[ENode, int] = {}  # exact node -> id
        self._uf: list[int] = []
        self._size: list[int] = []  # term size per id
        self.hashcons: dict[ENode, int] = {}  # canonical node -> witness id
        self.classes: dict[int, EClass] = {}
        self._repair: list[int] = []
        self._analysis: list[int] = []
        self.edges: list[ProofEdge] = []
        self.adjacency: list[list[int]] = []
        self._edge_keys: set[tuple] = set()
        self.merges = 0
        self._terms: dict[int, Term] = {}
        self._exact_memo: dict[tuple, int] = {}
        self.subst_cache: dict[tuple, tuple[int, int]] = {}
        # see subst.new_share
        self.subst_shared: Optional[tuple] = None
        self.deadline: Optional[float] = None  # time.monotonic() value honoured by long operations

    # -- ids ---------------------------------------------------------------

    def _check(self, id: int) -> None:
        if not (isinstance(id, int) and 0 <= id < len(self._uf)):
            raise StaleId(id)

    def find(self, id: int) -> int:
        uf = self._uf
        try:
            root = uf[id]
        except (IndexError, TypeError):
            raise StaleId(id) from None
        if root == id:
            if id < 0:
                raise StaleId(id)
            return id
        self._check(id)
        root = id
        while uf[root] != root:
            root = uf[root]
        while uf[id] != root:
            uf[id], id = root, uf[id]
        return root

    def is_equal(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)

    def canonicalize(self, node: ENode) -> ENode:
        if not node.children:
            return node
        return ENode(node.op, node.payload, tuple(self.find(c) for c in node.children))

    @property
    def node_count(self) -> int:
        """Number of e-node ids ever created (monotone)."""
        return len(self._nodes)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    @property
    def canonical_node_count(self) -> int:
        return len(self.hashcons)

    def exact_node(self, id: int) -> ENode:
        self._check(id)
        return self._nodes[id]

    def class_ids(self) -> list[int]:
        return sorted(self.classes)

    def nodes(self, id: int) -> list[ENode]:
        return list(self.classes[self.find(id)].nodes)

    def class_nodes(self, id: int) -> dict[ENode, int]:
        return self.classes[self.find(id)].nodes

    # -- adding --------------------------------------------------------------

    def _node_free(self, node: ENode) -> frozenset[int]:
        match node.op:
            case "bvar":
                return frozenset((node.payload[0],))
            case "app":
                f, a = node.children
                return self.classes[self.find(f)].free | self.classes[self.find(a)].free
            case "lam" | "all":
                t, b = node.children
                inner = self.classes[self.find(b)].free
                return self.classes[self.find(t)].free | frozenset(i - 1 for i in inner if i > 0)
        return frozenset()

    def add_node(self, op: str, payload: object = None, children: tuple[int, ...] = ()) -> int:
        key = ENode(op, payload, tuple(children))
        id = self._memo.get(key)
        if id is not None:
            return id
        for c in children:
            self._check(c)
        id = len(self._nodes)
        self._nodes.append(key)
        self._memo[key] = id
        self._uf.append(id)
        self._size.append(1 + sum(self._size[c] for c in children))
        self.adjacency.append([])
        canon = self.canonicalize(key)
        existing = self.hashcons.get(canon)
        if existing is not None:
            cls = self.classes[self.find(existing)]
            self.classes[id] = EClass(id, {}, [], cls.free, id)
            self.union(id, existing, CONGRUENCE)
            return id
        self.hashcons[canon] = id
        cls = EClass(id, {canon: id}, [], self._node_free(canon), id)
        self.classes[id] = cls
        for c in canon.children:
            self.classes[c].parents.append((canon, id))
        return id

    def add_term(self, t: Term) -> int:
        """Add ``t`` and return the id denoting exactly ``t``."""
        # explicit stack keyed by object identity: hashing deep terms is quadratic
        done: dict[int, int] = {}
        stack: list[tuple[Term, bool]] = [(t, False)]
        while stack:
            u, expanded = stack.pop()
            if id(u) in done:
                continue
            op, payload, kids = _term_to_node(u)
            if expanded or not kids:
                done[id(u)] = self.add_node(op, payload, tuple(done[id(k)] for k in kids))
            else:
                stack.append((u, True))
                for k in reversed(kids):
                    if id(k) not in done:
                        stack.append((k, False))
        return done[id(t)]

    def lookup_term(self, t: Term) -> Optional[int]:
        """Id of exactly ``t`` if it was ever added, without modifying the graph."""
        op, payload, kids = _term_to_node(t)
        ids = []
        for k in kids:
            i = self.lookup_term(k)
            if i is None:
                return None
            ids.append(i)
        return self._memo.get(ENode(op, payload, tuple(ids)))

    # -- union / rebuild -----------------------------------------------------

    def _log(self, a: int, b: int, j: Justification) -> None:
        if a == b:
            return
        key = (min(a, b), max(a, b), j)
        if key in self._edge_keys:
            return
        self._edge_keys.add(key)
        e = len(self.edges)
        self.edges.append(ProofEdge(a, b, j, e))
        self.adjacency[a].append(e)
        self.adjacency[b].append(e)

    def union(self, a: int, b: int, just: Justification) -> int:
        """Merge the classes of ``a`` and ``b``; the edge a--b is logged even if
        they are already equal."""
        ra, rb = self.find(a), self.find(b)
        self._log(a, b, just)
        if ra == rb:
            return ra
        ca, cb = self.classes[ra], self.classes[rb]
        if (len(ca.nodes) + len(ca.parents), -ra) < (len(cb.nodes) + len(cb.parents), -rb):
            ca, cb = cb, ca
            ra, rb = rb, ra
        # ra absorbs rb
        self._uf[rb] = ra
        self.merges += 1
        del self.classes[rb]
        for n, w in cb.nodes.items():
            ca.nodes.setdefault(n, w)
        ca.parents.extend(cb.parents)
        merged = ca.free | cb.free
        if merged != ca.free:
            self._analysis.append(ra)
        if merged != cb.free:
            self._analysis.append(ra)
        ca.free = merged
        if (self._size[cb.best], cb.best) < (self._size[ca.best], ca.best):
            ca.best = cb.best
        self._repair.append(ra)
        return ra

    def rebuild(self) -> None:
        while self._repair or self._analysis:
            todo = list(dict.fromkeys(self.find(c) for c in self._repair))
            self._repair = []
            for c in todo:
                self._repair_class(c)
            pending = list(dict.fromkeys(self.find(c) for c in self._analysis))
            self._analysis = []
            for c in pending:
                self._propagate(c)
        self._recanonicalize()

    def _repair_class(self, c: int) -> None:
        cls = self.classes.get(self.find(c))
        if cls is None:
            return
        for node, _ in cls.parents:
            self.hashcons.pop(node, None)
        seen: dict[ENode, int] = {}
        for node, pid in cls.parents:
            canon = self.canonicalize(node)
            other = self.hashcons.get(canon)
            if other is not None and other != pid:
                self.union(pid, other, CONGRUENCE)
            self.hashcons[canon] = other if other is not None else pid
            seen.setdefault(canon, pid)
        cls = self.classes[self.find(c)]
        cls.parents = list(seen.items())

    def _propagate(self, c: int) -> None:
        cls = self.classes.get(self.find(c))
        if cls is None:
            return
        for node, pid in cls.parents:
            pc = self.classes[self.find(pid)]
            nf = self._node_free(node)
            if not nf <= pc.free:
                pc.free = pc.free | nf
                self._analysis.append(pc.id)

    def _recanonicalize(self) -> None:
        for cls in self.classes.values():
            fresh: dict[ENode, int] = {}
            for n, w in cls.nodes.items():
                fresh.setdefault(self.canonicalize(n), w)
            cls.nodes = fresh

    # -- queries ---------------------------------------------------------------

    def class_free_vars(self, id: int) -> frozenset[int]:
        return self.classes[self.find(id)].free

    def best(self, id: int) -> int:
        """Member id whose term is smallest."""
        return self.classes[self.find(id)].best

    def term_size_of(self, id: int) -> int:
        self._check(id)
        return self._size[id]

    def term_of(self, id: int) -> Term:
        """The concrete term denoted by ``id``."""
        self._check(id)
        cache = self._terms
        if id in cache:
            return cache[id]
        stack = [id]
        while stack:
            i = stack[-1]
            if i in cache:
                stack.pop()
                continue
            node = self._nodes[i]
            missing = [c for c in node.children if c not in cache]
            if missing:
                stack.extend(missing)
                continue
            stack.pop()
            cache[i] = node_to_term_head(node, tuple(cache[c] for c in node.children))
        return cache[id]

    # -- exact-id term operations ---------------------------------------------

    def _map_exact(self, root: int, tag: tuple, at_bvar, untouched) -> int:
        # rebuilds the term of ``root`` bottom-up, memoized per (tag, id, depth)
        memo = self._exact_memo
        stack = [(root, 0)]
        while stack:
            i, d = stack[-1]
            k = (tag, i, d)
            if k in memo:
                stack.pop()
                continue
            node = self._nodes[i]
            if node.op == "bvar":
                memo[k] = at_bvar(i, node.payload, d)
            elif not node.children or untouched(self.classes[self.find(i)].free, d):
                memo[k] = i
            else:
                inner = d + 1 if node.op in ("lam", "all") else d
                kids = ((node.children[0], d), (node.children[1], inner))
                missing = [c for c in kids if (tag, *c) not in memo]
                if missing:
                    stack.extend(missing)
                    continue
                memo[k] = self.add_node(node.op, None, tuple(memo[(tag, *c)] for c in kids))
            stack.pop()
        return memo[(tag, root, 0)]

    def shift_exact(self, id: int, offset: int, cutoff: int = 0) -> int:
        """Id of ``shift_term(term_of(id), offset, cutoff)``, added if new."""
        self._check(id)
        if offset == 0:
            return id

        def at_bvar(i, payload, d):
            idx, tag = payload
            if idx - d < cutoff:
                return i
            if idx + offset < d:
                raise UnderflowError(f"shifting index {idx - d} by {offset}")
            return self.add_node("bvar", (idx + offset, tag))

        return self._map_exact(id, ("shift", offset, cutoff), at_bvar,
                               lambda free, d: not free or max(free) < cutoff + d)

    def instantiate_exact(self, body: int, value: int) -> int:
        """Id of ``instantiate_top(term_of(body), term_of(value))``, added if new."""
        self._check(body)
        self._check(value)

        def at_bvar(i, payload, d):
            idx, tag = payload
            if idx == d:
                return self.shift_exact(value, d, 0)
            if idx > d:
                return self.add_node("bvar", (idx - 1, tag))
            return i

        return self._map_exact(body, ("inst", value), at_bvar, lambda free, d: not free or max(free) < d)

    def best_term(self, id: int) -> Term:
        return self.term_of(self.best(id))

    def extract_terms(self, id: int, max_size: int) -> set[Term]:
        """All terms of size at most ``max_size`` represented by the class."""
        if max_size < 1:
            raise ValueError("max_size must be at least 1")
        root = self.find(id)
        reach = self._reachable(root)
        table: dict[int, list[set[Term]]] = {c: [set() for _ in range(max_size + 1)] for c in reach}
        for size in range(1, max_size + 1):
            for c in reach:
                bucket = table[c][size]
                for node in self.classes[c].nodes:
                    if not node.children:
                        if size == 1:
                            bucket.add(node_to_term_head(node, ()))
                        continue
                    x, y = (self.find(k) for k in node.children)
                    for sx in range(1, size - 1):
                        sy = size - 1 - sx
                        for tx in table[x][sx]:
                            for ty in table[y][sy]:
                                bucket.add(node_to_term_head(node, (tx, ty)))
        out: set[Term] = set()
        for s in table[root]:
            out |= s
        return out

    def _reachable(self, root: int) -> list[int]:
        seen = {root: None}
        stack = [root]
        while stack:
            c = stack.pop()
            for node in self.classes[c].nodes:
                for k in node.children:
                    k = self.find(k)
                    if k not in seen:
                        seen[k] = None
                        stack.append(k)
        return sorted(seen)

    def reachable(self, root: int) -> list[int]:
        return self._reachable(self.find(root))

    def dump(self) -> str:
        """Line-oriented listing: ``class <id>: <node> ... | fv={i,j}``."""
        lines = []
        for c in self.class_ids():
            cls = self.classes[c]
            nodes = " ".join(_node_str(n) for n in cls.nodes)
            fv = ",".join(map(str, sorted(cls.free)))
            lines.append(f"class {c}: {nodes} | fv={{{fv}}}")
        return "\n".join(lines)

    def add_terms(self, ts: Iterable[Term]) -> list[int]:
        return [self.add_term(t) for t in ts]

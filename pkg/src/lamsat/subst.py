"""Substitution on e-classes.

``subst(g, c, sigma)`` walks the subgraph under ``c`` and builds, bottom-up,
a class that represents ``sigma`` applied to every term of ``c``.  New classes
can only start from a finished node, so on a cycle a node whose children are
not finished yet is parked until they are; every cycle has a node that can
finish without going round it, so the parked nodes always drain.

States are ``(class, sigma, depth)``.  A state whose class has no free index
that sigma would touch is the identity and reuses the class as is; since the
free sets are finite this also bounds how deep cycles through binders go.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

from .egraph import SUBST_INTERNAL, EGraph, ENode
from .term import UnderflowError

__all__ = [
    "Shift", "Beta", "Sigma", "Index", "ClassRef", "SubstState", "SubstError", "SubstTimeout",
    "apply_sigma", "new_share", "subst", "eta_class", "beta_class",
]


@dataclass(frozen=True)
class Shift:
    """Add ``offset`` to indices whose distance past the binders crossed is
    at least ``cutoff``."""

    offset: int
    cutoff: int = 0


@dataclass(frozen=True)
class Beta:
    """Replace the variable bound just above the root by class ``arg``."""

    arg: int


Sigma = Union[Shift, Beta]


@dataclass(frozen=True)
class Index:
    value: int


@dataclass(frozen=True)
class ClassRef:
    id: int


class SubstError(RuntimeError):
    pass


class SubstTimeout(SubstError):
    """The e-graph's deadline passed while a substitution was running."""


def apply_sigma(s: Sigma, idx: int, depth: int, g: Optional[EGraph] = None) -> Union[Index, ClassRef]:
    if idx < 0 or depth < 0:
        raise ValueError("index and depth must be natural numbers")
    if isinstance(s, Shift):
        if idx - depth >= s.cutoff:
            if idx + s.offset < depth:
                raise UnderflowError(f"shifting index {idx - depth} by {s.offset}")
            return Index(idx + s.offset)
        return Index(idx)
    if idx > depth:
        return Index(idx - 1)
    if idx < depth:
        return Index(idx)
    if g is None:
        raise ValueError("substituting a class needs the e-graph")
    return ClassRef(subst(g, s.arg, Shift(depth, 0)))


Key = tuple[int, Sigma, int]


def _key(cls: int, s: Sigma, depth: int) -> Key:
    # a shift at depth d acts like the same shift at depth 0 with cutoff + d,
    # unless it can underflow, where the check needs the real depth
    if isinstance(s, Shift) and s.offset >= -s.cutoff:
        return (cls, Shift(s.offset, s.cutoff + depth), 0)
    return (cls, s, depth)


@dataclass
class _Pending:
    owner: Key
    plan: tuple
    blockers: set[Key]


@dataclass
class _Frame:
    key: Key
    ni: int = 0
    ci: int = 0
    plan: Optional[tuple] = None


@dataclass
class SubstState:
    """Bookkeeping for one ``subst`` call.

    ``done`` maps a state to its substitute class, ``visited`` holds states
    whose traversal has started, and ``waiting`` holds parked nodes together
    with the states they still wait for.
    """

    g: EGraph
    snapshot: dict[int, list[ENode]] = field(default_factory=dict)
    free: dict[int, frozenset[int]] = field(default_factory=dict)
    done: dict[Key, int] = field(default_factory=dict)
    visited: set[Key] = field(default_factory=set)
    waiting: dict[int, _Pending] = field(default_factory=dict)
    blocked_by: dict[Key, list[int]] = field(default_factory=dict)
    _next_pending: int = 0
    _draining: bool = False
    _built: int = 0
    _queue: deque = field(default_factory=deque)

    def take_snapshot(self, roots: list[int]) -> None:
        g = self.g
        find = g.find
        stack = [find(r) for r in roots]
        while stack:
            c = stack.pop()
            if c in self.snapshot:
                continue
            free = g.class_free_vars(c)
            self.free[c] = free
            if not free:
                self.snapshot[c] = []
                continue
            # canonical as of the snapshot: merges made while substituting
            # must not change which subgraph is walked
            nodes = [n if not n.children else ENode(n.op, n.payload, tuple(find(k) for k in n.children))
                     for n in g.class_nodes(c)]
            self.snapshot[c] = nodes
            for n in nodes:
                stack.extend(n.children)

    def is_identity(self, cls: int, s: Sigma, depth: int) -> bool:
        free = self.free[cls]
        if not free:
            return True
        if isinstance(s, Shift):
            return s.offset == 0 or max(free) < s.cutoff + depth
        return max(free) < depth

    # -- traversal --------------------------------------------------------------

    def child(self, cls: int, s: Sigma, depth: int):
        if cls not in self.free:
            self.take_snapshot([cls])
        if self.is_identity(cls, s, depth):
            return ("id", cls)
        return ("key", _key(cls, s, depth))

    def plan_for(self, key: Key, node: ENode) -> tuple:
        cls, s, depth = key
        if node.op == "bvar":
            idx, tag = node.payload
            if isinstance(s, Beta) and idx == depth:
                return ("alias", None, None, (self.child(s.arg, Shift(depth, 0), 0),))
            r = apply_sigma(s, idx, depth)
            return ("leaf", "bvar", (r.value, tag), ())
        if not node.children:
            return ("leaf", node.op, node.payload, ())
        if node.op == "app":
            f, a = node.children
            kids = (self.child(f, s, depth), self.child(a, s, depth))
        else:
            t, b = node.children
            kids = (self.child(t, s, depth), self.child(b, s, depth + 1))
        return ("node", node.op, node.payload, kids)

    def visit(self, root: Key) -> None:
        if root in self.visited:
            return
        self.visited.add(root)
        stack = [_Frame(root)]
        while stack:
            fr = stack[-1]
            nodes = self.snapshot[fr.key[0]]
            if fr.ni >= len(nodes):
                stack.pop()
                continue
            if fr.plan is None:
                fr.plan = self.plan_for(fr.key, nodes[fr.ni])
                fr.ci = 0
            kids = fr.plan[3]
            descended = False
            while fr.ci < len(kids):
                kind, ref = kids[fr.ci]
                if kind == "key" and ref not in self.visited:
                    self.visited.add(ref)
                    stack.append(_Frame(ref))
                    descended = True
                    break
                fr.ci += 1
            if descended:
                continue
            blockers = {ref for kind, ref in kids if kind == "key" and ref not in self.done}
            if blockers:
                pid = self._next_pending
                self._next_pending += 1
                self.waiting[pid] = _Pending(fr.key, fr.plan, blockers)
                for b in blockers:
                    self.blocked_by.setdefault(b, []).append(pid)
            else:
                self.construct(fr.key, fr.plan)
            fr.ni += 1
            fr.plan = None

    def construct(self, owner: Key, plan: tuple) -> int:
        g = self.g
        self._built += 1
        if g.deadline is not None and not self._built % 4096 and time.monotonic() > g.deadline:
            raise SubstTimeout("deadline passed during substitution")
        kind, op, payload, kids = plan
        ids = tuple(ref if k == "id" else self.done[ref] for k, ref in kids)
        if kind == "alias":
            new = ids[0]
        else:
            new = g.add_node(op, payload, ids)
        if owner in self.done:
            g.union(self.done[owner], new, SUBST_INTERNAL)
        else:
            self.done[owner] = new
            self.process_waiting(owner)
        return g.find(self.done[owner])

    def process_waiting(self, finished: Key) -> list[int]:
        """Build every parked node that no longer waits on anything.

        Called when ``finished`` gets its first node.  Returns, in build
        order, the class each unparked node landed in, including nodes
        unparked by states that complete during the cascade.
        """
        self._queue.append(finished)
        if self._draining:
            return []
        self._draining = True
        built: list[int] = []
        try:
            while self._queue:
                k = self._queue.popleft()
                for pid in self.blocked_by.pop(k, []):
                    pend = self.waiting.get(pid)
                    if pend is None:
                        continue
                    pend.blockers.discard(k)
                    if not pend.blockers:
                        del self.waiting[pid]
                        built.append(self.construct(pend.owner, pend.plan))
        finally:
            self._draining = False
        return built

    def run(self, cls: int, s: Sigma) -> int:
        g = self.g
        cls = g.find(cls)
        roots = [cls] + ([s.arg] if isinstance(s, Beta) else [])
        self.take_snapshot(roots)
        if self.is_identity(cls, s, 0):
            return cls
        key = _key(cls, s, 0)
        self.visit(key)
        if self.waiting:
            raise SubstError(f"{len(self.waiting)} nodes still waiting after traversal")
        if key not in self.done:
            raise SubstError("substitution produced no class")
        return g.find(self.done[key])


def new_share() -> tuple:
    """Fresh state for ``EGraph.subst_shared``.

    While a share is installed, calls reuse each other's snapshot and
    finished states.  A reused state may predate later merges: its class
    still holds ``sigma`` of the members it saw, which are equal to the
    current ones, so results stay sound but can miss the newer members.
    """
    return ({}, {}, {}, set())


def subst(g: EGraph, c: int, s: Sigma) -> int:
    """Extend ``g`` with a class representing ``s`` applied to each term of ``c``."""
    if isinstance(s, Beta):
        s = Beta(g.find(s.arg))
    cache_key = (g.find(c), s)
    hit = g.subst_cache.get(cache_key)
    if hit is not None and hit[0] == g.merges:
        return g.find(hit[1])
    st = SubstState(g)
    shared = g.subst_shared
    if shared is not None:
        st.snapshot, st.free, st.done, st.visited = shared
    try:
        out = st.run(c, s)
    except BaseException:
        if shared is not None:
            # half-finished states must not leak into later calls
            g.subst_shared = new_share()
        raise
    # entries go stale as soon as any class is merged
    g.subst_cache[cache_key] = (g.merges, out)
    return out


def eta_class(g: EGraph, c: int) -> int:
    return subst(g, c, Shift(-1, 1))


def beta_class(g: EGraph, c: int, arg: int) -> int:
    return subst(g, c, Beta(arg))

"""Plain de Bruijn terms: syntax, printing, shifting and the reduction rules.

This module is the ground truth for everything else in the package.  The
e-graph side is checked against the functions here, and the replay checker
uses nothing but this module and :mod:`lamsat.rewrite`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

__all__ = [
    "Term", "Bvar", "App", "Lam", "All", "Let", "Sym", "Lit", "Eps", "MVar",
    "EPS", "WILDCARD",
    "TermSyntaxError", "NegativeIndexError", "UnderflowError",
    "parse_term", "parse_pattern", "print_term",
    "shift_term", "instantiate_top", "beta_step", "eta_step", "zeta_reduce",
    "erase_proofs", "fvars_term", "annotate_bound_vars",
    "term_size", "metavars", "children", "subterm_at", "replace_at", "positions",
    "contains_let",
]


@dataclass(frozen=True, slots=True)
class Bvar:
    index: int
    tag: Optional[str] = None


@dataclass(frozen=True, slots=True)
class App:
    fn: "Term"
    arg: "Term"


@dataclass(frozen=True, slots=True)
class Lam:
    ty: "Term"
    body: "Term"


@dataclass(frozen=True, slots=True)
class All:
    ty: "Term"
    body: "Term"


@dataclass(frozen=True, slots=True)
class Let:
    ty: "Term"
    value: "Term"
    body: "Term"


@dataclass(frozen=True, slots=True)
class Sym:
    name: str


@dataclass(frozen=True, slots=True)
class Lit:
    value: int


@dataclass(frozen=True, slots=True)
class Eps:
    pass


@dataclass(frozen=True, slots=True)
class MVar:
    """Pattern metavariable ``?name``; never part of a plain term."""

    name: str


Term = Union[Bvar, App, Lam, All, Let, Sym, Lit, Eps, MVar]

EPS = Eps()
WILDCARD = Sym("_")


class TermSyntaxError(SyntaxError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.msg = message
        self.offset = offset


class NegativeIndexError(TermSyntaxError, IndexError):
    pass


class UnderflowError(ValueError):
    """A shift would produce a negative de Bruijn index."""


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r'\s+|;[^\n]*|(\()|(\))|("(?:[^"\\]|\\.)*")|([^\s()";]+)')
_SYMBOL = re.compile(r"[A-Za-z_][A-Za-z0-9_.']*\Z")
_NAT = re.compile(r"[0-9]+\Z")
_NEG = re.compile(r"-[0-9]+\Z")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise TermSyntaxError("unterminated string", _byte_offset(text, pos))
        if m.group(1):
            tokens.append(("(", "(", pos))
        elif m.group(2):
            tokens.append((")", ")", pos))
        elif m.group(3):
            tokens.append(("str", m.group(3), pos))
        elif m.group(4):
            tokens.append(("atom", m.group(4), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, allow_mvars: bool):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.allow_mvars = allow_mvars

    def error(self, message: str, tok=None, cls=TermSyntaxError):
        tok = tok or self.tokens[self.i]
        return cls(message, _byte_offset(self.text, tok[2]))

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_close(self):
        tok = self.next()
        if tok[0] != ")":
            raise self.error("expected ')'", tok)

    def nat(self, what: str) -> int:
        tok = self.next()
        if tok[0] == "atom" and _NAT.match(tok[1]):
            return int(tok[1])
        if tok[0] == "atom" and _NEG.match(tok[1]):
            raise self.error(f"negative {what}", tok, NegativeIndexError)
        raise self.error(f"expected natural number for {what}", tok)

    def term(self) -> Term:
        tok = self.next()
        kind, value, _ = tok
        if kind == "atom":
            if value == "eps":
                return EPS
            if value.startswith("?"):
                if not self.allow_mvars:
                    raise self.error("metavariable outside a pattern", tok)
                if not _SYMBOL.match(value[1:]):
                    raise self.error(f"bad metavariable {value!r}", tok)
                return MVar(value[1:])
            if _SYMBOL.match(value):
                return Sym(value)
            raise self.error(f"bad symbol {value!r}", tok)
        if kind != "(":
            raise self.error("expected term", tok)
        head = self.next()
        if head[0] != "atom":
            raise self.error("expected constructor", head)
        match head[1]:
            case "bvar":
                index = self.nat("bvar index")
                tag = None
                if self.peek()[0] == "atom" and self.peek()[1] == ":":
                    self.next()
                    stok = self.next()
                    if stok[0] != "str":
                        raise self.error("expected string tag", stok)
                    tag = json.loads(stok[1])
                self.expect_close()
                return Bvar(index, tag)
            case "lit":
                value = self.nat("literal")
                self.expect_close()
                return Lit(value)
            case "app":
                fn = self.term()
                args = [self.term()]
                while self.peek()[0] != ")":
                    args.append(self.term())
                self.next()
                for a in args:
                    fn = App(fn, a)
                return fn
            case "lam" | "all":
                ty = self.term()
                body = self.term()
                self.expect_close()
                return Lam(ty, body) if head[1] == "lam" else All(ty, body)
            case "let":
                ty = self.term()
                value = self.term()
                body = self.term()
                self.expect_close()
                return Let(ty, value, body)
        raise self.error(f"unknown constructor {head[1]!r}", head)


def _parse(text: str, allow_mvars: bool) -> Term:
    p = _Parser(text, allow_mvars)
    t = p.term()
    if p.peek()[0] != "eof":
        raise p.error("trailing input")
    return t


def parse_term(text: str) -> Term:
    """Parse the S-expression form of a plain term."""
    return _parse(text, allow_mvars=False)


def parse_pattern(text: str) -> Term:
    """Like :func:`parse_term` but also accepts ``?name`` metavariables."""
    return _parse(text, allow_mvars=True)


def parse_many(text: str, allow_mvars: bool = False) -> Iterator[Term]:
    p = _Parser(text, allow_mvars)
    while p.peek()[0] != "eof":
        yield p.term()


def print_term(t: Term) -> str:
    out: list[str] = []
    _print(t, out)
    return "".join(out)


def _print(t: Term, out: list[str]) -> None:
    match t:
        case Bvar(i, None):
            out.append(f"(bvar {i})")
        case Bvar(i, tag):
            out.append(f"(bvar {i} : {json.dumps(tag)})")
        case App(f, a):
            out.append("(app ")
            _print(f, out)
            out.append(" ")
            _print(a, out)
            out.append(")")
        case Lam(ty, b) | All(ty, b):
            out.append("(lam " if isinstance(t, Lam) else "(all ")
            _print(ty, out)
            out.append(" ")
            _print(b, out)
            out.append(")")
        case Let(ty, v, b):
            out.append("(let ")
            _print(ty, out)
            out.append(" ")
            _print(v, out)
            out.append(" ")
            _print(b, out)
            out.append(")")
        case Sym(name):
            out.append(name)
        case Lit(v):
            out.append(f"(lit {v})")
        case Eps():
            out.append("eps")
        case MVar(name):
            out.append(f"?{name}")
        case _:
            raise TypeError(f"not a term: {t!r}")


# ---------------------------------------------------------------------------
# structure


def children(t: Term) -> tuple[Term, ...]:
    """Children in position order (App: fn, arg; binders: type, body)."""
    match t:
        case App(f, a):
            return (f, a)
        case Lam(ty, b) | All(ty, b):
            return (ty, b)
        case Let(ty, v, b):
            return (ty, v, b)
    return ()


def _binds(t: Term, i: int) -> int:
    """Number of binders crossed when entering child ``i`` of ``t``."""
    if isinstance(t, (Lam, All)) and i == 1:
        return 1
    if isinstance(t, Let) and i == 2:
        return 1
    return 0


def _rebuild(t: Term, kids: tuple[Term, ...]) -> Term:
    match t:
        case App():
            return App(*kids)
        case Lam():
            return Lam(*kids)
        case All():
            return All(*kids)
        case Let():
            return Let(*kids)
    return t


def term_size(t: Term) -> int:
    n = 0
    stack = [t]
    while stack:
        u = stack.pop()
        n += 1
        stack.extend(children(u))
    return n


def metavars(t: Term) -> list[str]:
    """Metavariable names in first-occurrence order."""
    seen: dict[str, None] = {}
    stack = [t]
    while stack:
        u = stack.pop()
        if isinstance(u, MVar):
            seen.setdefault(u.name)
        stack.extend(reversed(children(u)))
    return list(seen)


def contains_let(t: Term) -> bool:
    stack = [t]
    while stack:
        u = stack.pop()
        if isinstance(u, Let):
            return True
        stack.extend(children(u))
    return False


def subterm_at(t: Term, pos: Iterable[int]) -> Term:
    for i in pos:
        kids = children(t)
        if not 0 <= i < len(kids):
            raise IndexError(f"invalid position step {i}")
        t = kids[i]
    return t


def replace_at(t: Term, pos: list[int] | tuple[int, ...], new: Term) -> Term:
    if not pos:
        return new
    kids = list(children(t))
    i = pos[0]
    if not 0 <= i < len(kids):
        raise IndexError(f"invalid position step {i}")
    kids[i] = replace_at(kids[i], pos[1:], new)
    return _rebuild(t, tuple(kids))


def positions(t: Term) -> list[tuple[int, ...]]:
    """All positions of ``t`` in preorder."""
    out: list[tuple[int, ...]] = []
    stack: list[tuple[Term, tuple[int, ...]]] = [(t, ())]
    while stack:
        u, p = stack.pop()
        out.append(p)
        kids = children(u)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((kids[i], p + (i,)))
    return out


# ---------------------------------------------------------------------------
# de Bruijn operations


def fvars_term(t: Term) -> set[int]:
    """Indices free at the root of ``t``."""
    out: set[int] = set()
    _fvars(t, 0, out)
    return out


def _fvars(t: Term, depth: int, out: set[int]) -> None:
    match t:
        case Bvar(i, _):
            if i >= depth:
                out.add(i - depth)
        case Sym() | Lit() | Eps() | MVar():
            pass
        case _:
            for i, c in enumerate(children(t)):
                _fvars(c, depth + _binds(t, i), out)


def shift_term(t: Term, offset: int, cutoff: int = 0) -> Term:
    """Add ``offset`` to every index ``i`` with ``i - depth >= cutoff``.

    Raises :class:`UnderflowError` if a shifted index would go negative.
    """
    if offset == 0:
        return t
    return _shift(t, offset, cutoff, 0)


def _shift(t: Term, offset: int, cutoff: int, depth: int) -> Term:
    match t:
        case Bvar(i, tag):
            if i - depth >= cutoff:
                if i + offset < depth:
                    raise UnderflowError(f"shifting index {i - depth} by {offset}")
                return Bvar(i + offset, tag)
            return t
        case Sym() | Lit() | Eps() | MVar():
            return t
        case _:
            kids = children(t)
            return _rebuild(
                t, tuple(_shift(c, offset, cutoff, depth + _binds(t, i)) for i, c in enumerate(kids))
            )


def instantiate_top(body: Term, value: Term) -> Term:
    """``body[0 := value]`` for a body that sat under one removed binder."""
    return _inst(body, value, 0)


def _inst(t: Term, value: Term, depth: int) -> Term:
    match t:
        case Bvar(i, tag):
            if i == depth:
                return shift_term(value, depth, 0)
            if i > depth:
                return Bvar(i - 1, tag)
            return t
        case Sym() | Lit() | Eps() | MVar():
            return t
        case _:
            kids = children(t)
            return _rebuild(
                t, tuple(_inst(c, value, depth + _binds(t, i)) for i, c in enumerate(kids))
            )


def beta_step(t: Term) -> Optional[Term]:
    match t:
        case App(Lam(_, body), arg):
            return instantiate_top(body, arg)
    return None


def eta_step(t: Term) -> Optional[Term]:
    match t:
        case Lam(_, App(f, Bvar(0, _))) if 0 not in fvars_term(f):
            return shift_term(f, -1, 0)
    return None


def zeta_reduce(t: Term) -> Term:
    match t:
        case Let(_, value, body):
            return instantiate_top(zeta_reduce(body), zeta_reduce(value))
        case Bvar() | Sym() | Lit() | Eps() | MVar():
            return t
        case _:
            return _rebuild(t, tuple(zeta_reduce(c) for c in children(t)))


def _head_symbol(t: Term) -> Optional[str]:
    while isinstance(t, App):
        t = t.fn
    return t.name if isinstance(t, Sym) else None


def erase_proofs(t: Term, proof_heads: Iterable[str]) -> Term:
    """Replace every maximal subterm headed by a proof symbol with ``eps``."""
    heads = frozenset(proof_heads)
    if not heads:
        return t
    return _erase(t, heads)


def _erase(t: Term, heads: frozenset[str]) -> Term:
    if _head_symbol(t) in heads:
        return EPS
    kids = children(t)
    if not kids:
        return t
    return _rebuild(t, tuple(_erase(c, heads) for c in kids))


def annotate_bound_vars(t: Term) -> Term:
    """Tag variables bound by a closed, non-wildcard binder type with its print."""
    return _annotate(t, ())


def _binder_tag(ty: Term) -> Optional[str]:
    if ty == WILDCARD or metavars(ty) or fvars_term(ty):
        return None
    return print_term(ty)


def _annotate(t: Term, scope: tuple[Optional[str], ...]) -> Term:
    match t:
        case Bvar(i, _):
            if i < len(scope) and scope[-1 - i] is not None:
                return Bvar(i, scope[-1 - i])
            return t
        case Sym() | Lit() | Eps() | MVar():
            return t
        case Lam(ty, body) | All(ty, body):
            inner = scope + (_binder_tag(ty),)
            return _rebuild(t, (_annotate(ty, scope), _annotate(body, inner)))
        case Let(ty, value, body):
            inner = scope + (_binder_tag(ty),)
            return Let(_annotate(ty, scope), _annotate(value, scope), _annotate(body, inner))
        case _:
            return _rebuild(t, tuple(_annotate(c, scope) for c in children(t)))

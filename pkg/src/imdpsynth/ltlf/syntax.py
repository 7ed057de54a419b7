"""Abstract syntax of LTLf formulas."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple


class Formula:
    __slots__ = ()

    def atoms(self) -> frozenset:
        out = set()
        stack = [self]
        while stack:
            f = stack.pop()
            if isinstance(f, Atom):
                out.add(f.name)
            stack.extend(f.children())
        return frozenset(out)

    def children(self) -> tuple:
        return ()

    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __invert__(self):
        return Not(self)


@dataclass(frozen=True)
class Top(Formula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class Bot(Formula):
    def __str__(self):
        return "false"


@dataclass(frozen=True)
class Atom(Formula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __str__(self):
        return f"!{_wrap(self.arg)}"


@dataclass(frozen=True)
class And(Formula):
    args: Tuple[Formula, ...]

    def children(self):
        return self.args

    def __str__(self):
        return " & ".join(_wrap(a) for a in self.args)


@dataclass(frozen=True)
class Or(Formula):
    args: Tuple[Formula, ...]

    def children(self):
        return self.args

    def __str__(self):
        return " | ".join(_wrap(a) for a in self.args)


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __str__(self):
        return f"X {_wrap(self.arg)}"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __str__(self):
        return f"{_wrap(self.left)} U {_wrap(self.right)}"


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __str__(self):
        return f"F {_wrap(self.arg)}"


@dataclass(frozen=True)
class Globally(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __str__(self):
        return f"G {_wrap(self.arg)}"


TRUE, FALSE = Top(), Bot()


def _wrap(f: Formula) -> str:
    s = str(f)
    return s if isinstance(f, (Top, Bot, Atom, Not, Next, Eventually, Globally)) else f"({s})"


def _key(f: Formula):
    return (type(f).__name__, str(f))


def mk_not(f: Formula) -> Formula:
    if isinstance(f, Top):
        return FALSE
    if isinstance(f, Bot):
        return TRUE
    if isinstance(f, Not):
        return f.arg
    return Not(f)


def _mk_nary(cls, unit, zero, args) -> Formula:
    flat = set()
    for a in args:
        if isinstance(a, cls):
            flat.update(a.args)
        elif a == zero:
            return zero
        elif a != unit:
            flat.add(a)
    for a in flat:
        if isinstance(a, Not) and a.arg in flat:
            return zero
    if not flat:
        return unit
    if len(flat) == 1:
        return next(iter(flat))
    return cls(tuple(sorted(flat, key=_key)))


def mk_and(*args: Formula) -> Formula:
    return _mk_nary(And, TRUE, FALSE, args)


def mk_or(*args: Formula) -> Formula:
    return _mk_nary(Or, FALSE, TRUE, args)


def normalize(f: Formula) -> Formula:
    """Rewrite to the core operators (F a == true U a, G a == !(true U !a)),
    flattening, sorting and de-duplicating conjunctions and disjunctions,
    folding constants and removing double negation."""
    if isinstance(f, (Top, Bot, Atom)):
        return f
    if isinstance(f, Not):
        return mk_not(normalize(f.arg))
    if isinstance(f, And):
        return mk_and(*(normalize(a) for a in f.args))
    if isinstance(f, Or):
        return mk_or(*(normalize(a) for a in f.args))
    if isinstance(f, Next):
        a = normalize(f.arg)
        return FALSE if a == FALSE else Next(a)
    if isinstance(f, Until):
        a, b = normalize(f.left), normalize(f.right)
        # "false U b" is left alone; minimization merges it with b anyway
        return FALSE if b == FALSE else Until(a, b)
    if isinstance(f, Eventually):
        return normalize(Until(TRUE, f.arg))
    if isinstance(f, Globally):
        return mk_not(normalize(Until(TRUE, Not(f.arg))))
    raise TypeError(f"not a formula: {f!r}")


def depth(f: Formula) -> int:
    ch = f.children()
    return 0 if not ch else 1 + max(depth(c) for c in ch)

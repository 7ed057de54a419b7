"""Recursive-descent parser for the LTLf text syntax.

Grammar (loosest binding first)::

    or     := and ('|' and)*
    and    := until ('&' until)*
    until  := unary ('U' until)?          # right associative
    unary  := ('!' | 'X' | 'F' | 'G') unary | atom | '(' or ')'
    atom   := identifier | 'true' | 'false'
"""

from __future__ import annotations

import re
from typing import Iterable, Optional

from .syntax import FALSE, TRUE, And, Atom, Eventually, Formula, Globally, Next, Not, Or, Until

_TOKEN = re.compile(r"\s*(?:(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[!&|()])|(?P<bad>\S))")
_UNARY = {"!": Not, "X": Next, "F": Eventually, "G": Globally}
_RESERVED = {"X", "F", "G", "U", "true", "false"}


class LtlfSyntaxError(ValueError):
    def __init__(self, msg: str, text: str, pos: int):
        super().__init__(f"{msg} at position {pos}: {text!r}")
        self.pos = pos


def _tokenize(text: str):
    out = []
    for m in _TOKEN.finditer(text):
        if m.group("bad") is not None:
            raise LtlfSyntaxError(f"unknown token {m.group('bad')!r}", text, m.start("bad"))
        kind = "id" if m.group("id") is not None else "op"
        out.append((m.group(kind), m.start(kind)))
    return out


class _Parser:
    def __init__(self, text: str, aps: Optional[frozenset]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.aps = aps

    def peek(self):
        return self.toks[self.i][0] if self.i < len(self.toks) else None

    def pos(self):
        return self.toks[self.i][1] if self.i < len(self.toks) else len(self.text)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def error(self, msg):
        raise LtlfSyntaxError(msg, self.text, self.pos())

    def parse(self) -> Formula:
        if not self.toks:
            self.error("empty formula")
        f = self.disj()
        if self.peek() is not None:
            self.error(f"unexpected {self.peek()!r}")
        return f

    def disj(self):
        args = [self.conj()]
        while self.peek() == "|":
            self.take()
            args.append(self.conj())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conj(self):
        args = [self.until()]
        while self.peek() == "&":
            self.take()
            args.append(self.until())
        return args[0] if len(args) == 1 else And(tuple(args))

    def until(self):
        left = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self):
        tok = self.peek()
        if tok in _UNARY:
            self.take()
            return _UNARY[tok](self.unary())
        if tok == "(":
            start = self.pos()
            self.take()
            f = self.disj()
            if self.peek() != ")":
                raise LtlfSyntaxError("unbalanced parenthesis", self.text, start)
            self.take()
            return f
        if tok == "true":
            self.take()
            return TRUE
        if tok == "false":
            self.take()
            return FALSE
        if tok is None:
            self.error("unexpected end of formula")
        if tok in _RESERVED or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            self.error(f"unexpected {tok!r}")
        if self.aps is not None and tok not in self.aps:
            self.error(f"undeclared proposition {tok!r}")
        self.take()
        return Atom(tok)


def parse(text: str, aps: Optional[Iterable[str]] = None) -> Formula:
    """Parse ``text``; with ``aps`` given, every atom must be declared."""
    return _Parser(text, None if aps is None else frozenset(aps)).parse()

"""LTLf to DFA by formula progression.

A state is a residual obligation on the rest of the trace. Reading a symbol
progresses the residual; a state accepts when its residual holds on the empty
remainder. Residuals are Boolean combinations of a finite set of base
formulas (atoms, ``X`` and ``U`` subformulas of the input, plus a marker for
"the remainder is non-empty"), so keying states by their truth table over that
set gives a finite automaton, which is then minimized.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .syntax import (
    FALSE,
    TRUE,
    And,
    Atom,
    Bot,
    Formula,
    Next,
    Not,
    Or,
    Top,
    Until,
    mk_and,
    mk_not,
    mk_or,
    normalize,
)


class DfaError(ValueError):
    pass


class BudgetExceeded(DfaError):
    pass


@dataclass(frozen=True)
class _More(Formula):
    """Holds exactly when at least one more symbol remains."""

    def __str__(self):
        return "<more>"


MORE = _More()
_BASE = (Atom, _More, Next, Until)
_MAX_SUPPORT = 24


def progress(f: Formula, symbol: frozenset) -> Formula:
    """Residual of a normalized formula after reading ``symbol``."""
    if isinstance(f, (Top, Bot)):
        return f
    if isinstance(f, Atom):
        return TRUE if f.name in symbol else FALSE
    if isinstance(f, _More):
        return TRUE
    if isinstance(f, Not):
        return mk_not(progress(f.arg, symbol))
    if isinstance(f, And):
        return mk_and(*(progress(a, symbol) for a in f.args))
    if isinstance(f, Or):
        return mk_or(*(progress(a, symbol) for a in f.args))
    if isinstance(f, Next):
        return mk_and(MORE, f.arg)
    if isinstance(f, Until):
        return mk_or(progress(f.right, symbol), mk_and(progress(f.left, symbol), f))
    raise TypeError(f"formula not normalized: {f!r}")


class _Canon:
    """Truth-table keys for residuals, over a shared numbering of base formulas."""

    def __init__(self):
        self.index: dict = {}

    def _support(self, f, out):
        if isinstance(f, _BASE):
            if f not in self.index:
                self.index[f] = len(self.index)
            out.add(f)
        elif isinstance(f, (Not, And, Or)):
            for c in f.children():
                self._support(c, out)

    def _table(self, f, cols):
        if isinstance(f, Top):
            return np.ones_like(next(iter(cols.values()))) if cols else np.ones(1, bool)
        if isinstance(f, Bot):
            return np.zeros_like(next(iter(cols.values()))) if cols else np.zeros(1, bool)
        if isinstance(f, _BASE):
            return cols[f]
        if isinstance(f, Not):
            return ~self._table(f.arg, cols)
        parts = [self._table(a, cols) for a in f.args]
        return np.logical_and.reduce(parts) if isinstance(f, And) else np.logical_or.reduce(parts)

    def key(self, f: Formula):
        sup: set = set()
        self._support(f, sup)
        vars_ = sorted(sup, key=self.index.__getitem__)
        k = len(vars_)
        if k > _MAX_SUPPORT:
            raise BudgetExceeded(f"residual depends on {k} base formulas")
        rows = np.arange(1 << k)
        cols = {v: ((rows >> j) & 1).astype(bool) for j, v in enumerate(vars_)}
        t = self._table(f, cols)
        # drop base formulas the function does not depend on
        keep = []
        for j in range(k - 1, -1, -1):
            shaped = t.reshape(-1, 2, 1 << j)
            if np.array_equal(shaped[:, 0, :], shaped[:, 1, :]):
                t = shaped[:, 0, :].reshape(-1)
            else:
                keep.append(j)
        ids = tuple(self.index[vars_[j]] for j in sorted(keep))
        return ids, np.packbits(t).tobytes(), len(t), bool(t[0])


@dataclass(frozen=True, eq=False)
class Dfa:
    """Complete DFA over the symbols ``2^ap``; symbol ``m`` contains
    ``ap[j]`` iff bit ``j`` of ``m`` is set."""

    ap: tuple
    table: np.ndarray  # (n_states, 2 ** len(ap))
    initial: int
    accepting: frozenset
    dead: frozenset

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.table.shape[1]

    def symbol(self, labels: Iterable[str], strict: bool = True) -> int:
        m = 0
        for name in labels:
            try:
                m |= 1 << self.ap.index(name)
            except ValueError:
                if strict:
                    raise DfaError(f"symbol outside the alphabet: {name!r}") from None
        return m

    def step(self, s: int, labels: Iterable[str], strict: bool = True) -> int:
        return int(self.table[s, self.symbol(labels, strict)])

    def run(self, trace: Sequence, strict: bool = True) -> int:
        s = self.initial
        for sym in trace:
            s = self.step(s, sym, strict)
        return s

    def accepts(self, trace: Sequence, strict: bool = True) -> bool:
        return self.run(trace, strict) in self.accepting

    def same_as(self, other: "Dfa") -> bool:
        """Structural equality; minimized automata from this module are in a
        canonical numbering, so this is isomorphism."""
        return (
            self.ap == other.ap
            and self.initial == other.initial
            and self.accepting == other.accepting
            and np.array_equal(self.table, other.table)
        )

    def dumps(self) -> str:
        lines = [
            "dfa 1",
            "ap " + " ".join(self.ap),
            f"states {self.n_states}",
            f"initial {self.initial}",
            "accepting " + " ".join(str(s) for s in sorted(self.accepting)),
            "dead " + " ".join(str(s) for s in sorted(self.dead)),
        ]
        for s in range(self.n_states):
            lines.append(f"{s} " + " ".join(str(int(t)) for t in self.table[s]))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Dfa":
        lines = text.splitlines()
        if lines[0].strip() != "dfa 1":
            raise DfaError("not a dfa file")
        field = lambda i: lines[i].split()[1:]
        ap = tuple(field(1))
        n = int(field(2)[0])
        table = np.array([[int(t) for t in lines[6 + s].split()[1:]] for s in range(n)], dtype=np.int64)
        return cls(ap, table.reshape(n, 1 << len(ap)), int(field(3)[0]),
                   frozenset(int(s) for s in field(4)), frozenset(int(s) for s in field(5)))


def _symbols(ap: tuple) -> list:
    return [frozenset(a for j, a in enumerate(ap) if m >> j & 1) for m in range(1 << len(ap))]


def _explore(phi: Formula, ap: tuple, budget: int):
    canon = _Canon()
    syms = _symbols(ap)
    k0 = canon.key(phi)
    ids = {k0[:3]: 0}
    reps = [phi]
    acc = [k0[3]]
    rows = []
    i = 0
    while i < len(reps):
        row = []
        for sym in syms:
            nxt = progress(reps[i], sym)
            k = canon.key(nxt)
            s = ids.get(k[:3])
            if s is None:
                if len(reps) >= budget:
                    raise BudgetExceeded(f"more than {budget} automaton states")
                s = ids[k[:3]] = len(reps)
                reps.append(nxt)
                acc.append(k[3])
            row.append(s)
        rows.append(row)
        i += 1
    return np.array(rows, dtype=np.int64).reshape(len(reps), len(syms)), acc


def _hopcroft(table: np.ndarray, accepting: Sequence[bool]) -> np.ndarray:
    """Block id per state for the coarsest equivalence respecting acceptance."""
    n, k = table.shape
    inv = [[[] for _ in range(n)] for _ in range(k)]
    for s in range(n):
        for c in range(k):
            inv[c][table[s, c]].append(s)
    acc = {s for s in range(n) if accepting[s]}
    rej = set(range(n)) - acc
    blocks = [b for b in (acc, rej) if b]
    block_of = np.zeros(n, dtype=np.int64)
    for b, members in enumerate(blocks):
        for s in members:
            block_of[s] = b
    work = deque(range(len(blocks)))
    in_work = set(work)
    while work:
        a = work.popleft()
        in_work.discard(a)
        splitter = set(blocks[a])
        for c in range(k):
            pre = set()
            for t in splitter:
                pre.update(inv[c][t])
            touched = {}
            for s in pre:
                touched.setdefault(int(block_of[s]), set()).add(s)
            for b, hit in sorted(touched.items()):
                if len(hit) == len(blocks[b]):
                    continue
                rest = blocks[b] - hit
                blocks[b] = hit
                nb = len(blocks)
                blocks.append(rest)
                for s in rest:
                    block_of[s] = nb
                if b in in_work:
                    work.append(nb)
                    in_work.add(nb)
                else:
                    small = b if len(hit) <= len(rest) else nb
                    work.append(small)
                    in_work.add(small)
    return block_of


def _canonical(table, accepting, initial):
    """Renumber reachable states in breadth-first order from ``initial``."""
    order = {initial: 0}
    queue = deque([initial])
    while queue:
        s = queue.popleft()
        for t in table[s]:
            t = int(t)
            if t not in order:
                order[t] = len(order)
                queue.append(t)
    new = np.zeros((len(order), table.shape[1]), dtype=np.int64)
    for s, i in order.items():
        new[i] = [order[int(t)] for t in table[s]]
    acc = frozenset(order[s] for s in order if accepting[s])
    return new, acc


def _dead_states(table: np.ndarray, accepting: frozenset) -> frozenset:
    alive = set(accepting)
    changed = True
    while changed:
        changed = False
        for s in range(table.shape[0]):
            if s not in alive and any(int(t) in alive for t in table[s]):
                alive.add(s)
                changed = True
    return frozenset(range(table.shape[0])) - alive


def to_dfa(phi: Formula, ap: Optional[Iterable[str]] = None, budget: int = 10**6) -> Dfa:
    """Minimal complete DFA accepting exactly the finite traces satisfying
    ``phi``. ``ap`` fixes the alphabet order (default: sorted atoms)."""
    atoms = phi.atoms()
    ap = tuple(sorted(atoms)) if ap is None else tuple(ap)
    missing = atoms - set(ap)
    if missing:
        raise DfaError(f"propositions {sorted(missing)} not in the alphabet")
    if len(set(ap)) != len(ap):
        raise DfaError("duplicate propositions in the alphabet")
    table, acc = _explore(normalize(phi), ap, budget)
    blocks = _hopcroft(table, acc)
    nb = int(blocks.max()) + 1
    q_table = np.zeros((nb, table.shape[1]), dtype=np.int64)
    q_acc = [False] * nb
    for s in range(table.shape[0]):
        q_table[blocks[s]] = blocks[table[s]]
        q_acc[blocks[s]] = acc[s]
    c_table, c_acc = _canonical(q_table, q_acc, int(blocks[0]))
    return Dfa(ap, c_table, 0, c_acc, _dead_states(c_table, c_acc))

"""Finite-trace semantics, evaluated bottom-up over all positions at once.

Positions at or beyond the end of the trace follow the empty-trace rules:
atoms, ``X`` and ``U`` are false there, and the Boolean connectives keep their
classical meaning (so ``G a`` holds on the empty trace).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .syntax import And, Atom, Bot, Eventually, Formula, Globally, Next, Not, Or, Top, Until


def _positions(f: Formula, trace: Sequence[frozenset], memo: dict) -> np.ndarray:
    """Truth of ``f`` at positions ``0..len(trace)``; the last entry is the
    empty suffix."""
    hit = memo.get(f)
    if hit is not None:
        return hit
    L = len(trace)
    if isinstance(f, Top):
        out = np.ones(L + 1, dtype=bool)
    elif isinstance(f, Bot):
        out = np.zeros(L + 1, dtype=bool)
    elif isinstance(f, Atom):
        out = np.array([f.name in s for s in trace] + [False])
    elif isinstance(f, Not):
        out = ~_positions(f.arg, trace, memo)
    elif isinstance(f, And):
        out = np.logical_and.reduce([_positions(a, trace, memo) for a in f.args])
    elif isinstance(f, Or):
        out = np.logical_or.reduce([_positions(a, trace, memo) for a in f.args])
    elif isinstance(f, Next):
        a = _positions(f.arg, trace, memo)
        out = np.zeros(L + 1, dtype=bool)
        out[: max(L - 1, 0)] = a[1:L]
    elif isinstance(f, (Until, Eventually)):
        a = np.ones(L + 1, dtype=bool) if isinstance(f, Eventually) else _positions(f.left, trace, memo)
        b = _positions(f.arg if isinstance(f, Eventually) else f.right, trace, memo)
        out = np.zeros(L + 1, dtype=bool)
        for i in range(L - 1, -1, -1):
            out[i] = b[i] or (a[i] and out[i + 1])
    elif isinstance(f, Globally):
        a = _positions(f.arg, trace, memo)
        out = np.ones(L + 1, dtype=bool)
        for i in range(L - 1, -1, -1):
            out[i] = a[i] and out[i + 1]
    else:
        raise TypeError(f"not a formula: {f!r}")
    memo[f] = out
    return out


def evaluate(f: Formula, trace: Sequence, i: int = 0) -> bool:
    """Whether ``trace, i`` satisfies ``f``. ``i == len(trace)`` (in particular
    the empty trace) uses the empty-suffix rules."""
    trace = [frozenset(s) for s in trace]
    if not 0 <= i <= len(trace):
        raise IndexError(f"position {i} outside trace of length {len(trace)}")
    return bool(_positions(f, trace, {})[i])

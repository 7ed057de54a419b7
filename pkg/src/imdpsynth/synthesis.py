"""Product with the formula automaton, robust interval value iteration,
strategy extraction and per-cell classification.

Product state ``(q, s)`` has index ``q * n_dfa + s``. Moving to cell ``q'``
advances the automaton with the label of ``q'``; moving to the outside state
freezes the automaton state. A product state is accepting when its automaton
state is.
"""

from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .abstraction import Imdp
from .ltlf import Dfa

log = logging.getLogger(__name__)

MINIMIZE, MAXIMIZE = "minimize", "maximize"
OBJECTIVES = ("maximin", "maximax", "fixed-max", "fixed-min")


class SynthesisError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    def __init__(self, objective: str, sweeps: int, residual: float):
        super().__init__(f"{objective} value iteration did not converge in {sweeps} sweeps (residual {residual:.3g})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Pimdp:
    """Product rows are stored padded: ``succ/lo/hi`` have shape
    ``(n_states * n_actions, width)`` with zero-width padding at the end."""

    n_states: int
    n_dfa: int
    actions: tuple
    succ: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    widths: np.ndarray  # successors per row
    accepting: np.ndarray  # bool per product state
    initial: np.ndarray  # product state per cell
    unsafe_cell: int

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def row(self, z: int, a: int):
        r = z * self.n_actions + a
        w = self.widths[r]
        return self.succ[r, :w], self.lo[r, :w], self.hi[r, :w]


def pimdp_from_rows(rows, accepting, actions=None, initial=None) -> Pimdp:
    """Reachability model from explicit rows, for small hand-built examples.

    ``rows[z][a] = (succ, lo, hi)``; ``accepting`` is a bool per state.
    Successors are sorted by index. The model has a single automaton state.
    """
    n = len(rows)
    A = len(rows[0]) if n else 0
    W = max((len(r[0]) for state in rows for r in state), default=0)
    succ = np.zeros((n * A, W), dtype=np.int64)
    lo, hi = np.zeros((n * A, W)), np.zeros((n * A, W))
    wid = np.zeros(n * A, dtype=np.int64)
    for z, state in enumerate(rows):
        if len(state) != A:
            raise SynthesisError("every state needs the same number of actions")
        for a, (s, l, h) in enumerate(state):
            order = np.argsort(s, kind="stable")
            k = len(s)
            r = z * A + a
            succ[r, :k] = np.asarray(s, dtype=np.int64)[order]
            lo[r, :k] = np.asarray(l, dtype=float)[order]
            hi[r, :k] = np.asarray(h, dtype=float)[order]
            wid[r] = k
    actions = tuple(range(1, A + 1)) if actions is None else tuple(actions)
    initial = np.arange(n, dtype=np.int64) if initial is None else np.asarray(initial, dtype=np.int64)
    return Pimdp(n, 1, actions, succ, lo, hi, wid, np.asarray(accepting, dtype=bool), initial, -1)


def product_index(q: int, s: int, n_dfa: int) -> int:
    return q * n_dfa + s


def build_product(imdp: Imdp, dfa: Dfa) -> Pimdp:
    props = set().union(*imdp.labels) if imdp.labels else set()
    missing = set(dfa.ap) - props
    if missing:
        raise SynthesisError(f"propositions {sorted(missing)} label no state of the abstraction")
    S, A = dfa.n_states, imdp.n_actions
    sym = np.array([dfa.symbol(l, strict=False) for l in imdp.labels])
    n_prod = imdp.n_states * S
    widths = np.diff(imdp.row_ptr)
    W = int(widths.max()) if widths.size else 0
    succ = np.zeros((n_prod * A, W), dtype=np.int64)
    lo = np.zeros((n_prod * A, W))
    hi = np.zeros((n_prod * A, W))
    wid = np.zeros(n_prod * A, dtype=np.int64)
    for q in range(imdp.n_states):
        for a in range(A):
            r = q * A + a
            b, e = imdp.row_ptr[r], imdp.row_ptr[r + 1]
            nxt = imdp.succ[b:e]
            for s in range(S):
                pr = (q * S + s) * A + a
                if q == imdp.unsafe:
                    succ[pr, 0], lo[pr, 0], hi[pr, 0], wid[pr] = q * S + s, 1.0, 1.0, 1
                    continue
                s_next = np.where(nxt == imdp.unsafe, s, dfa.table[s, sym[nxt]])
                succ[pr, : e - b] = nxt * S + s_next
                lo[pr, : e - b] = imdp.lo[b:e]
                hi[pr, : e - b] = imdp.hi[b:e]
                wid[pr] = e - b
    # successors within a row stay sorted by product index for tie-breaking
    order = np.argsort(np.where(np.arange(W)[None, :] < wid[:, None], succ, np.iinfo(np.int64).max), axis=1,
                       kind="stable")
    succ, lo, hi = (np.take_along_axis(x, order, axis=1) for x in (succ, lo, hi))
    accepting = np.zeros(n_prod, dtype=bool)
    for s in dfa.accepting:
        accepting[s::S] = True
    cells = [q for q in range(imdp.n_states) if q != imdp.unsafe]
    initial = np.array([q * S + int(dfa.table[dfa.initial, sym[q]]) for q in cells], dtype=np.int64)
    return Pimdp(n_prod, S, imdp.actions, succ, lo, hi, wid, accepting, initial, imdp.unsafe)


# ---------------------------------------------------------------------------
# adversary


def adversary_extreme(lo, hi, values, direction: str = MINIMIZE):
    """Feasible distribution within ``[lo, hi]`` optimizing the expected
    ``values``, found greedily: successors ordered by value (ties by position)
    take as much mass as possible in turn. Works row-wise on 2-D input.
    Returns ``(distribution, expectation)``."""
    lo, hi, values = (np.asarray(x, dtype=float) for x in (lo, hi, values))
    single = lo.ndim == 1
    if single:
        lo, hi, values = lo[None], hi[None], values[None]
    if np.any(lo > hi) or np.any(lo.sum(1) > 1 + 1e-12) or np.any(hi.sum(1) < 1 - 1e-12):
        raise SynthesisError("infeasible interval row")
    key = values if direction == MINIMIZE else -values
    order = np.argsort(key, axis=1, kind="stable")
    dist = _greedy(lo, hi, order)
    exp = np.einsum("ij,ij->i", dist, values)
    return (dist[0], float(exp[0])) if single else (dist, exp)


def _greedy(lo, hi, order):
    l = np.take_along_axis(lo, order, axis=1)
    extra = np.take_along_axis(hi, order, axis=1) - l
    rem = 1.0 - l.sum(axis=1, keepdims=True)
    before = np.cumsum(extra, axis=1) - extra
    alloc = l + np.clip(rem - before, 0.0, extra)
    out = np.empty_like(alloc)
    np.put_along_axis(out, order, alloc, axis=1)
    return out


# ---------------------------------------------------------------------------
# value iteration


_ROW_BLOCK = 4096


def _row_values(P: Pimdp, v: np.ndarray, direction: str, rows: slice) -> np.ndarray:
    vals = v[P.succ[rows]]
    key = vals if direction == MINIMIZE else -vals
    order = np.argsort(key, axis=1, kind="stable")
    dist = _greedy(P.lo[rows], P.hi[rows], order)
    return np.einsum("ij,ij->i", dist, vals)


def _all_row_values(P: Pimdp, v, direction, pool) -> np.ndarray:
    R = P.succ.shape[0]
    blocks = [slice(s, min(s + _ROW_BLOCK, R)) for s in range(0, R, _ROW_BLOCK)]
    if pool is None:
        parts = [_row_values(P, v, direction, b) for b in blocks]
    else:
        parts = list(pool.map(lambda b: _row_values(P, v, direction, b), blocks))
    return np.concatenate(parts) if parts else np.zeros(0)


def interval_value_iteration(
    P: Pimdp,
    objective: str,
    strategy: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    max_sweeps: int = 100_000,
    init: Optional[np.ndarray] = None,
    threads: int = 1,
    tie_tol: float = 1e-12,
):
    """Reachability of accepting product states.

    ``maximin``/``maximax`` maximize over actions against a minimizing or
    maximizing adversary and also return the strategy; ``fixed-max`` and
    ``fixed-min`` evaluate a given strategy. Values start at 1 on accepting
    states and 0 elsewhere (or at ``init``, which must be a lower bound of the
    fixed point). Returns ``(values, strategy, sweeps)``.
    """
    if objective not in OBJECTIVES:
        raise SynthesisError(f"unknown objective {objective!r}")
    if not tol > 0:
        raise SynthesisError("tol must be positive")
    fixed = objective.startswith("fixed")
    if fixed and strategy is None:
        raise SynthesisError(f"{objective} needs a strategy")
    direction = MINIMIZE if objective in ("maximin", "fixed-min") else MAXIMIZE
    A = P.n_actions
    v = np.where(P.accepting, 1.0, 0.0) if init is None else np.maximum(init, np.where(P.accepting, 1.0, 0.0))
    pi = np.array(strategy, dtype=np.int64) if fixed else np.zeros(P.n_states, dtype=np.int64)
    idx = np.arange(P.n_states)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for sweep in range(1, max_sweeps + 1):
            q = _all_row_values(P, v, direction, pool).reshape(P.n_states, A)
            if fixed:
                new = q[idx, pi]
            else:
                best = np.argmax(q, axis=1)  # first maximizer
                # keep the current action unless another is strictly better
                improve = q[idx, best] > q[idx, pi] + tie_tol
                pi = np.where(improve, best, pi)
                new = q[idx, pi]
            new = np.where(P.accepting, 1.0, new)
            res = float(np.max(np.abs(new - v))) if new.size else 0.0
            v = new
            if res < tol:
                return v, (None if fixed else pi), sweep
    finally:
        if pool is not None:
            pool.shutdown()
    raise ConvergenceError(objective, max_sweeps, res)


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    threshold: float
    p_low: np.ndarray  # per product state
    p_up: np.ndarray
    p_up_star: np.ndarray
    strategy: np.ndarray  # action index per product state
    initial: np.ndarray  # product state per cell
    actions: tuple
    n_dfa: int
    sweeps: dict

    def cell_values(self):
        z = self.initial
        return self.p_low[z], self.p_up[z], self.p_up_star[z]

    @property
    def classes(self) -> np.ndarray:
        lo, up, _ = self.cell_values()
        return np.where(lo >= self.threshold, "yes", np.where(up < self.threshold, "no", "maybe"))

    @property
    def gap(self) -> np.ndarray:
        lo, _, star = self.cell_values()
        return star - lo

    def action(self, q: int, s: int) -> int:
        return self.actions[int(self.strategy[q * self.n_dfa + s])]

    def dumps(self) -> str:
        lo, up, star = self.cell_values()
        cls, gap = self.classes, self.gap
        out = [
            "synthesis 1",
            f"threshold {self.threshold!r}",
            f"cells {len(self.initial)}",
            f"dfa_states {self.n_dfa}",
            "actions " + " ".join(str(a) for a in self.actions),
            "sweeps " + " ".join(f"{k}={v}" for k, v in sorted(self.sweeps.items())),
            "# cell initial p_low p_up p_up_star class gap",
        ]
        for q in range(len(self.initial)):
            out.append(f"{q} {int(self.initial[q])} {lo[q]:.17g} {up[q]:.17g} {star[q]:.17g} {cls[q]} {gap[q]:.17g}")
        out.append("strategy")
        n_prod = len(self.strategy)
        for z in range(n_prod):
            q, s = divmod(z, self.n_dfa)
            out.append(f"{q} {s} {self.actions[int(self.strategy[z])]} {self.p_low[z]:.17g} {self.p_up[z]:.17g} "
                       f"{self.p_up_star[z]:.17g}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SynthesisResult":
        lines = text.splitlines()
        if lines[0] != "synthesis 1":
            raise SynthesisError("not a synthesis result file")
        threshold = float(lines[1].split()[1])
        n_cells = int(lines[2].split()[1])
        n_dfa = int(lines[3].split()[1])
        actions = tuple(int(a) for a in lines[4].split()[1:])
        sweeps = dict(kv.split("=") for kv in lines[5].split()[1:])
        initial = np.array([int(lines[7 + q].split()[1]) for q in range(n_cells)], dtype=np.int64)
        body = [l.split() for l in lines[8 + n_cells:]]
        strat = np.array([actions.index(int(t[2])) for t in body], dtype=np.int64)
        vals = np.array([[float(x) for x in t[3:6]] for t in body]).reshape(-1, 3)
        return cls(threshold, vals[:, 0], vals[:, 1], vals[:, 2], strat, initial, actions, n_dfa,
                   {k: int(v) for k, v in sweeps.items()})

    def heatmap_csv(self, centers: np.ndarray) -> str:
        lo, up, star = self.cell_values()
        buf = io.StringIO()
        n = centers.shape[1]
        buf.write(",".join(["cell"] + [f"x{i + 1}" for i in range(n)] + ["p_low", "p_up", "p_up_star", "gap", "class"]))
        buf.write("\n")
        for q in range(len(self.initial)):
            row = [str(q)] + [f"{c:.17g}" for c in centers[q]]
            row += [f"{x:.17g}" for x in (lo[q], up[q], star[q], star[q] - lo[q])] + [str(self.classes[q])]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def check_sandwich(res: SynthesisResult, tol: float = 1e-9) -> None:
    if np.any(res.p_low > res.p_up + tol) or np.any(res.p_up > res.p_up_star + tol):
        raise SynthesisError("value bounds are not ordered p_low <= p_up <= p_up_star")


def synthesize(P: Pimdp, threshold: float, tol: float = 1e-6, max_sweeps: int = 100_000,
               threads: int = 1) -> SynthesisResult:
    """Robust strategy and the three value bounds.

    The strategy maximizes the worst case. ``p_low`` and ``p_up`` are its
    worst- and best-case values; ``p_up_star`` is the best case over all
    strategies. Each evaluation starts from the previous one, which is a lower
    bound of its fixed point, so the ordering holds at every tolerance.
    """
    if not 0.0 <= threshold <= 1.0:
        raise SynthesisError("threshold must be in [0, 1]")
    kw = dict(tol=tol, max_sweeps=max_sweeps, threads=threads)
    _, pi, n_mm = interval_value_iteration(P, "maximin", **kw)
    p_low, _, n_lo = interval_value_iteration(P, "fixed-min", strategy=pi, **kw)
    p_up, _, n_up = interval_value_iteration(P, "fixed-max", strategy=pi, init=p_low, **kw)
    p_star, _, n_star = interval_value_iteration(P, "maximax", init=p_up, **kw)
    res = SynthesisResult(threshold, p_low, p_up, p_star, pi, P.initial, P.actions, P.n_dfa,
                          {"maximin": n_mm, "fixed_min": n_lo, "fixed_max": n_up, "maximax": n_star})
    check_sandwich(res)
    return res

"""IMDP abstraction of the learned switched system.

States are the partition cells plus one absorbing state for "left the domain".
For a cell ``q``, mode ``u`` and target ``q'`` the transition interval is

    hi = 1[expand(q', eps+eta) meets Im(q)] * prod(p_eps) * prod(p_eta) + prod(1 - p_eps)
    lo = 1[Im(q) inside reduce(q', eps+eta)] * prod(p_eps) * prod(p_eta)

and the interval towards the outside state is one minus the same expressions
with the whole domain as target. ``eta`` is fixed per run; ``eps`` is chosen
per (cell, target) pair from the slack between the image and the target.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .bounds import ImageBatch, KnownMap, image_batch
from .geometry import Box, Partition, contained_in, expand_box, intersects, reduce_box
from .learning import LearnedMode, NoiseModel, beta, invert_confidence, noise_quantile, noise_tail

log = logging.getLogger(__name__)

_SHRINK = 1.0 - 1e-9  # keeps "greatest eps" strictly inside open reductions


class AbstractionError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi <= 1.0):
            raise AbstractionError(f"invalid interval [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class EpsEta:
    eta: np.ndarray
    p_eta: np.ndarray
    eps: np.ndarray
    delta_eps: np.ndarray  # per-dimension failure probability of the eps bound

    @property
    def p_eps(self) -> np.ndarray:
        return 1.0 - np.asarray(self.delta_eps)


@dataclass(frozen=True)
class AbstractionConfig:
    delta0: float = 0.01
    coverage: float = 1.0
    eta_fraction: Optional[float] = None
    mean_depth: int = 2
    sigma_depth: int = 3
    exact_lambda: bool = False
    separation_eps: bool = True
    sparsity_floor: float = 1e-12
    threads: int = 1


# ---------------------------------------------------------------------------
# eta / eps selection


def choose_eta(noise: NoiseModel, coverage: float, n: int, fraction: Optional[float] = None):
    """Smallest per-dimension noise radius whose joint coverage reaches
    ``coverage``; ``fraction`` instead sets ``eta = fraction * bound``."""
    if fraction is not None:
        if not fraction >= 0:
            raise AbstractionError("eta fraction must be non-negative")
        if not noise.bounded:
            raise AbstractionError("eta fraction needs bounded noise")
        eta = np.full(n, fraction * noise.bound)
    else:
        if not 0.0 < coverage <= 1.0:
            raise AbstractionError("coverage must be in (0, 1]")
        eta = noise_quantile(noise, np.full(n, coverage ** (1.0 / n)))
    return eta, noise_tail(noise, eta)


def _default_eps(learned: LearnedMode, sigma_sup: np.ndarray, delta0: float):
    eps = np.array([beta(learned, i, delta0) * sigma_sup[i] for i in range(learned.n)])
    return eps, np.full(learned.n, float(delta0))


def _deltas(learned: LearnedMode, eps: np.ndarray, sigma_sup: np.ndarray) -> np.ndarray:
    """Column-wise inversion; ``eps`` has shape ``(..., n)``."""
    out = np.empty(np.shape(eps))
    for i in range(learned.n):
        out[..., i] = invert_confidence(learned, i, eps[..., i], sigma_sup[i])
    return out


def _select_eps(im_lo, im_hi, t_lo, t_hi, eta, sigma_sup, learned: LearnedMode, delta0: float, separation: bool):
    """Per-target ``(eps, delta_eps)`` for targets stacked along the first axis.

    * image inside the target shrunk by ``eta``: the greatest eps keeping it
      inside, unless that eps certifies nothing;
    * image apart from the target grown by ``eta`` (with ``separation``): the
      greatest eps keeping them apart in the best separating axis and unbounded
      eps elsewhere, when that lowers the upper bound;
    * otherwise ``beta(delta0) * sigma_sup``.
    """
    K, n = t_lo.shape
    eps_d, d_def = _default_eps(learned, sigma_sup, delta0)
    eps = np.broadcast_to(eps_d, (K, n)).copy()
    d = np.broadcast_to(d_def, (K, n)).copy()

    slack = np.minimum(im_lo - t_lo, t_hi - im_hi) - eta
    inside = np.all(slack > 0, axis=1)
    if inside.any():
        e_in = slack[inside] * _SHRINK
        d_in = _deltas(learned, e_in, sigma_sup)
        ok = np.all(d_in < 1.0, axis=1)
        idx = np.flatnonzero(inside)[ok]
        eps[idx] = e_in[ok]
        d[idx] = d_in[ok]

    if separation:
        gap = np.maximum(im_lo - t_hi, t_lo - im_hi) - eta
        apart = np.any(gap > 0, axis=1) & ~inside
        if apart.any():
            g = gap[apart]
            d_gap = np.where(g > 0, _deltas(learned, np.where(g > 0, g * _SHRINK, 1.0), sigma_sup), np.inf)
            axis = np.argmin(d_gap, axis=1)  # first axis on ties
            rows = np.arange(g.shape[0])
            d_best = d_gap[rows, axis]
            d_sep = np.full(g.shape, learned.delta_min)
            d_sep[rows, axis] = d_best
            hi_sep = np.prod(d_sep, axis=1)
            hi_def = np.prod(d_def)  # indicator is zero here; compare the slop alone
            better = hi_sep < hi_def
            idx = np.flatnonzero(apart)[better]
            e_sep = np.full((idx.size, n), np.inf)
            e_sep[np.arange(idx.size), axis[better]] = g[better, axis[better]] * _SHRINK
            eps[idx] = e_sep
            d[idx] = d_sep[better]
    return eps, d


def choose_epsilon(im: Box, target: Box, eta, learned: LearnedMode, sigma_sup, delta0: float = 0.01,
                   separation: bool = True):
    """``(eps, p_eps)`` for one image/target pair."""
    eps, d = _select_eps(
        im.lower, im.upper, target.lower[None], target.upper[None], np.asarray(eta, dtype=float),
        np.asarray(sigma_sup, dtype=float), learned, delta0, separation,
    )
    return eps[0], 1.0 - d[0]


# ---------------------------------------------------------------------------
# interval formulas


def _indicators(im_lo, im_hi, t_lo, t_hi, c):
    """(expanded target meets image, image inside open reduced target)."""
    meets = np.all((im_lo <= t_hi + c) & (t_lo - c <= im_hi), axis=1)
    r_lo, r_hi = t_lo + c, t_hi - c
    inside = np.all(r_lo < r_hi, axis=1) & np.all((im_lo > r_lo) & (im_hi < r_hi), axis=1)
    return meets, inside


def _interval_terms(delta_eps: np.ndarray, p_eta_prod: float):
    conf = np.prod(1.0 - delta_eps, axis=-1) * p_eta_prod
    slop = np.prod(delta_eps, axis=-1)
    return conf, slop


def transition_interval(q: Box, q_next: Box, im: Box, ee: EpsEta) -> TransitionInterval:
    """Interval for one cell pair given chosen ``eps``/``eta``."""
    c = ee.eps + ee.eta
    conf, slop = _interval_terms(np.asarray(ee.delta_eps), float(np.prod(ee.p_eta)))
    meets = intersects(expand_box(q_next, np.where(np.isfinite(c), c, 1e300)), im)
    inside = contained_in(im, reduce_box(q_next, c)) if np.all(np.isfinite(c)) else False
    hi = min(float(meets) * conf + slop, 1.0)
    lo = min(float(inside) * conf, hi)
    return TransitionInterval(lo, hi)


def unsafe_interval(im: Box, ee: EpsEta, domain: Box) -> TransitionInterval:
    """Interval for leaving the domain."""
    c = ee.eps + ee.eta
    conf, slop = _interval_terms(np.asarray(ee.delta_eps), float(np.prod(ee.p_eta)))
    meets = intersects(expand_box(domain, np.where(np.isfinite(c), c, 1e300)), im)
    inside = contained_in(im, reduce_box(domain, c)) if np.all(np.isfinite(c)) else False
    lo = max(1.0 - float(meets) * conf - slop, 0.0)
    hi = min(max(1.0 - float(inside) * conf, 0.0), 1.0)
    return TransitionInterval(min(lo, hi), hi)


# ---------------------------------------------------------------------------
# the IMDP


@dataclass(frozen=True, eq=False)
class Imdp:
    """Rows are stored CSR-style; row ``q * n_actions + a`` holds the
    successors of state ``q`` under ``actions[a]`` sorted by index."""

    n_states: int
    actions: tuple
    labels: tuple  # frozenset per state
    unsafe: int
    row_ptr: np.ndarray
    succ: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def row(self, q: int, a_index: int):
        r = q * self.n_actions + a_index
        s, e = self.row_ptr[r], self.row_ptr[r + 1]
        return self.succ[s:e], self.lo[s:e], self.hi[s:e]

    def interval(self, q: int, u: int, q_next: int) -> TransitionInterval:
        succ, lo, hi = self.row(q, self.actions.index(u))
        k = np.searchsorted(succ, q_next)
        if k < succ.size and succ[k] == q_next:
            return TransitionInterval(float(lo[k]), float(hi[k]))
        return TransitionInterval(0.0, 0.0)

    def dumps(self) -> str:
        out = [
            "imdp 1",
            f"states {self.n_states}",
            f"unsafe {self.unsafe}",
            "actions " + " ".join(str(a) for a in self.actions),
        ]
        for q, lab in enumerate(self.labels):
            if lab:
                out.append(f"label {q} " + " ".join(sorted(lab)))
        out.append("rows")
        for q in range(self.n_states):
            for ai, u in enumerate(self.actions):
                succ, lo, hi = self.row(q, ai)
                parts = [f"{q} {u} {succ.size}"]
                parts += [f"{s} {l:.17g} {h:.17g}" for s, l, h in zip(succ.tolist(), lo.tolist(), hi.tolist())]
                out.append(" ".join(parts))
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Imdp":
        lines = iter(text.splitlines())
        if next(lines).strip() != "imdp 1":
            raise AbstractionError("not an imdp file")
        n_states = int(next(lines).split()[1])
        unsafe = int(next(lines).split()[1])
        actions = tuple(int(a) for a in next(lines).split()[1:])
        labels = [frozenset()] * n_states
        for line in lines:
            if line == "rows":
                break
            tok = line.split()
            labels[int(tok[1])] = frozenset(tok[2:])
        ptr, succ, lo, hi = [0], [], [], []
        for line in lines:
            tok = line.split()
            k = int(tok[2])
            vals = tok[3:]
            succ += [int(v) for v in vals[0::3]]
            lo += [float(v) for v in vals[1::3]]
            hi += [float(v) for v in vals[2::3]]
            ptr.append(ptr[-1] + k)
        return cls(n_states, actions, tuple(labels), unsafe, np.array(ptr), np.array(succ, dtype=int),
                   np.array(lo), np.array(hi))

    @classmethod
    def from_rows(cls, n_states, actions, labels, unsafe, rows: Sequence):
        """``rows[q * n_actions + a] = (succ, lo, hi)``."""
        ptr = np.zeros(len(rows) + 1, dtype=int)
        ptr[1:] = np.cumsum([len(r[0]) for r in rows])
        cat = lambda k, dt: np.concatenate([np.asarray(r[k], dtype=dt) for r in rows]) if rows else np.zeros(0, dt)
        return cls(n_states, tuple(actions), tuple(labels), unsafe, ptr, cat(0, int), cat(1, float), cat(2, float))


@dataclass
class RepairReport:
    lower_scaled: int = 0
    upper_raised: int = 0
    rows: int = 0
    entries: int = 0
    dropped: int = 0
    eps_inside: int = 0
    eps_apart: int = 0
    eps_default: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _row_for_cell(q: int, part: Partition, img: ImageBatch, learned: LearnedMode, eta, p_eta_prod, cfg,
                  report: RepairReport):
    im_lo, im_hi, sig = img.lower[q], img.upper[q], img.sigma_sup[q]
    t_lo = np.vstack([part.cell_lower, part.domain.lower[None]])
    t_hi = np.vstack([part.cell_upper, part.domain.upper[None]])
    eps, d = _select_eps(im_lo, im_hi, t_lo, t_hi, eta, sig, learned, cfg.delta0, cfg.separation_eps)
    c = eps + eta
    c_fin = np.where(np.isfinite(c), c, 1e300)
    meets, _ = _indicators(im_lo, im_hi, t_lo, t_hi, c_fin)
    _, inside = _indicators(im_lo, im_hi, t_lo, t_hi, c)
    inside &= np.all(np.isfinite(c), axis=1)
    conf, slop = _interval_terms(d, p_eta_prod)
    hi = np.minimum(meets * conf + slop, 1.0)
    lo = np.minimum(inside * conf, hi)
    # last target is the whole domain: turn it into the leave-the-domain interval
    u_lo = max(1.0 - meets[-1] * conf[-1] - slop[-1], 0.0)
    u_hi = min(max(1.0 - inside[-1] * conf[-1], 0.0), 1.0)
    lo[-1], hi[-1] = min(u_lo, u_hi), u_hi

    report.eps_inside += int(np.sum(inside[:-1]))
    report.eps_apart += int(np.sum(~meets[:-1]))
    report.eps_default += int(np.sum(np.all(d[:-1] == cfg.delta0, axis=1)))

    keep = hi > cfg.sparsity_floor
    report.dropped += int(np.sum(~keep))
    succ = np.flatnonzero(keep)
    lo, hi = lo[keep], hi[keep]
    return _repair(succ, lo, hi, part.unsafe_index, report)


def _repair(succ, lo, hi, unsafe: int, report: RepairReport):
    s_lo = lo.sum()
    if s_lo > 1.0:
        lo = lo / s_lo
        while lo.sum() > 1.0:
            lo = np.nextafter(lo, 0.0)
        report.lower_scaled += 1
        log.debug("row lower bounds summed to %.17g; scaled down", s_lo)
    deficit = 1.0 - hi.sum()
    if deficit > 0.0:
        k = np.searchsorted(succ, unsafe)
        if k < succ.size and succ[k] == unsafe:
            hi = hi.copy()
            hi[k] = min(hi[k] + deficit, 1.0)
        else:
            succ = np.append(succ, unsafe)
            lo = np.append(lo, 0.0)
            hi = np.append(hi, min(deficit, 1.0))
        while hi.sum() < 1.0:
            hi[-1 if succ[-1] == unsafe else k] = np.nextafter(hi[-1 if succ[-1] == unsafe else k], 2.0)
        report.upper_raised += 1
        log.debug("row upper bounds summed to %.17g; raised the outside state", 1.0 - deficit)
    return succ, lo, hi


_BLOCK = 64  # cells per work unit; fixed so results never depend on the thread count


def build_imdp(
    part: Partition,
    known: Mapping[int, KnownMap],
    learned: Mapping[int, LearnedMode],
    noise: NoiseModel,
    cfg: AbstractionConfig = AbstractionConfig(),
):
    """Assemble the IMDP. Returns ``(imdp, report)``."""
    modes = tuple(sorted(known))
    if set(modes) != set(learned):
        raise AbstractionError("known and learned modes differ")
    n = part.dim
    eta, p_eta = choose_eta(noise, cfg.coverage, n, cfg.eta_fraction)
    p_eta_prod = float(np.prod(p_eta))
    report = RepairReport()
    N = part.n_cells
    rows: list = [None] * (part.n_states * len(modes))
    blocks = [range(s, min(s + _BLOCK, N)) for s in range(0, N, _BLOCK)]

    for ai, u in enumerate(modes):
        img = image_batch(part.cell_lower, part.cell_upper, known[u], learned[u], cfg.mean_depth,
                          cfg.sigma_depth, cfg.exact_lambda)

        def work(block, u=u, ai=ai, img=img):
            rep = RepairReport()
            out = [(q, _row_for_cell(q, part, img, learned[u], eta, p_eta_prod, cfg, rep)) for q in block]
            return out, rep

        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as ex:
                results = list(ex.map(work, blocks))
        else:
            results = [work(b) for b in blocks]
        for out, rep in results:
            for q, row in out:
                rows[q * len(modes) + ai] = row
            for k, v in rep.__dict__.items():
                setattr(report, k, getattr(report, k) + v)
        rows[part.unsafe_index * len(modes) + ai] = (np.array([part.unsafe_index]), np.ones(1), np.ones(1))

    report.rows = len(rows)
    report.entries = int(sum(len(r[0]) for r in rows))
    labels = tuple(part.label(q) for q in range(part.n_states))
    imdp = Imdp.from_rows(part.n_states, modes, labels, part.unsafe_index, rows)
    info = {"eta": eta.tolist(), "p_eta": p_eta.tolist(), "report": report.to_dict()}
    return imdp, info


def check_consistency(imdp: Imdp, tol: float = 1e-12) -> list:
    """Rows violating ``lo <= hi`` or ``sum lo <= 1 <= sum hi``."""
    bad = []
    for r in range(len(imdp.row_ptr) - 1):
        s, e = imdp.row_ptr[r], imdp.row_ptr[r + 1]
        lo, hi = imdp.lo[s:e], imdp.hi[s:e]
        if np.any(lo > hi) or lo.sum() > 1 + tol or hi.sum() < 1 - tol:
            bad.append(r)
    return bad

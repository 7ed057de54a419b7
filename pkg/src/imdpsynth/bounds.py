"""Sound bounds of the learned map over boxes.

For the squared-exponential kernel ``k(d) = s2 * exp(-d / 2)`` of the scaled
squared distance ``d``, each training point contributes ``alpha_j k(d_j(x))``
with ``d_j`` ranging over ``[dmin_j, dmax_j]`` on a box. Two bounds are
combined, both sound:

* per-point: every term takes its worst value independently;
* relaxation: ``k`` is convex in ``d``, so a tangent lies below it and the
  chord over ``[dmin_j, dmax_j]`` above it. Summing the relaxed terms gives a
  separable quadratic in ``x`` that is minimized exactly over the box.

The posterior standard deviation is bounded by the smaller of
``s2 - sum_j kmin_j^2 / lambda_max`` and a Lipschitz bound
``sigma(c) + ||phi(x) - phi(c)||`` in feature space, valid because the
posterior covariance operator is dominated by the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .geometry import Box
from .learning import FittedGP, LearnedMode

_CHUNK = 1 << 20  # sub-box x training-point entries per batch
_PAD = 1e-12


class KnownMap:
    """Known part ``f_u`` of a mode: point evaluator plus a box-image oracle."""

    def __init__(self, fn: Callable, box_image: Callable, name: str = "custom"):
        self._fn = fn
        self._box_image = box_image
        self.name = name

    def __call__(self, x):
        return np.asarray(self._fn(np.asarray(x, dtype=float)), dtype=float)

    def image_bounds(self, lowers: np.ndarray, uppers: np.ndarray):
        """Batched box image: arrays ``(N, n)`` -> bounding arrays ``(N, n)``."""
        return self._box_image(lowers, uppers)

    def image(self, q: Box) -> Box:
        lo, hi = self.image_bounds(q.lower[None, :], q.upper[None, :])
        return Box(lo[0], hi[0])


class LinearMap(KnownMap):
    """``f(x) = A x + b``; the box image is exact (attained at vertices)."""

    def __init__(self, A, b=None, name: str = "linear"):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)
        Ap, An = np.maximum(self.A, 0), np.minimum(self.A, 0)

        def box_image(lo, hi):
            return lo @ Ap.T + hi @ An.T + self.b, hi @ Ap.T + lo @ An.T + self.b

        super().__init__(lambda x: x @ self.A.T + self.b, box_image, name)

    def to_dict(self) -> dict:
        return {"kind": "linear", "A": self.A.tolist(), "b": self.b.tolist()}


def zero_map(n: int) -> LinearMap:
    return LinearMap(np.zeros((n, n)), name="zero")


def identity_map(n: int) -> LinearMap:
    return LinearMap(np.eye(n), name="identity")


def known_map_from_spec(spec, n: int) -> LinearMap:
    """``"zero"``, ``"identity"`` or ``{"A": [[...]], "b": [...]}``."""
    if spec == "zero":
        return zero_map(n)
    if spec == "identity":
        return identity_map(n)
    if isinstance(spec, dict) and "A" in spec:
        return LinearMap(spec["A"], spec.get("b"))
    raise ValueError(f"unsupported known dynamics {spec!r}")


# ---------------------------------------------------------------------------


def _subdivide(lowers: np.ndarray, uppers: np.ndarray, depth: int):
    """Split every box into ``2**depth`` pieces per axis. Returns sub-box
    bounds and, for each sub-box, the index of its parent."""
    N, n = lowers.shape
    k = 1 << depth
    t = np.arange(k + 1) / k
    offs = np.stack(np.meshgrid(*[np.arange(k)] * n, indexing="ij"), -1).reshape(-1, n)
    w = uppers - lowers
    sub_lo = lowers[:, None, :] + w[:, None, :] * t[offs]
    sub_hi = lowers[:, None, :] + w[:, None, :] * t[offs + 1]
    last = offs == k - 1
    sub_hi = np.where(last[None], uppers[:, None, :], sub_hi)
    parent = np.repeat(np.arange(N), offs.shape[0])
    return sub_lo.reshape(-1, n), sub_hi.reshape(-1, n), parent


def _chunks(n_boxes: int, m: int):
    step = max(1, _CHUNK // max(m, 1))
    for s in range(0, n_boxes, step):
        yield slice(s, min(s + step, n_boxes))


def _dist_ranges(gp: FittedGP, lo: np.ndarray, hi: np.ndarray):
    ls = gp.kernel.scales(gp.n)
    X = gp.inputs[None, :, :]
    L, U = lo[:, None, :], hi[:, None, :]
    near = np.maximum(0.0, np.maximum(L - X, X - U)) / ls
    far = np.maximum(np.abs(X - L), np.abs(X - U)) / ls
    return (near * near).sum(-1), (far * far).sum(-1)


def _mean_bounds_flat(gp: FittedGP, lo: np.ndarray, hi: np.ndarray):
    s2 = gp.kernel.signal_variance
    ls = gp.kernel.scales(gp.n)
    a = gp.alpha
    pos = a > 0
    out_lo = np.empty(lo.shape[0])
    out_hi = np.empty(lo.shape[0])
    pad = _PAD * (1.0 + s2 * np.abs(a).sum())
    for sl in _chunks(lo.shape[0], gp.m):
        L, U = lo[sl], hi[sl]
        dmin, dmax = _dist_ranges(gp, L, U)
        kmax, kmin = s2 * np.exp(-0.5 * dmin), s2 * np.exp(-0.5 * dmax)
        base_hi = np.where(pos, kmax, kmin) @ a
        base_lo = np.where(pos, kmin, kmax) @ a

        c = 0.5 * (L + U)
        P = (gp.inputs[None, :, :] - c[:, None, :]) / ls  # training points, box-centred, scaled
        d0 = np.clip((P * P).sum(-1), dmin, dmax)
        k0 = s2 * np.exp(-0.5 * d0)
        span = dmax - dmin
        with np.errstate(invalid="ignore", divide="ignore"):
            slope = np.where(span > 0, (kmin - kmax) / span, 0.0)
        # tangent (below k) and chord (above k) as  const + w * d
        tan_w, tan_c = -0.5 * k0, k0 + 0.5 * k0 * d0
        chd_w, chd_c = slope, kmax - slope * dmin
        t_lo, t_hi = (L - c) / ls, (U - c) / ls
        bounds = []
        for sign in (1.0, -1.0):
            # sign=+1: lower bound of mu; sign=-1: lower bound of -mu
            sa = sign * a
            use_tan = sa > 0
            W = np.where(use_tan, tan_w, chd_w) * sa
            C = (np.where(use_tan, tan_c, chd_c) * sa).sum(1)
            Wsum = W.sum(1)
            # sum_j W_j |t - p_j|^2 = Wsum |t|^2 - 2 t.(W p) + sum_j W_j |p_j|^2
            WP = np.einsum("bj,bji->bi", W, P)
            const = C + np.einsum("bj,bj->b", W, (P * P).sum(-1))
            qa = Wsum[:, None]
            qb = -2.0 * WP
            f_lo = qa * t_lo * t_lo + qb * t_lo
            f_hi = qa * t_hi * t_hi + qb * t_hi
            best = np.minimum(f_lo, f_hi)
            with np.errstate(invalid="ignore", divide="ignore"):
                tv = np.where(qa > 0, -qb / (2.0 * qa), 0.0)
            inside = (qa > 0) & (tv > t_lo) & (tv < t_hi)
            best = np.where(inside, np.minimum(best, qa * tv * tv + qb * tv), best)
            bounds.append(const + best.sum(1))
        out_lo[sl] = np.maximum(base_lo, bounds[0]) - pad
        out_hi[sl] = np.minimum(base_hi, -bounds[1]) + pad
    return out_lo, out_hi


def mean_range_boxes(gp: FittedGP, lowers, uppers, depth: int = 2):
    """Bounds of the posterior mean over each box in a batch."""
    lowers = np.atleast_2d(np.asarray(lowers, dtype=float))
    uppers = np.atleast_2d(np.asarray(uppers, dtype=float))
    N = lowers.shape[0]
    if gp.m == 0:
        return np.zeros(N), np.zeros(N)
    lo, hi = _mean_bounds_flat(gp, lowers, uppers)
    if depth > 0:
        sl, sh, parent = _subdivide(lowers, uppers, depth)
        rlo, rhi = _mean_bounds_flat(gp, sl, sh)
        k = rlo.size // N
        lo = np.maximum(lo, rlo.reshape(N, k).min(1))
        hi = np.minimum(hi, rhi.reshape(N, k).max(1))
    return lo, hi


def mean_range_over_box(gp: FittedGP, q: Box, depth: int = 2):
    lo, hi = mean_range_boxes(gp, q.lower[None], q.upper[None], depth)
    return float(lo[0]), float(hi[0])


def lambda_max_bound(gp: FittedGP, exact: bool = False) -> float:
    """Upper bound on the largest eigenvalue of ``K + sigma^2 I``."""
    if gp.m == 0:
        return 0.0
    A = gp.chol @ gp.chol.T
    if exact:
        return float(linalg.eigvalsh(A, subset_by_index=[gp.m - 1, gp.m - 1])[0]) * (1 + 1e-12)
    return float(np.abs(A).sum(1).max())


def _sigma_bounds_flat(gp: FittedGP, lo, hi, lam: Optional[float]):
    """Lipschitz bound per box; also the eigenvalue bound when ``lam`` is given."""
    s2 = gp.kernel.signal_variance
    ls = gp.kernel.scales(gp.n)
    out = np.empty(lo.shape[0])
    for sl in _chunks(lo.shape[0], gp.m):
        L, U = lo[sl], hi[sl]
        c = 0.5 * (L + U)
        v = linalg.solve_triangular(gp.chol, gp.kernel(gp.inputs, c), lower=True)
        sc = np.sqrt(np.maximum(s2 - (v * v).sum(0), 0.0))
        r2 = ((0.5 * (U - L) / ls) ** 2).sum(1)
        b = sc + np.sqrt(2.0 * s2 * -np.expm1(-0.5 * r2))
        if lam is not None:
            _, dmax = _dist_ranges(gp, L, U)
            kmin = s2 * np.exp(-0.5 * dmax)
            b = np.minimum(b, np.sqrt(np.clip(s2 - (kmin * kmin).sum(1) / lam, 0.0, s2)))
        out[sl] = b * (1 + 1e-9) + _PAD * math.sqrt(s2)
    return np.minimum(out, math.sqrt(s2))


def sigma_sup_boxes(gp: FittedGP, lowers, uppers, depth: int = 3, exact_lambda: bool = False):
    """Upper bounds of the posterior standard deviation over each box."""
    lowers = np.atleast_2d(np.asarray(lowers, dtype=float))
    uppers = np.atleast_2d(np.asarray(uppers, dtype=float))
    N = lowers.shape[0]
    s = math.sqrt(gp.kernel.signal_variance)
    if gp.m == 0:
        return np.full(N, s)
    b = _sigma_bounds_flat(gp, lowers, uppers, lambda_max_bound(gp, exact_lambda))
    if depth > 0:
        sl, sh, _ = _subdivide(lowers, uppers, depth)
        r = _sigma_bounds_flat(gp, sl, sh, None)
        b = np.minimum(b, r.reshape(N, -1).max(1))
    return b


def sigma_sup_over_box(gp: FittedGP, q: Box, depth: int = 3, exact_lambda: bool = False) -> float:
    return float(sigma_sup_boxes(gp, q.lower[None], q.upper[None], depth, exact_lambda)[0])


@dataclass(frozen=True)
class ImageBatch:
    """Image boxes and per-dimension sigma bounds for a batch of cells."""

    lower: np.ndarray  # (N, n)
    upper: np.ndarray
    sigma_sup: np.ndarray  # (N, n)


def image_batch(
    lowers,
    uppers,
    known: KnownMap,
    learned: Optional[LearnedMode],
    depth: int = 2,
    sigma_depth: int = 3,
    exact_lambda: bool = False,
) -> ImageBatch:
    lowers = np.atleast_2d(np.asarray(lowers, dtype=float))
    uppers = np.atleast_2d(np.asarray(uppers, dtype=float))
    flo, fhi = known.image_bounds(lowers, uppers)
    N, n = lowers.shape
    glo, ghi, sig = np.zeros((N, n)), np.zeros((N, n)), np.zeros((N, n))
    if learned is not None:
        for i, gp in enumerate(learned.gps):
            glo[:, i], ghi[:, i] = mean_range_boxes(gp, lowers, uppers, depth)
            sig[:, i] = sigma_sup_boxes(gp, lowers, uppers, sigma_depth, exact_lambda)
    return ImageBatch(flo + glo, fhi + ghi, sig)


def image(q: Box, known: KnownMap, learned: Optional[LearnedMode], depth: int = 2) -> Box:
    """Bounding box of ``{f_u(x) + mu(x) : x in q}``."""
    b = image_batch(q.lower[None], q.upper[None], known, learned, depth)
    return Box(b.lower[0], b.upper[0])

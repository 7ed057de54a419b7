"""Per-mode GP regression of the unknown dynamics with a uniform error bound.

Each mode ``u`` and output dimension ``i`` gets an independent GP fitted to the
residuals ``x_plus - f_u(x)``. The regression noise parameter is fixed to
``sigma = 1 + 2/m`` (``m`` samples of the mode), which is what the RKHS error
bound below requires.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import erf, erfinv

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class LearningError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Sample:
    x: tuple
    u: int
    x_plus: tuple


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean i.i.d. noise per dimension.

    ``kind`` is ``"truncated_gaussian"`` (normal with ``std`` truncated to
    ``[-bound, bound]``; ``bound=inf`` gives a plain Gaussian) or
    ``"uniform"`` on ``[-bound, bound]``.
    """

    kind: str
    bound: float
    std: float = 0.0
    theta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("truncated_gaussian", "uniform"):
            raise LearningError(f"unknown noise kind {self.kind!r}")
        if not self.bound > 0:
            raise LearningError("noise bound must be positive")
        if self.kind == "truncated_gaussian" and not self.std > 0:
            raise LearningError("truncated Gaussian needs a positive std")
        if self.theta is not None and not self.theta > 0:
            raise LearningError("sub-Gaussian parameter must be positive")

    @property
    def sub_gaussian_theta(self) -> float:
        if self.theta is not None:
            return self.theta
        return self.std if self.kind == "truncated_gaussian" else self.bound

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.bound)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-self.bound, self.bound, size=size)
        if not self.bounded:
            return rng.normal(0.0, self.std, size=size)
        # inverse-CDF sampling keeps the draw count fixed, so streams stay aligned
        z = self.bound / (self.std * math.sqrt(2.0))
        p = rng.uniform(-1.0, 1.0, size=size) * erf(z)
        return self.std * math.sqrt(2.0) * erfinv(p)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bound": self.bound, "std": self.std, "theta": self.theta}


def noise_tail(noise: NoiseModel, eta) -> np.ndarray:
    """Per-dimension ``P[|v_i| <= eta_i]``."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if np.any(eta < 0):
        raise LearningError("eta must be non-negative")
    e = np.minimum(eta, noise.bound)
    if noise.kind == "uniform":
        return e / noise.bound
    s2 = noise.std * math.sqrt(2.0)
    denom = erf(noise.bound / s2) if noise.bounded else 1.0
    return erf(e / s2) / denom


def noise_quantile(noise: NoiseModel, p) -> np.ndarray:
    """Smallest ``eta`` with ``P[|v| <= eta] >= p``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p < 0) | (p > 1)):
        raise LearningError("probability out of range")
    if np.any(p >= 1) and not noise.bounded:
        raise LearningError("coverage 1 is impossible for unbounded noise")
    if noise.kind == "uniform":
        return p * noise.bound
    s2 = noise.std * math.sqrt(2.0)
    top = erf(noise.bound / s2) if noise.bounded else 1.0
    out = s2 * erfinv(np.minimum(p * top, top))
    return np.where(p >= 1, noise.bound, np.minimum(out, noise.bound))


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential kernel ``s2 * exp(-0.5 * sum((x - y)^2 / l^2))``."""

    signal_variance: float = 1.0
    length_scale: object = 1.0  # scalar or per-dimension sequence

    def __post_init__(self):
        if not self.signal_variance > 0:
            raise LearningError("signal variance must be positive")
        ls = np.atleast_1d(np.asarray(self.length_scale, dtype=float))
        if np.any(ls <= 0):
            raise LearningError("length scale must be positive")
        object.__setattr__(self, "length_scale", tuple(ls.tolist()) if ls.size > 1 else float(ls[0]))

    def scales(self, n: int) -> np.ndarray:
        ls = np.atleast_1d(np.asarray(self.length_scale, dtype=float))
        return np.full(n, ls[0]) if ls.size == 1 else ls

    def sqdist(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Length-scaled squared distances between rows of ``a`` and ``b``."""
        ls = self.scales(a.shape[1])
        a, b = a / ls, b / ls
        d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return np.maximum(d, 0.0)

    def of_sqdist(self, d):
        return self.signal_variance * np.exp(-0.5 * d)

    def __call__(self, a, b) -> np.ndarray:
        a, b = np.atleast_2d(a), np.atleast_2d(b)
        return self.of_sqdist(self.sqdist(a, b))

    def to_dict(self) -> dict:
        return {"signal_variance": self.signal_variance, "length_scale": self.length_scale}


@dataclass(frozen=True, eq=False)
class FittedGP:
    """Posterior of one output dimension. ``chol`` is the lower Cholesky factor
    of ``K + (sigma^2 + jitter) I``; ``alpha`` solves that system for ``y``."""

    kernel: Kernel
    inputs: np.ndarray
    targets: np.ndarray
    sigma: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    gamma: float = 0.0

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[1]


def regression_sigma(m: int) -> float:
    return 1.0 + 2.0 / max(m, 1)


def _cholesky(K: np.ndarray, sigma2: float, s2: float):
    m = K.shape[0]
    A = K + sigma2 * np.eye(m)
    try:
        return linalg.cholesky(A, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_START * s2
    while jitter <= JITTER_MAX * s2 * (1 + 1e-12):
        try:
            L = linalg.cholesky(A + jitter * np.eye(m), lower=True)
            log.warning("Gram matrix needed jitter %.1e", jitter)
            return L, jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"Gram matrix not positive definite (condition number {np.linalg.cond(A):.3e})")


def prior_gp(kernel: Kernel, n: int) -> FittedGP:
    empty = np.zeros((0, n))
    return FittedGP(kernel, empty, np.zeros(0), regression_sigma(0), np.zeros((0, 0)), np.zeros(0))


def fit(inputs, targets, kernel: Kernel, sigma: Optional[float] = None) -> FittedGP:
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise LearningError("inputs and targets differ in length")
    if y.size == 0:
        raise LearningError("cannot fit a GP to an empty dataset")
    sigma = regression_sigma(y.size) if sigma is None else float(sigma)
    K = kernel(X, X)
    L, jitter = _cholesky(K, sigma * sigma, kernel.signal_variance)
    alpha = linalg.cho_solve((L, True), y)
    # 0.5 log det(I + K / sigma^2) from the factor of K + sigma^2 I
    gamma = float(np.sum(np.log(np.diag(L))) - 0.5 * y.size * math.log(sigma * sigma))
    return FittedGP(kernel, X, y, sigma, L, alpha, jitter, max(gamma, 0.0))


def posterior_mean(gp: FittedGP, x) -> np.ndarray | float:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if gp.m == 0:
        out = np.zeros(pts.shape[0])
    else:
        out = gp.kernel(pts, gp.inputs) @ gp.alpha
    return float(out[0]) if np.ndim(x) == 1 else out


def posterior_var(gp: FittedGP, x, return_clamped: bool = False):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    prior = np.full(pts.shape[0], gp.kernel.signal_variance)
    if gp.m == 0:
        var = prior
    else:
        v = linalg.solve_triangular(gp.chol, gp.kernel(gp.inputs, pts), lower=True)
        var = prior - np.sum(v * v, axis=0)
    clamped = int(np.sum(var < 0))
    var = np.maximum(var, 0.0)
    out = float(var[0]) if np.ndim(x) == 1 else var
    return (out, clamped) if return_clamped else out


def information_gain(gp: FittedGP) -> float:
    """Realized information gain ``0.5 log det(I + K / sigma^2)``."""
    return gp.gamma


def log_marginal_likelihood(gp: FittedGP) -> float:
    return float(
        -0.5 * gp.targets @ gp.alpha - np.sum(np.log(np.diag(gp.chol))) - 0.5 * gp.m * math.log(2 * math.pi)
    )


def select_kernel(inputs, targets, grid: Sequence[Kernel]) -> Kernel:
    """Grid search over kernels by log marginal likelihood (first wins ties).
    With 2-D ``targets`` the likelihoods of the columns are summed."""
    Y = np.asarray(targets, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    best, best_ll = None, -math.inf
    for k in grid:
        ll = sum(log_marginal_likelihood(fit(inputs, Y[:, i], k)) for i in range(Y.shape[1]))
        if ll > best_ll:
            best, best_ll = k, ll
    if best is None:
        raise LearningError("empty kernel grid")
    return best


@dataclass(frozen=True, eq=False)
class LearnedMode:
    """Fits and certified-error constants of one mode.

    ``rkhs_bound[i]`` is B_i; ``gamma_bound[i]`` is the information gain used in
    the error bound (the realized gain unless an external bound was supplied).
    """

    mode: int
    gps: tuple
    theta: float
    rkhs_bound: tuple
    gamma_bound: tuple
    heuristic_rkhs: bool = True
    delta_min: float = 1e-6

    @property
    def n(self) -> int:
        return len(self.gps)

    @property
    def m(self) -> int:
        return self.gps[0].m

    @property
    def sigma(self) -> float:
        return self.gps[0].sigma


def learn_mode(
    mode: int,
    inputs,
    targets,
    kernel: Kernel,
    theta: float,
    rkhs_bound=None,
    kappa: float = 2.0,
    gamma_bound=None,
    delta_min: float = 1e-6,
) -> LearnedMode:
    """Fit one GP per output column of ``targets``.

    Without ``rkhs_bound``, B_i defaults to ``kappa * max_j |y_j^(i)|``.
    """
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if Y.shape[0] == 0:
        raise LearningError(f"mode {mode} has no samples")
    gps = tuple(fit(inputs, Y[:, i], kernel) for i in range(Y.shape[1]))
    heuristic = rkhs_bound is None
    if heuristic:
        B = tuple(float(kappa * np.max(np.abs(Y[:, i]))) for i in range(Y.shape[1]))
    else:
        B = tuple(np.broadcast_to(np.asarray(rkhs_bound, dtype=float), (Y.shape[1],)).tolist())
    if gamma_bound is None:
        G = tuple(g.gamma for g in gps)
    else:
        G = tuple(np.broadcast_to(np.asarray(gamma_bound, dtype=float), (Y.shape[1],)).tolist())
        if any(g_ext < g.gamma for g_ext, g in zip(G, gps)):
            log.warning("mode %d: supplied gamma bound is below the realized information gain", mode)
    return LearnedMode(mode, gps, float(theta), B, G, heuristic, delta_min)


def beta(learned: LearnedMode, i: int, delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise LearningError(f"delta must be in (0, 1), got {delta}")
    th, sig = learned.theta, learned.sigma
    return (th / math.sqrt(sig)) * (
        learned.rkhs_bound[i] + th * math.sqrt(2.0 * (learned.gamma_bound[i] + 1.0 + math.log(1.0 / delta)))
    )


def invert_confidence(learned: LearnedMode, i: int, eps, sigma_sup):
    """Largest failure probability ``delta`` with ``beta(delta) * sigma_sup <= eps``,
    clamped to ``[delta_min, 1]``. ``1`` means the radius certifies nothing.

    Accepts scalars or broadcastable arrays.
    """
    eps_a = np.asarray(eps, dtype=float)
    sig_a = np.asarray(sigma_sup, dtype=float)
    th, sg = learned.theta, learned.sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        r = eps_a * math.sqrt(sg) / (th * sig_a) - learned.rkhs_bound[i]
        log_inv = 0.5 * (r / th) ** 2 - learned.gamma_bound[i] - 1.0
        delta = np.where((r > 0) & (log_inv > 0), np.exp(-np.where(log_inv > 0, log_inv, 0.0)), 1.0)
    delta = np.where(eps_a <= 0, 1.0, delta)
    delta = np.where(sig_a <= 0, 0.0, delta)
    delta = np.maximum(delta, learned.delta_min)
    return float(delta) if delta.ndim == 0 else delta


# ---------------------------------------------------------------------------
# datasets


def build_residuals(samples: Sequence[Sample], known: Mapping[int, Callable], n: Optional[int] = None) -> dict:
    """Group samples by mode as ``{u: (X, Y)}`` with ``Y = x_plus - f_u(x)``."""
    groups: dict = {}
    for s in samples:
        if s.u not in known:
            raise LearningError(f"unknown mode id {s.u}")
        x, xp = np.asarray(s.x, dtype=float), np.asarray(s.x_plus, dtype=float)
        dim = n if n is not None else x.size
        if x.size != dim or xp.size != dim:
            raise LearningError("sample dimension mismatch")
        groups.setdefault(s.u, ([], []))
        groups[s.u][0].append(x)
        groups[s.u][1].append(xp - np.asarray(known[s.u](x), dtype=float))
    return {u: (np.array(xs), np.array(ys)) for u, (xs, ys) in sorted(groups.items())}


def dataset_header(n: int) -> list:
    return ["u"] + [f"x{i + 1}" for i in range(n)] + [f"xp{i + 1}" for i in range(n)]


def write_dataset_csv(samples: Sequence[Sample], n: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_header(n))
    for s in samples:
        w.writerow([s.u] + [repr(float(v)) for v in s.x] + [repr(float(v)) for v in s.x_plus])
    return buf.getvalue()


def read_dataset_csv(text: str) -> tuple:
    """Parse a dataset CSV; returns ``(samples, n)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise LearningError("empty dataset file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "u":
        raise LearningError("dataset header must start with 'u'")
    n = (len(header) - 1) // 2
    if n < 1 or header != dataset_header(n):
        raise LearningError(f"bad dataset header {header}")
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2 * n + 1:
            raise LearningError(f"line {lineno}: expected {2 * n + 1} fields")
        try:
            u = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise LearningError(f"line {lineno}: {exc}") from None
        if u < 1:
            raise LearningError(f"line {lineno}: modes are 1-based")
        samples.append(Sample(tuple(vals[:n]), u, tuple(vals[n:])))
    return samples, n


# ---------------------------------------------------------------------------
# serialization


def gp_to_dict(gp: FittedGP) -> dict:
    return {
        "kernel": gp.kernel.to_dict(),
        "inputs": gp.inputs.tolist(),
        "targets": gp.targets.tolist(),
        "sigma": gp.sigma,
        "jitter": gp.jitter,
        "gamma": gp.gamma,
        "weights": gp.alpha.tolist(),
    }


def gp_from_dict(d: dict) -> FittedGP:
    kernel = Kernel(**d["kernel"])
    X = np.asarray(d["inputs"], dtype=float)
    y = np.asarray(d["targets"], dtype=float)
    if y.size == 0:
        return prior_gp(kernel, X.shape[1] if X.ndim == 2 else 1)
    K = kernel(X, X) + (d["sigma"] ** 2 + d["jitter"]) * np.eye(y.size)
    L = linalg.cholesky(K, lower=True)
    return FittedGP(kernel, X, y, d["sigma"], L, np.asarray(d["weights"], dtype=float), d["jitter"], d["gamma"])


def learned_to_dict(lm: LearnedMode) -> dict:
    return {
        "mode": lm.mode,
        "theta": lm.theta,
        "rkhs_bound": list(lm.rkhs_bound),
        "gamma_bound": list(lm.gamma_bound),
        "heuristic_rkhs": lm.heuristic_rkhs,
        "delta_min": lm.delta_min,
        "gps": [gp_to_dict(g) for g in lm.gps],
    }


def learned_from_dict(d: dict) -> LearnedMode:
    return LearnedMode(
        d["mode"],
        tuple(gp_from_dict(g) for g in d["gps"]),
        d["theta"],
        tuple(d["rkhs_bound"]),
        tuple(d["gamma_bound"]),
        d["heuristic_rkhs"],
        d["delta_min"],
    )

"""Built-in ground-truth systems used for data generation and validation.

The synthesis pipeline never reads these; only ``gen-data`` and ``validate``
(and the test harness) do.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .bounds import KnownMap, identity_map, zero_map
from .learning import NoiseModel


@dataclass(frozen=True)
class Scenario:
    name: str
    dim: int
    known: Mapping[int, KnownMap]
    unknown: Mapping[int, Callable]  # batched: (N, n) -> (N, n)
    noise: NoiseModel
    samples_per_mode: int
    defaults: dict  # config values this scenario is normally run with

    @property
    def modes(self) -> tuple:
        return tuple(sorted(self.known))

    def step(self, x: np.ndarray, u: int, v: np.ndarray) -> np.ndarray:
        """``x+ = f_u(x) + g_u(x) + v`` for a batch ``x`` of shape ``(N, n)``."""
        x = np.atleast_2d(x)
        return np.asarray(self.known[u](x)) + self.unknown[u](x) + v


def _linear(A):
    A = np.asarray(A, dtype=float)
    return lambda x: np.atleast_2d(x) @ A.T


_NOISE = NoiseModel("truncated_gaussian", bound=0.01, std=0.01)


def _linear3() -> Scenario:
    mats = {
        1: [[0.4, 0.1], [0.0, 0.5]],
        2: [[0.4, 0.5], [0.0, 0.5]],
        3: [[0.4, 0.0], [0.5, 0.5]],
    }
    return Scenario(
        name="linear3",
        dim=2,
        known={u: zero_map(2) for u in mats},
        unknown={u: _linear(A) for u, A in mats.items()},
        noise=_NOISE,
        samples_per_mode=200,
        defaults={
            "regions": [
                {"label": "des", "lower": [-0.25, -0.25], "upper": [0.25, 0.25]},
                {"label": "obs", "lower": [0.5, -1.0], "upper": [1.0, 0.0]},
            ],
            "formula": "G !obs & F des",
            "known": "zero",
        },
    )


def _sincos(u: int):
    def g(x):
        x = np.atleast_2d(x)
        a, b = x[:, 0], x[:, 1]
        if u == 1:
            out = (0.5 + 0.2 * np.sin(b), 0.4 * np.cos(a))
        elif u == 2:
            out = (-0.5 + 0.2 * np.sin(b), 0.4 * np.cos(a))
        elif u == 3:
            out = (0.4 * np.cos(b), 0.5 + 0.2 * np.sin(a))
        else:
            out = (0.4 * np.cos(b), -0.5 + 0.2 * np.sin(a))
        return np.stack(out, axis=1)

    return g


def _nonlin4() -> Scenario:
    return Scenario(
        name="nonlin4",
        dim=2,
        known={u: identity_map(2) for u in (1, 2, 3, 4)},
        unknown={u: _sincos(u) for u in (1, 2, 3, 4)},
        noise=_NOISE,
        samples_per_mode=300,
        defaults={
            "regions": [
                {"label": "des", "lower": [-0.5, -0.5], "upper": [0.5, 0.5]},
            ],
            "formula": "F des",
            "known": "identity",
        },
    )


SCENARIOS = {"linear3": _linear3, "nonlin4": _nonlin4}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def generate_samples(scenario: Scenario, domain_lower, domain_upper, per_mode: int, seed: int):
    """Uniform starts over the domain, one successor each; mode by mode."""
    from .learning import Sample

    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = np.asarray(domain_lower, float), np.asarray(domain_upper, float)
    out = []
    for u in scenario.modes:
        x = lo + (hi - lo) * rng.random((per_mode, scenario.dim))
        v = scenario.noise.sample(rng, (per_mode, scenario.dim))
        xp = scenario.step(x, u, v)
        out += [Sample(tuple(a.tolist()), u, tuple(b.tolist())) for a, b in zip(x, xp)]
    return out

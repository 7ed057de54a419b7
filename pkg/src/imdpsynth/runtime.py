"""Executing a synthesized strategy on a concrete system, and checking it by
simulation.

Trial ``t`` of a run seeded with ``seed`` draws from
``PCG64(SeedSequence(seed, spawn_key=(t,)))``, so any subset of trials, in
any order or in parallel, reproduces the same streams.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .geometry import Partition
from .ltlf import Dfa
from .synthesis import SynthesisResult

RUNNING, SATISFIED, VIOLATED, TRUNCATED = "running", "satisfied", "violated", "truncated"
WILSON_Z99 = float(norm.ppf(0.995))


class Controller:
    """Switching controller: the cell of the current state together with the
    automaton state picks the mode."""

    def __init__(self, partition: Partition, dfa: Dfa, result: SynthesisResult):
        if result.n_dfa != dfa.n_states:
            raise ValueError("synthesis result does not match the automaton")
        self.partition = partition
        self.dfa = dfa
        self.result = result
        self.cell: Optional[int] = None
        self.dfa_state: Optional[int] = None
        self.status = RUNNING

    def _update(self, x) -> str:
        q = self.partition.locate(x)
        self.cell = q
        if q == self.partition.unsafe_index:
            # leaving the domain: acceptance already reached would have stopped us
            self.status = VIOLATED
            return self.status
        s = self.dfa.initial if self.dfa_state is None else self.dfa_state
        self.dfa_state = self.dfa.step(s, self.partition.label(q), strict=False)
        if self.dfa_state in self.dfa.accepting:
            self.status = SATISFIED
        elif self.dfa_state in self.dfa.dead:
            self.status = VIOLATED
        return self.status

    def start(self, x0) -> str:
        self.cell, self.dfa_state, self.status = None, None, RUNNING
        return self._update(x0)

    def observe(self, x) -> str:
        if self.status != RUNNING:
            raise RuntimeError(f"controller already {self.status}")
        return self._update(x)

    def action(self) -> int:
        if self.status != RUNNING:
            raise RuntimeError(f"no action: controller is {self.status}")
        return self.result.action(self.cell, self.dfa_state)

    def step(self, x) -> Optional[int]:
        """Observe ``x`` (starting on first use) and return the mode to apply,
        or ``None`` once the run has ended."""
        status = self.start(x) if self.dfa_state is None and self.cell is None else self.observe(x)
        return self.action() if status == RUNNING else None


@dataclass
class SimulationTrace:
    states: list
    actions: list
    labels: list
    dfa_states: list
    verdict: str

    @property
    def steps(self) -> int:
        return len(self.actions)

    def to_csv(self) -> str:
        n = len(self.states[0])
        buf = io.StringIO()
        buf.write(",".join(["step"] + [f"x{i + 1}" for i in range(n)] + ["action", "dfa_state"]) + "\n")
        for k, x in enumerate(self.states):
            a = self.actions[k] if k < len(self.actions) else ""
            s = self.dfa_states[k] if k < len(self.dfa_states) else ""
            buf.write(",".join([str(k)] + [repr(float(v)) for v in x] + [str(a), str(s)]) + "\n")
        return buf.getvalue()


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(trial,))))


def simulate(step_fn: Callable, noise, controller: Controller, x0, max_steps: int,
             rng: np.random.Generator) -> SimulationTrace:
    """Run ``x+ = step_fn(x, u, v)`` with ``v`` drawn from ``noise`` until the
    formula is decided or ``max_steps`` modes have been applied."""
    x = np.asarray(x0, dtype=float)
    status = controller.start(x)
    states, actions, labels, dstates = [x], [], [controller.partition.label(controller.cell)], [controller.dfa_state]
    while status == RUNNING and len(actions) < max_steps:
        u = controller.action()
        v = noise.sample(rng, x.shape)
        x = np.asarray(step_fn(x[None], u, v[None])[0], dtype=float)
        actions.append(u)
        states.append(x)
        status = controller.observe(x)
        labels.append(controller.partition.label(controller.cell))
        dstates.append(controller.dfa_state)
    verdict = TRUNCATED if status == RUNNING else status
    return SimulationTrace(states, actions, labels, dstates, verdict)


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z99):
    if trials < 1:
        raise ValueError("need at least one trial")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def wilson_half_width(successes: int, trials: int, z: float = WILSON_Z99) -> float:
    lo, hi = wilson_interval(successes, trials, z)
    return 0.5 * (hi - lo)


@dataclass
class MonteCarloResult:
    trials: int
    satisfied: int
    violated: int
    truncated: int
    interval: tuple
    bounds: tuple = (0.0, 1.0)
    pad: float = 0.0

    @property
    def rate(self) -> float:
        return self.satisfied / self.trials

    @property
    def consistent(self) -> bool:
        """Whether the Wilson interval meets the certified bounds widened by ``pad``."""
        lo, hi = self.bounds
        return bool(self.interval[1] >= lo - self.pad and self.interval[0] <= hi + self.pad)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials, "satisfied": self.satisfied, "violated": self.violated,
            "truncated": self.truncated, "rate": self.rate, "wilson99": [float(v) for v in self.interval],
            "bounds": [float(v) for v in self.bounds], "consistent": self.consistent,
        }


def monte_carlo(step_fn: Callable, noise, controller: Controller, x0, trials: int, max_steps: int, seed: int,
                bounds=(0.0, 1.0), pad: float = 0.0) -> MonteCarloResult:
    if trials < 1:
        raise ValueError("need at least one trial")
    counts = {SATISFIED: 0, VIOLATED: 0, TRUNCATED: 0}
    for t in range(trials):
        tr = simulate(step_fn, noise, controller, x0, max_steps, trial_rng(seed, t))
        counts[tr.verdict] += 1
    return MonteCarloResult(trials, counts[SATISFIED], counts[VIOLATED], counts[TRUNCATED],
                            wilson_interval(counts[SATISFIED], trials), tuple(bounds), pad)

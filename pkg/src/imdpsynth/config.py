"""Run configuration: one JSON document, unknown keys rejected."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional

from .abstraction import AbstractionConfig
from .bounds import known_map_from_spec
from .geometry import Box, build_partition, regions_from_spec
from .learning import Kernel, NoiseModel
from .ltlf import LtlfSyntaxError, parse


class ConfigError(ValueError):
    pass


# key -> (default, help)
_KEYS: dict = {
    "scenario": (None, "built-in ground truth for gen-data/validate (linear3, nonlin4)"),
    "domain": ({"lower": [-2.0, -2.0], "upper": [2.0, 2.0]}, "state domain box"),
    "grid_step": (0.125, "cell width, scalar or per dimension"),
    "regions": ([], 'labeled boxes: [{"label", "lower", "upper"}]'),
    "unused_labels": ([], "region labels deliberately absent from the formula"),
    "formula": ("", "LTLf formula over the region labels"),
    "threshold": (0.95, "probability threshold for the yes/no classes"),
    "known": ("zero", 'known dynamics for every mode ("zero", "identity", {"A", "b"}), or a map mode -> dynamics'),
    "kernel": ({"signal_variance": 100.0, "length_scale": 3.0}, "squared-exponential kernel"),
    "kernels": ({}, "per-mode kernel overrides: mode -> kernel"),
    "kernel_grid": (None, "list of kernels; when set, each mode without an override takes the one with the best marginal likelihood"),
    "rkhs_bound": (None, "B per dimension (null: kappa * max |residual|)"),
    "kappa": (2.0, "factor of the default RKHS bound"),
    "gamma_bound": (None, "external information-gain bound (null: realized gain)"),
    "noise": ({"kind": "truncated_gaussian", "bound": 0.01, "std": 0.01, "theta": None}, "process noise"),
    "delta0": (0.01, "confidence used when no slack can be exploited"),
    "delta_min": (1e-6, "smallest failure probability ever certified"),
    "eta_coverage": (1.0, "joint probability the noise box must cover"),
    "eta_fraction": (None, "override: eta as a fraction of the noise bound"),
    "eta_fractions": ([0.5, 0.75, 0.95, 0.99], "fractions run by sweep-eta"),
    "mean_depth": (2, "bisection depth for posterior-mean ranges"),
    "sigma_depth": (3, "bisection depth for posterior-sd bounds"),
    "exact_lambda": (False, "use the exact top eigenvalue in sd bounds"),
    "separation_eps": (True, "choose eps from the gap to far targets"),
    "sparsity_floor": (1e-12, "drop successors whose upper bound is at most this"),
    "tol": (1e-6, "value iteration stopping tolerance"),
    "max_sweeps": (100_000, "value iteration sweep limit"),
    "seed": (0, "seed for data generation and simulation"),
    "samples_per_mode": (None, "gen-data sample count (null: scenario default)"),
    "trials": (1000, "Monte Carlo trials per validated cell"),
    "max_steps": (100, "simulation step limit"),
    "validate_cells": (10, "number of yes cells validated (chosen with the seed)"),
}


def describe_keys() -> str:
    w = max(map(len, _KEYS))
    return "\n".join(f"  {k:<{w}}  {json.dumps(d)}  {h}" for k, (d, h) in _KEYS.items())


def defaults() -> dict:
    return {k: copy.deepcopy(d) for k, (d, _) in _KEYS.items()}


@dataclass
class RunConfig:
    values: dict = field(default_factory=defaults)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(d) - set(_KEYS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        vals = defaults()
        vals.update(copy.deepcopy(d))
        cfg = cls(vals)
        cfg.validate()
        return cfg

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.values, indent=1, sort_keys=True) + "\n"

    # -- typed views -------------------------------------------------------

    def domain_box(self) -> Box:
        try:
            return Box(self.domain["lower"], self.domain["upper"])
        except Exception as exc:
            raise ConfigError(f"domain: {exc}") from None

    def partition(self):
        try:
            return build_partition(self.domain_box(), regions_from_spec(self.regions), self.grid_step)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"partition: {exc}") from None

    def noise_model(self) -> NoiseModel:
        try:
            return NoiseModel(**self.noise)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"noise: {exc}") from None

    def known_maps(self, modes) -> dict:
        n = self.domain_box().dim
        spec = self.known
        out = {}
        for u in modes:
            s = spec.get(str(u), spec.get(u)) if isinstance(spec, dict) and "A" not in spec else spec
            if s is None:
                raise ConfigError(f"known: no dynamics for mode {u}")
            try:
                out[u] = known_map_from_spec(s, n)
            except ValueError as exc:
                raise ConfigError(f"known: {exc}") from None
        return out

    def kernel_for(self, mode: int) -> Kernel:
        k = self.kernels.get(str(mode), self.kernel)
        try:
            return Kernel(**k)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"kernel for mode {mode}: {exc}") from None

    def kernel_candidates(self, mode: int) -> Optional[list]:
        """Kernels to search for ``mode``, or None for a fixed kernel."""
        if not self.kernel_grid or str(mode) in self.kernels:
            return None
        try:
            return [Kernel(**k) for k in self.kernel_grid]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"kernel_grid: {exc}") from None

    def abstraction_config(self, threads: int = 1, eta_fraction: Optional[float] = None) -> AbstractionConfig:
        return AbstractionConfig(
            delta0=self.delta0,
            coverage=self.eta_coverage,
            eta_fraction=self.eta_fraction if eta_fraction is None else eta_fraction,
            mean_depth=int(self.mean_depth),
            sigma_depth=int(self.sigma_depth),
            exact_lambda=bool(self.exact_lambda),
            separation_eps=bool(self.separation_eps),
            sparsity_floor=float(self.sparsity_floor),
            threads=threads,
        )

    def formula_ast(self):
        if not self.formula:
            raise ConfigError("formula is empty")
        try:
            return parse(self.formula)
        except LtlfSyntaxError as exc:
            raise ConfigError(f"formula: {exc}") from None

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        if not 0.0 <= float(self.threshold) <= 1.0:
            raise ConfigError("threshold must be in [0, 1]")
        if not 0.0 < float(self.delta0) < 1.0:
            raise ConfigError("delta0 must be in (0, 1)")
        if not 0.0 < float(self.delta_min) <= float(self.delta0):
            raise ConfigError("delta_min must be in (0, delta0]")
        if not 0.0 < float(self.eta_coverage) <= 1.0:
            raise ConfigError("eta_coverage must be in (0, 1]")
        if not float(self.tol) > 0:
            raise ConfigError("tol must be positive")
        if int(self.max_sweeps) < 1 or int(self.max_steps) < 1 or int(self.trials) < 1:
            raise ConfigError("max_sweeps, max_steps and trials must be positive")
        self.domain_box()
        self.noise_model()
        part = self.partition()
        if self.formula:
            atoms = self.formula_ast().atoms()
            labels = set(part.propositions())
            undeclared = labels - atoms - set(self.unused_labels)
            if undeclared:
                raise ConfigError(f"region labels {sorted(undeclared)} are neither in the formula nor unused_labels")
            missing = atoms - labels
            if missing:
                raise ConfigError(f"formula propositions {sorted(missing)} label no region")

"""Axis-aligned boxes, grid partitions of the domain, and the expansion /
reduction operators used when bounding transition probabilities.

Boxes are closed unless ``is_open`` is set; reduced boxes are open. A reduction
that collapses a side yields the :data:`EMPTY` sentinel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np


class GeometryError(ValueError):
    """Raised on dimension mismatches and malformed partitions."""


class _Empty:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EMPTY"

    def __bool__(self) -> bool:
        return False


EMPTY = _Empty()


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray
    is_open: bool = False

    def __post_init__(self):
        lo, hi = _frozen(self.lower), _frozen(self.upper)
        if lo.shape != hi.shape or lo.size == 0:
            raise GeometryError(f"bad box bounds {lo} / {hi}")
        if np.any(lo > hi):
            raise GeometryError(f"lower > upper in box {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains_point(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if self.is_open:
            return bool(np.all(x > self.lower) and np.all(x < self.upper))
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return (
            self.is_open == other.is_open
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self) -> int:
        return hash((self.lower.tobytes(), self.upper.tobytes(), self.is_open))

    def __repr__(self) -> str:
        l, r = ("(", ")") if self.is_open else ("[", "]")
        sides = " x ".join(f"{l}{a:g}, {b:g}{r}" for a, b in zip(self.lower, self.upper))
        return f"Box({sides})"

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["lower"], d["upper"])


BoxLike = Union[Box, _Empty]


def _check_vec(q: Box, c) -> np.ndarray:
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size == 1 and q.dim > 1:
        c = np.full(q.dim, float(c[0]))
    if c.size != q.dim:
        raise GeometryError(f"dimension mismatch: box has {q.dim}, vector has {c.size}")
    if np.any(c < 0):
        raise GeometryError("expansion/reduction constants must be non-negative")
    return c


def expand_box(q: Box, c) -> Box:
    """Closed box ``[lower - c, upper + c]``."""
    c = _check_vec(q, c)
    return Box(q.lower - c, q.upper + c)


def reduce_box(q: Box, c) -> BoxLike:
    """Open box ``(lower + c, upper - c)``; EMPTY if any side is at most ``2 c``."""
    c = _check_vec(q, c)
    lo, hi = q.lower + c, q.upper - c
    if np.any(hi <= lo):
        return EMPTY
    return Box(lo, hi, is_open=True)


def intersects(a: BoxLike, b: BoxLike) -> bool:
    if a is EMPTY or b is EMPTY:
        return False
    if a.dim != b.dim:
        raise GeometryError("dimension mismatch")
    if a.is_open or b.is_open:
        return bool(np.all(a.lower < b.upper) and np.all(b.lower < a.upper))
    return bool(np.all(a.lower <= b.upper) and np.all(b.lower <= a.upper))


def contained_in(a: BoxLike, b: BoxLike) -> bool:
    if b is EMPTY:
        return False
    if a is EMPTY:
        return True
    if a.dim != b.dim:
        raise GeometryError("dimension mismatch")
    if b.is_open:
        return bool(np.all(a.lower > b.lower) and np.all(a.upper < b.upper))
    return bool(np.all(a.lower >= b.lower) and np.all(a.upper <= b.upper))


@dataclass(frozen=True)
class LabeledRegion:
    box: Box
    label: str


@dataclass(frozen=True, eq=False)
class Partition:
    """Uniform grid over ``domain``. Cell ``i`` for ``i < n_cells`` is a box;
    ``unsafe_index == n_cells`` stands for everything outside the domain."""

    domain: Box
    step: np.ndarray
    counts: tuple
    labels: tuple = field(repr=False)  # one frozenset per cell

    def __post_init__(self):
        object.__setattr__(self, "step", _frozen(self.step))
        lo = self.domain.lower
        grids = [lo[i] + self.step[i] * np.arange(self.counts[i]) for i in range(self.dim)]
        mesh = np.meshgrid(*grids, indexing="ij")
        cell_lo = np.stack([m.reshape(-1) for m in mesh], axis=1)
        cell_hi = cell_lo + self.step
        # the last cell in each direction ends exactly on the domain face
        for i in range(self.dim):
            last = np.isclose(cell_hi[:, i], self.domain.upper[i], rtol=0, atol=1e-9 * self.step[i])
            cell_hi[last, i] = self.domain.upper[i]
        cell_lo.flags.writeable = False
        cell_hi.flags.writeable = False
        # per-axis upper faces, for point location
        strides = np.cumprod((1,) + tuple(self.counts[::-1]))[::-1][1:]
        edges = tuple(cell_hi[np.arange(self.counts[i]) * strides[i], i].copy() for i in range(self.dim))
        object.__setattr__(self, "_upper_edges", edges)
        object.__setattr__(self, "cell_lower", cell_lo)
        object.__setattr__(self, "cell_upper", cell_hi)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def unsafe_index(self) -> int:
        return self.n_cells

    @property
    def n_states(self) -> int:
        return self.n_cells + 1

    def cell(self, i: int) -> Box:
        if not 0 <= i < self.n_cells:
            raise IndexError(f"cell {i} out of range")
        return Box(self.cell_lower[i], self.cell_upper[i])

    @property
    def cells(self) -> list:
        return [self.cell(i) for i in range(self.n_cells)]

    def label(self, i: int) -> frozenset:
        if i == self.unsafe_index:
            return frozenset()
        return self.labels[i]

    def propositions(self) -> list:
        return sorted(set().union(*self.labels)) if self.labels else []

    def locate(self, x) -> int:
        """Cell index of ``x``; boundary ties go to the smallest index.
        Returns ``unsafe_index`` outside the domain."""
        x = np.asarray(x, dtype=float)
        if not self.domain.contains_point(x):
            return self.unsafe_index
        idx = tuple(int(np.searchsorted(e, xi, side="left")) for e, xi in zip(self._upper_edges, x))
        return int(np.ravel_multi_index(idx, self.counts))

    def cell_centers(self) -> np.ndarray:
        return 0.5 * (self.cell_lower + self.cell_upper)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "step": self.step.tolist(),
            "counts": list(self.counts),
            "unsafe_index": self.unsafe_index,
            "cells": [
                {"lower": self.cell_lower[i].tolist(), "upper": self.cell_upper[i].tolist(),
                 "labels": sorted(self.labels[i])}
                for i in range(self.n_cells)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        labels = tuple(frozenset(c["labels"]) for c in d["cells"])
        return cls(Box.from_dict(d["domain"]), np.array(d["step"]), tuple(d["counts"]), labels)

    @classmethod
    def loads(cls, text: str) -> "Partition":
        return cls.from_dict(json.loads(text))


def _grid_count(length: float, step: float) -> int:
    k = length / step
    n = int(round(k))
    if n < 1 or not math.isclose(k, n, rel_tol=0, abs_tol=1e-9 * max(1.0, k)):
        raise GeometryError(f"domain length {length} is not a multiple of step {step}")
    return n


def build_partition(domain: Box, regions: Sequence[LabeledRegion], grid_step) -> Partition:
    step = np.asarray(grid_step, dtype=float).reshape(-1)
    if step.size == 1:
        step = np.full(domain.dim, float(step[0]))
    if step.size != domain.dim:
        raise GeometryError("grid step dimension mismatch")
    if np.any(step <= 0):
        raise GeometryError("grid step must be positive")
    counts = tuple(_grid_count(w, s) for w, s in zip(domain.widths, step))

    for r in regions:
        if r.box.dim != domain.dim:
            raise GeometryError(f"region {r.label!r} has wrong dimension")
        if not contained_in(r.box, domain):
            raise GeometryError(f"region {r.label!r} is not inside the domain")
        for bound in (r.box.lower, r.box.upper):
            k = (bound - domain.lower) / step
            if not np.allclose(k, np.round(k), rtol=0, atol=1e-9):
                raise GeometryError(f"region {r.label!r} is not aligned with the grid")

    tmp = Partition(domain, step, counts, tuple(frozenset() for _ in range(int(np.prod(counts)))))
    tol = 1e-9 * step
    labels = []
    for i in range(tmp.n_cells):
        lo, hi = tmp.cell_lower[i], tmp.cell_upper[i]
        names = {
            r.label for r in regions
            if np.all(lo >= r.box.lower - tol) and np.all(hi <= r.box.upper + tol)
        }
        labels.append(frozenset(names))
    return Partition(domain, step, counts, tuple(labels))


def regions_from_spec(items: Iterable[dict]) -> list:
    """``[{"label": "des", "lower": [...], "upper": [...]}, ...]`` -> regions."""
    return [LabeledRegion(Box(d["lower"], d["upper"]), d["label"]) for d in items]

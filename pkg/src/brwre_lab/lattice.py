"""Dense sub-probability vectors on a lattice and their exact propagation."""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .errors import LatticeMismatch

MASS_TOL = 1e-12


def _same_step(a: float, b: float) -> None:
    if abs(a - b) > 1e-12 * max(abs(a), abs(b)):
        raise LatticeMismatch("lattice steps differ", left=a, right=b)


class LatticeDistribution:
    """Masses on lattice indices offset, offset+1, ..., stored densely."""

    __slots__ = ("lattice_step", "offset", "masses")

    def __init__(self, lattice_step: float, offset: int, masses):
        m = np.asarray(masses, dtype=float)
        if m.ndim != 1:
            raise ValueError("masses must be one-dimensional")
        if np.any(m < 0):
            raise ValueError("masses must be non-negative")
        nz = np.nonzero(m)[0]
        if nz.size == 0:
            offset, m = 0, np.zeros(0)
        else:
            offset, m = offset + int(nz[0]), m[nz[0]:nz[-1] + 1]
        m = m.copy()
        m.setflags(write=False)
        self.lattice_step = float(lattice_step)
        self.offset = int(offset)
        self.masses = m

    @classmethod
    def delta(cls, lattice_step: float, x: int = 0) -> "LatticeDistribution":
        return cls(lattice_step, x, [1.0])

    @classmethod
    def from_dict(cls, lattice_step: float, d: Mapping[int, float]) -> "LatticeDistribution":
        if not d:
            return cls(lattice_step, 0, [])
        lo, hi = min(d), max(d)
        arr = np.zeros(hi - lo + 1)
        for k, v in d.items():
            arr[k - lo] += v
        return cls(lattice_step, lo, arr)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.masses.size)

    @property
    def max_index(self) -> int | None:
        return None if self.masses.size == 0 else self.offset + self.masses.size - 1

    def total(self) -> float:
        return math.fsum(self.masses)

    def mean(self) -> float:
        t = self.total()
        return math.fsum(self.lattice_step * self.support * self.masses) / t

    def to_dict(self) -> dict[int, float]:
        return {int(k): float(v) for k, v in zip(self.support, self.masses) if v > 0}

    def get(self, x: int) -> float:
        i = x - self.offset
        return float(self.masses[i]) if 0 <= i < self.masses.size else 0.0

    def tv_distance(self, other: "LatticeDistribution") -> float:
        _same_step(self.lattice_step, other.lattice_step)
        keys = set(self.to_dict()) | set(other.to_dict())
        return 0.5 * math.fsum(abs(self.get(k) - other.get(k)) for k in keys)

    def __repr__(self):
        return f"LatticeDistribution(step={self.lattice_step}, {self.to_dict()})"


class StepMeasure(LatticeDistribution):
    """One-step law of the walk; `validate` enforces mass 1 and mean 0."""

    __slots__ = ()

    def __init__(self, lattice_step: float, offset: int, masses, validate: bool = False):
        super().__init__(lattice_step, offset, masses)
        if validate:
            if abs(self.total() - 1.0) > MASS_TOL:
                raise ValueError("step measure mass must be 1")
            if abs(self.mean()) > MASS_TOL:
                raise ValueError("step measure mean must be 0")

    @classmethod
    def from_dict(cls, lattice_step: float, d: Mapping[int, float], validate: bool = False) -> "StepMeasure":
        lo, hi = min(d), max(d)
        arr = np.zeros(hi - lo + 1)
        for k, v in d.items():
            arr[k - lo] += v
        return cls(lattice_step, lo, arr, validate)

    @property
    def max_down(self) -> int:
        """Largest downward jump in lattice units (0 if none)."""
        return max(0, -self.offset)


def propagate(dist: LatticeDistribution, step: StepMeasure) -> LatticeDistribution:
    _same_step(dist.lattice_step, step.lattice_step)
    if dist.masses.size == 0:
        return dist
    return LatticeDistribution(dist.lattice_step, dist.offset + step.offset,
                               np.convolve(dist.masses, step.masses))


def killed_propagate(dist: LatticeDistribution, step: StepMeasure, barrier_y: int):
    """One step of the walk killed when y + S < 0.

    Returns (survivor, E[overshoot; killed now], killed mass) where the
    overshoot of a killed path is -(y + S) in real units.
    """
    moved = propagate(dist, step)
    if moved.masses.size == 0:
        return moved, 0.0, 0.0
    cut = -barrier_y - moved.offset  # array index of the first surviving site
    if cut <= 0:
        return moved, 0.0, 0.0
    dead = moved.masses[:cut]
    depth = barrier_y + moved.offset + np.arange(dead.size)  # y + x < 0
    overshoot = math.fsum(-moved.lattice_step * depth * dead)
    killed = math.fsum(dead)
    survivor = LatticeDistribution(moved.lattice_step, moved.offset + cut, moved.masses[cut:])
    return survivor, overshoot, killed

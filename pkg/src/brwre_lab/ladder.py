"""Ladder height laws of a homogeneous mean-zero lattice walk.

For a walk with bounded jumps the strict descending height H and the weak
ascending height H+ take finitely many values.  Their generating functions
factor 1 - φ(z) = (1 - E z^{H+})(1 - E z^{-H}); the descending factor is
fixed by the roots of z^m (1 - φ(z)) inside the unit disc, and the
ascending factor follows by exact polynomial division.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from math import gcd

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ContractViolation, ValidationError
from .lattice import StepMeasure


@dataclass(frozen=True)
class LadderLaws:
    descending: tuple[float, ...]  # P(H = h), h = 1..len
    ascending: tuple[float, ...]   # P(H+ = h), h = 0..len-1

    @property
    def mean_descending(self) -> float:
        return math.fsum((h + 1) * p for h, p in enumerate(self.descending))

    def u_minus(self, x_max: int) -> np.ndarray:
        """Renewal masses Σ_k P(H_1+...+H_k = j), j = 0..x_max (k = 0 included)."""
        q = np.asarray(self.descending)
        u = np.zeros(x_max + 1)
        u[0] = 1.0
        for j in range(1, x_max + 1):
            h = min(j, q.size)
            u[j] = math.fsum(q[:h] * u[j - 1::-1][:h])
        return u

    def v_plus(self, x_max: int) -> np.ndarray:
        """Renewal masses Σ_{n>=0} P(H+_1+...+H+_n = j), j = 0..x_max."""
        p = np.asarray(self.ascending)
        v = np.zeros(x_max + 1)
        scale = 1.0 / (1.0 - p[0])
        v[0] = scale
        for j in range(1, x_max + 1):
            h = min(j, p.size - 1)
            v[j] = scale * math.fsum(p[1:h + 1] * v[j - 1::-1][:h])
        return v


def _scaled(step: StepMeasure):
    supp = [int(k) for k, m in zip(step.support, step.masses) if m > 0]
    g = 0
    for k in supp:
        g = gcd(g, abs(k))
    return supp, max(g, 1)


@lru_cache(maxsize=64)
def _laws_cached(items: tuple[tuple[int, float], ...]) -> LadderLaws:
    d = dict(items)
    lo, hi = min(d), max(d)
    m, up = -lo, hi
    if m <= 0 or up <= 0:
        raise ValidationError("ladder laws need both upward and downward steps")
    # coefficients of z^m (1 - φ(z)) in increasing powers
    c = np.zeros(m + up + 1)
    c[m] = 1.0
    for k, p in d.items():
        c[m + k] -= p
    quot, rem = P.polydiv(c, [1.0, -2.0, 1.0])
    if np.max(np.abs(rem)) > 1e-10:
        raise ContractViolation("z = 1 is not a double root: step measure is not mean-zero")
    roots = P.polyroots(quot) if quot.size > 1 else np.zeros(0)
    inner = roots[np.abs(roots) < 1.0]
    if inner.size != m - 1:
        raise ContractViolation("unexpected number of roots inside the unit disc",
                                expected=m - 1, found=int(inner.size))
    # (1 - w) Π (1 - z_i w) = 1 - Σ q_h w^h
    poly_w = np.array([1.0, -1.0], dtype=complex)
    for r in inner:
        poly_w = P.polymul(poly_w, np.array([1.0, -r]))
    desc = -poly_w[1:].real
    # Q(z) = z^m (1 - Σ q_h z^-h), increasing powers
    qz = np.zeros(m + 1)
    qz[m] = 1.0
    for h, q in enumerate(desc, start=1):
        qz[m - h] -= q
    asc_poly, rem2 = P.polydiv(c, qz)
    if np.max(np.abs(rem2)) > 1e-10:
        raise ContractViolation("Wiener-Hopf division left a remainder", remainder=float(np.max(np.abs(rem2))))
    asc = -asc_poly.copy()
    asc[0] += 1.0
    if desc.min() < -1e-12 or asc.min() < -1e-12:
        raise ContractViolation("negative ladder probability")
    desc = np.clip(desc, 0.0, None)
    asc = np.clip(asc, 0.0, None)
    if abs(desc.sum() - 1.0) > 1e-10 or abs(asc.sum() - 1.0) > 1e-10:
        raise ContractViolation("ladder laws do not sum to one")
    return LadderLaws(tuple(float(x) for x in desc / desc.sum()), tuple(float(x) for x in asc / asc.sum()))


def ladder_laws(step: StepMeasure) -> LadderLaws:
    """Exact ladder height laws (in lattice units) of a mean-zero walk."""
    supp, g = _scaled(step)
    items = tuple((k // g, float(step.get(k))) for k in supp)
    base = _laws_cached(items)
    if g == 1:
        return base
    desc = np.zeros(g * len(base.descending))
    desc[g - 1::g] = base.descending
    asc = np.zeros(g * (len(base.ascending) - 1) + 1)
    asc[::g] = base.ascending
    return LadderLaws(tuple(float(x) for x in desc), tuple(float(x) for x in asc))

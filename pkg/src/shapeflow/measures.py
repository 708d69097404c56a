"""Capacitary measures and torsion fields on a grid.

A capacitary measure is stored as one nonnegative density per cell plus an
explicit flag for the cells where it is ``+inf``.  The boundary ring is always
flagged.  Shape masks embed as measures that are infinite off the mask; when
the mask carries a level function the embedding also places a finite density on
the cells next to the wall, which is how the sub-cell wall position enters the
5-point operator without breaking its symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolationError
from .grid import GridDomain, ScalarGridField, ShapeMask, _frozen, check_same_domain

__all__ = [
    "CapacitaryMeasure",
    "TorsionField",
    "as_measure",
    "discrete_laplacian",
    "wall_fractions",
    "EPS_X",
]

# X-membership tolerance on 1 + lap(w)
EPS_X = 1e-8
# wall fractions below this are clamped to keep the operator well conditioned
THETA_MIN = 1e-3


@dataclass(frozen=True, eq=False)
class CapacitaryMeasure:
    """Cell densities in ``[0, +inf]``.

    ``values`` holds the finite densities (zero where ``infinite`` is set).
    """

    domain: GridDomain
    values: np.ndarray
    infinite: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        inf = np.asarray(self.infinite, dtype=bool) | ~self.domain.interior
        if vals.shape != self.domain.shape or inf.shape != self.domain.shape:
            raise ValueError("measure arrays do not match the grid")
        if np.isnan(vals).any():
            raise ValueError("measure densities must not be NaN")
        inf = inf | np.isposinf(vals)
        vals = np.where(inf, 0.0, vals)
        if (vals < 0).any():
            raise ValueError("measure densities must be nonnegative")
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "infinite", _frozen(inf))

    @classmethod
    def from_array(cls, domain: GridDomain, arr) -> "CapacitaryMeasure":
        arr = np.asarray(arr, dtype=float)
        return cls(domain, np.where(np.isposinf(arr), 0.0, arr), np.isposinf(arr))

    @classmethod
    def constant(cls, domain: GridDomain, c: float) -> "CapacitaryMeasure":
        return cls(domain, np.full(domain.shape, float(c)), np.zeros(domain.shape, dtype=bool))

    @classmethod
    def infinite_outside(cls, mask: ShapeMask) -> "CapacitaryMeasure":
        """The plain embedding: zero on the mask, ``+inf`` elsewhere."""
        return cls(mask.domain, np.zeros(mask.domain.shape), ~mask.inside)

    def as_array(self) -> np.ndarray:
        return np.where(self.infinite, np.inf, self.values)

    @property
    def finite(self) -> np.ndarray:
        return ~self.infinite

    def __eq__(self, other):
        if not isinstance(other, CapacitaryMeasure):
            return NotImplemented
        return (
            self.domain == other.domain
            and np.array_equal(self.infinite, other.infinite)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def leq(self, other: "CapacitaryMeasure") -> bool:
        """Cell-wise order ``self <= other`` (classical order of measures)."""
        check_same_domain(self.domain, other.domain)
        ok = other.infinite | (self.finite & (self.values <= other.values))
        return bool(np.all(ok))


def wall_fractions(mask: ShapeMask):
    """Distance from each inside cell to the wall, per outside neighbour.

    Yields ``(axis, step, cells, theta)`` where ``cells`` marks inside cells
    whose neighbour at offset ``step`` along ``axis`` is outside and ``theta``
    (same shape as the grid) is the wall distance in units of ``h``.  Without a
    level function the wall sits on the neighbour's centre (``theta = 1``).
    """
    inside = mask.inside
    level = mask.level
    for axis in range(inside.ndim):
        for step in (-1, 1):
            nbr_inside = np.roll(inside, -step, axis=axis)
            cells = inside & ~nbr_inside
            theta = np.ones(inside.shape)
            if level is not None:
                nbr_level = np.roll(level, -step, axis=axis)
                cut = cells & (nbr_level > 0) & (level < 0)
                theta[cut] = level[cut] / (level[cut] - nbr_level[cut])
                theta = np.clip(theta, THETA_MIN, 1.0)
            yield axis, step, cells, theta


def as_measure(mask: ShapeMask) -> CapacitaryMeasure:
    """Embed a mask as a measure.

    Off the mask the measure is ``+inf``.  On cells next to the wall it adds
    ``(1/theta - 1)/h^2`` per outside neighbour, which turns plain elimination
    into the symmetric ghost-value treatment of a wall at distance ``theta*h``.
    """
    h2 = mask.domain.h ** 2
    dens = np.zeros(mask.domain.shape)
    if mask.level is not None:
        for _, _, cells, theta in wall_fractions(mask):
            dens[cells] += (1.0 / theta[cells] - 1.0) / h2
    return CapacitaryMeasure(mask.domain, dens, ~mask.inside)


def discrete_laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """5-point (3-point in 1D) Laplacian; zero on the ring, values beyond the array read as 0."""
    v = np.asarray(values, dtype=float)
    padded = np.pad(v, 1)
    out = -2 * v.ndim * v
    for axis in range(v.ndim):
        lo = [slice(1, -1)] * v.ndim
        hi = [slice(1, -1)] * v.ndim
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        out = out + padded[tuple(lo)] + padded[tuple(hi)]
    out = out / h**2
    ring = ~np.pad(np.ones(tuple(n - 2 for n in v.shape), dtype=bool), 1)
    out[ring] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class TorsionField(ScalarGridField):
    """Grid function in the convex set ``X = {w >= 0, 1 + lap w >= 0, w = 0 on the ring}``."""

    def __post_init__(self):
        super().__post_init__()
        ring = ~self.domain.interior
        if np.any(self.values[ring] != 0.0):
            raise InvariantViolationError("torsion fields vanish on the boundary ring")

    @classmethod
    def from_values(cls, domain: GridDomain, values, eps: float = EPS_X, check: bool = True):
        vals = np.array(values, dtype=float)
        vals[~domain.interior] = 0.0
        field = cls(domain, vals)
        if check:
            field.check(eps)
        return field

    def violation(self) -> float:
        """Largest violation of the X constraints (0 for members)."""
        w = self.values
        sub = 1.0 + discrete_laplacian(w, self.domain.h)
        inner = self.domain.interior
        neg_w = float(max(0.0, -w.min()))
        neg_sub = float(max(0.0, -sub[inner].min())) if inner.any() else 0.0
        return max(neg_w, neg_sub)

    def check(self, eps: float = EPS_X) -> "TorsionField":
        v = self.violation()
        if v > eps:
            raise InvariantViolationError(f"field leaves X by {v:.3e} (tolerance {eps:.1e})")
        return self

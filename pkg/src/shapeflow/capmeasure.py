"""The chart ``mu <-> w_mu`` between capacitary measures and the convex set X.

Torsion fields are the coordinates: the gamma-distance is the L2 distance of
torsions, geodesics are straight segments in ``w``, and convexity of a
functional is convexity along those segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainViolationError, InvariantViolationError
from .functionals import FunctionalSpec
from .grid import Ball, GridDomain, check_same_domain, rasterize
from .measures import EPS_X, CapacitaryMeasure, TorsionField, as_measure, discrete_laplacian
from .pde import torsion

__all__ = [
    "CapacitaryMeasure",
    "TorsionField",
    "FunctionalSpec",
    "measure_of_torsion",
    "gamma_distance",
    "geodesic_interpolate",
    "convexity_probe",
    "ConvexityReport",
    "remark_case_ordering",
    "OrderingReport",
    "compare_measures",
    "ordering_threshold",
    "W_FLOOR_REL",
]

W_FLOOR_REL = 1e-9


def measure_of_torsion(w: TorsionField, w_floor: float | None = None) -> CapacitaryMeasure:
    """Invert the torsion map: ``mu = (1 + lap_h w)/w``, ``+inf`` where ``w <= w_floor``.

    ``w_floor`` defaults to ``1e-9 * max(w)``.  Values of ``1 + lap_h w`` that
    are negative within the membership tolerance are read as 0.
    """
    v = w.violation()
    if v > EPS_X:
        raise InvariantViolationError(f"field leaves X by {v:.3e}")
    vals = w.values
    if w_floor is None:
        w_floor = W_FLOOR_REL * float(vals.max(initial=0.0))
    pos = (vals > w_floor) & w.domain.interior
    dens = np.zeros(w.domain.shape)
    sub = np.maximum(1.0 + discrete_laplacian(vals, w.domain.h), 0.0)
    dens[pos] = sub[pos] / vals[pos]
    return CapacitaryMeasure(w.domain, dens, ~pos)


def _torsion_of(x) -> TorsionField:
    if isinstance(x, TorsionField):
        return x
    return torsion(x)


def gamma_distance(a, b) -> float:
    """``||w_a - w_b||`` in L2(D) for measures, masks or torsion fields."""
    wa, wb = _torsion_of(a), _torsion_of(b)
    check_same_domain(wa.domain, wb.domain)
    diff = wa.values - wb.values
    return float(np.sqrt(np.sum(diff * diff) * wa.domain.cell_volume))


def _segment(w0: TorsionField, w1: TorsionField, t: float) -> TorsionField:
    check_same_domain(w0.domain, w1.domain)
    return TorsionField.from_values(w0.domain, (1 - t) * w0.values + t * w1.values, check=False)


def geodesic_interpolate(mu0, mu1, t: float) -> CapacitaryMeasure:
    """Point at parameter ``t`` of the constant-speed geodesic from ``mu0`` to ``mu1``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    w0, w1 = _torsion_of(mu0), _torsion_of(mu1)
    return measure_of_torsion(_segment(w0, w1, t))


@dataclass
class ConvexityReport:
    """Functional values along a sampled geodesic.

    ``modulus`` is the largest ``lam`` with
    ``F(t) <= (1-t) F(0) + t F(1) - lam/2 t(1-t) d^2`` at every sample;
    ``defect`` is the largest excess of ``F(t)`` over the chord.
    """

    t: np.ndarray
    values: np.ndarray
    modulus: float
    defect: float
    distance: float
    bijection_error: float
    inequality_holds: bool


def convexity_probe(F: FunctionalSpec, mu0, mu1, samples: int = 11, declared: float | None = None):
    """Sample ``F`` along the geodesic and report its apparent convexity modulus.

    ``bijection_error`` compares ``J(w(t))`` with ``F`` evaluated on the torsion
    of the interpolated measure, i.e. after a full round trip through the chart.
    ``inequality_holds`` checks the declared modulus (the catalog's, unless
    ``declared`` is given); it is ``True`` when nothing is declared.
    """
    if samples < 3:
        raise ValueError("need at least 3 samples")
    w0, w1 = _torsion_of(mu0), _torsion_of(mu1)
    d = gamma_distance(w0, w1)
    ts = np.linspace(0.0, 1.0, samples)
    vals = np.empty(samples)
    err = 0.0
    for i, t in enumerate(ts):
        wt = _segment(w0, w1, t)
        vals[i] = F.value(wt)
        back = torsion(measure_of_torsion(wt))
        err = max(err, abs(F.value(back) - vals[i]))
    chord = (1 - ts) * vals[0] + ts * vals[-1]
    gap = chord - vals
    inner = slice(1, -1)
    weights = ts[inner] * (1 - ts[inner]) * d * d
    if d > 0:
        modulus = float(np.min(2 * gap[inner] / weights))
    else:
        modulus = float("inf")
    lam = F.convexity_modulus if declared is None else declared
    if lam is None:
        holds = True
    else:
        slack = 1e-10 * max(1.0, np.abs(vals).max())
        holds = bool(np.all(vals[inner] <= chord[inner] - 0.5 * lam * weights + slack))
    return ConvexityReport(ts, vals, modulus, float(max(0.0, (-gap).max())), d, err, holds)


@dataclass
class OrderingReport:
    """Torsions of the two measures and how they compare cell by cell."""

    R: float
    w1: TorsionField
    w2: TorsionField
    torsions_ordered: bool  # w2 >= w1 - tol everywhere
    measures_ordered: bool  # mu1 <= mu2 everywhere
    min_gap: float  # min of w2 - w1
    cells_violating: int


def _remark_domain() -> GridDomain:
    return GridDomain.cube(2.0, 128, 2)


def remark_case_ordering(R: float, domain: GridDomain | None = None, tol: float = 1e-9) -> OrderingReport:
    """Compare ``mu1 = inf off B(0,1)`` with ``mu2 = 1 on B(0,1) + inf off B(0,R)``.

    For ``R`` large the torsion of ``mu2`` dominates the torsion of ``mu1``
    although ``mu1 <= mu2`` fails on the annulus ``1 < |x| < R``.
    """
    dom = domain or _remark_domain()
    if not R > 1.0:
        raise DomainViolationError("R must exceed 1")
    if R > dom.inradius(np.zeros(dom.dim)) + 1e-12:
        raise DomainViolationError(f"R={R} exceeds the inradius of the domain")
    ball = rasterize(Ball(np.zeros(dom.dim), 1.0), dom)
    big = rasterize(Ball(np.zeros(dom.dim), R), dom)
    mu1 = as_measure(ball)
    base = as_measure(big)
    mu2 = CapacitaryMeasure(dom, base.values + ball.inside.astype(float), base.infinite)
    return compare_measures(mu1, mu2, R=R, tol=tol)


def compare_measures(mu1: CapacitaryMeasure, mu2: CapacitaryMeasure, R: float = float("nan"), tol: float = 1e-9):
    w1, w2 = torsion(mu1), torsion(mu2)
    gap = w2.values - w1.values
    bad = gap < -tol
    return OrderingReport(R, w1, w2, not bool(bad.any()), mu1.leq(mu2), float(gap.min()), int(bad.sum()))


def ordering_threshold(lo: float, hi: float, domain: GridDomain | None = None, iters: int = 30) -> float:
    """Bisect for the smallest ``R`` in ``[lo, hi]`` at which the torsions become ordered."""
    if remark_case_ordering(lo, domain).torsions_ordered:
        return lo
    if not remark_case_ordering(hi, domain).torsions_ordered:
        raise ValueError("torsions are not ordered at the upper end of the bracket")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if remark_case_ordering(mid, domain).torsions_ordered:
            hi = mid
        else:
            lo = mid
    return hi

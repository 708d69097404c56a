"""Euclidean projection onto the discrete torsion set X.

X is the polyhedron ``{w >= 0, 1 + lap_h w >= 0 on interior cells, w = 0 on
the ring}``.  After scaling by ``h^2`` the second family reads ``S w <= h^2``
with ``S = h^2 (-lap_h)`` (stencil ``2d`` on the diagonal, ``-1`` off it), so the
projection is the quadratic program

    min 1/2 ||w - v||^2   s.t.  w >= 0,  S w <= h^2.

It is solved by a primal-dual active-set iteration.  For fixed active sets
``Z = {w = 0}`` and ``T = {S w = h^2}`` the KKT system reduces to one sparse
SPD solve for the multipliers ``beta`` of ``T``; the sets are then updated from
the sign of ``alpha - c w`` and ``beta + c (S w - h^2)``.  If the sets start to
cycle, the bound-constrained dual ``max_{beta >= 0} -1/2 |(v - S beta)_+|^2 -
h^2 sum(beta)`` is solved with L-BFGS-B and the active-set iteration restarts
from the resulting sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.optimize import minimize

from .errors import IterationLimitError
from .grid import GridDomain, ScalarGridField
from .measures import EPS_X, TorsionField
from .pde import spd_factor

__all__ = ["ProjectionResult", "project_onto_X", "projection_with_report", "ActiveSets"]

PROJ_TOL = 1e-9


@dataclass(frozen=True)
class ActiveSets:
    """Active constraint sets over the interior cells, reused as a warm start."""

    zero: np.ndarray
    top: np.ndarray


@dataclass
class ProjectionResult:
    field: TorsionField
    kkt_residual: float
    iterations: int
    active: ActiveSets
    used_fallback: bool


def _scaled_stencil(domain: GridDomain):
    interior = domain.interior
    n_in = tuple(s - 2 for s in domain.shape)
    mats = []
    d = domain.dim
    for axis in range(d):
        m = n_in[axis]
        lap1 = sps.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
        parts = [sps.identity(n_in[a]) if a != axis else lap1 for a in range(d)]
        k = parts[0]
        for p in parts[1:]:
            k = sps.kron(k, p)
        mats.append(k)
    S = mats[0]
    for m in mats[1:]:
        S = S + m
    return S.tocsr(), interior


def _kkt(S, v, w, alpha, beta, h2):
    Sw = S @ w
    primal = max(0.0, float((-w).max(initial=0.0)), float((Sw - h2).max(initial=-np.inf)))
    dual = max(0.0, float((-alpha).max(initial=0.0)), float((-beta).max(initial=0.0)))
    comp = max(float(np.abs(alpha * w).max(initial=0.0)), float(np.abs(beta * (Sw - h2)).max(initial=0.0)))
    stat = float(np.abs(w - v - alpha + S @ beta).max(initial=0.0))
    return max(primal, dual, comp, stat)


def _solve_sets(S, v, Z, T, h2):
    n = v.size
    F = ~Z
    w = np.zeros(n)
    beta = np.zeros(n)
    if T.any():
        M = S[T][:, F]
        K = (M @ M.T).tocsc()
        rhs = M @ v[F] - h2
        beta[T] = spd_factor(K).solve(rhs)
    w[F] = v[F] - (S[F][:, T] @ beta[T] if T.any() else 0.0)
    alpha = w - v + S @ beta
    alpha[F] = 0.0
    return w, alpha, beta


def _dual_fallback(S, v, h2, beta0):
    def fun(beta):
        p = v - S @ beta
        wp = np.maximum(p, 0.0)
        return 0.5 * wp @ wp + h2 * beta.sum(), -(S @ wp) + h2

    res = minimize(fun, beta0, jac=True, method="L-BFGS-B", bounds=[(0, None)] * v.size,
                   options={"maxiter": 20000, "ftol": 1e-15, "gtol": 1e-13})
    beta = res.x
    p = v - S @ beta
    return p <= 0, beta > 0


def projection_with_report(
    v, tol: float = PROJ_TOL, warm: ActiveSets | None = None, max_iter: int = 200
) -> ProjectionResult:
    """Project ``v`` onto X and report the KKT residual.

    ``tol`` bounds the scaled KKT residual (max-norm of primal, dual,
    complementarity and stationarity defects in units of ``w``).
    """
    dom = v.domain
    vals = np.asarray(v.values, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("cannot project a non-finite field")
    h2 = dom.h**2
    S, interior = _scaled_stencil(dom)
    vin = vals[interior]

    candidate = np.where(interior, vals, 0.0)
    if np.all(vals[~interior] == 0.0):
        tf = TorsionField.from_values(dom, candidate, check=False)
        if tf.violation() == 0.0:
            zero = np.zeros(vin.size, dtype=bool)
            return ProjectionResult(tf, 0.0, 0, ActiveSets(zero, zero.copy()), False)

    if warm is not None and warm.zero.size == vin.size:
        Z, T = warm.zero.copy(), warm.top.copy()
    else:
        Z = vin <= 0
        T = (S @ np.maximum(vin, 0.0) > h2) & ~Z
    scale = max(1.0, float(np.abs(vin).max()))
    seen = set()
    used_fallback = False
    c = 1.0
    it = 0
    while True:
        it += 1
        w, alpha, beta = _solve_sets(S, vin, Z, T, h2)
        ind_z = alpha - c * w
        ind_t = beta + c * (S @ w - h2)
        Zn = ind_z > 0
        Tn = ind_t > 0
        both = Zn & Tn
        Zn[both] = ind_z[both] >= ind_t[both]
        Tn[both] = ~Zn[both]
        if np.array_equal(Zn, Z) and np.array_equal(Tn, T):
            break
        # degenerate cells (multiplier and slack both ~0) may flip forever
        if _kkt(S, vin, w, alpha, beta, h2) <= 1e-3 * tol * scale:
            break
        key = (Zn.tobytes(), Tn.tobytes())
        if key in seen or it >= max_iter:
            if used_fallback:
                res = _kkt(S, vin, w, alpha, beta, h2)
                raise IterationLimitError("active-set projection failed to settle", res)
            used_fallback = True
            Zn, Tn = _dual_fallback(S, vin, h2, np.maximum(beta, 0.0))
            seen.clear()
            it = 0
        seen.add(key)
        Z, T = Zn, Tn

    res = _kkt(S, vin, w, alpha, beta, h2)
    if res > tol * scale:
        raise IterationLimitError("projection KKT residual above tolerance", res)

    # round-off cleanup: exact zeros on Z, then a relative shrink that removes
    # any leftover excess in S w <= h^2 (of the order of machine precision)
    w[Z] = 0.0
    w = np.maximum(w, 0.0)
    excess = float((S @ w).max(initial=0.0)) / h2 - 1.0
    if excess > 0:
        w = w / (1.0 + excess)
    out = np.zeros(dom.shape)
    out[interior] = w
    field = TorsionField.from_values(dom, out, check=False)
    field.check(EPS_X)
    return ProjectionResult(field, res, it, ActiveSets(Z, T), used_fallback)


def project_onto_X(v: ScalarGridField, tol: float = PROJ_TOL, warm: ActiveSets | None = None) -> TorsionField:
    """L2-nearest point of X to ``v``; returns ``v`` itself when it already lies in X."""
    return projection_with_report(v, tol=tol, warm=warm).field

"""Independent reference computations used by the tests.

Each oracle reaches its answer by a different route from the library code:
brute-force pairwise distances, sine-series (DST) solves, dense matrices built
cell by cell, Bessel-zero bisection and a general-purpose QP solver.
"""

import itertools
import math

import numpy as np
from scipy.fft import dstn
from scipy.special import j0

from shapeflow.flow_shape import evaluate_shape_functional
from shapeflow.grid import distance_transform, erode_complement


def brute_distance(inside, target, h):
    """Distance from every cell centre to the nearest centre with ``target`` set."""
    pts = np.argwhere(target).astype(float)
    out = np.empty(inside.shape)
    if pts.size == 0:
        out[:] = np.inf
        return out
    for idx in np.ndindex(*inside.shape):
        out[idx] = np.sqrt(((pts - np.array(idx, dtype=float)) ** 2).sum(axis=1).min())
    return out * h


def dense_operator(inside, h, c=0.0):
    """``-lap_h + c`` on the inside cells, built entry by entry."""
    cells = [tuple(i) for i in np.argwhere(inside)]
    pos = {cell: k for k, cell in enumerate(cells)}
    d = inside.ndim
    A = np.zeros((len(cells), len(cells)))
    for k, cell in enumerate(cells):
        A[k, k] = 2 * d / h**2 + (c[cell] if np.ndim(c) else c)
        for axis, step in itertools.product(range(d), (-1, 1)):
            nb = list(cell)
            nb[axis] += step
            j = pos.get(tuple(nb))
            if j is not None:
                A[k, j] = -1.0 / h**2
    return A, cells


def dst_box_solve(shape_in, h, c, f=1.0):
    """Solve ``(-lap_h + c) u = f`` on a full box of cells with zero values around it.

    Uses the discrete sine basis, which diagonalizes the Dirichlet 5-point operator.
    """
    f = np.broadcast_to(np.asarray(f, dtype=float), shape_in)
    fh = dstn(f, type=1)
    eig = np.zeros(shape_in)
    for axis, m in enumerate(shape_in):
        k = np.arange(1, m + 1)
        lam = (2 - 2 * np.cos(k * np.pi / (m + 1))) / h**2
        sh = [1] * len(shape_in)
        sh[axis] = m
        eig = eig + lam.reshape(sh)
    uh = fh / (eig + c)
    u = dstn(uh, type=1)
    return u / np.prod([2 * (m + 1) for m in shape_in])


def box_eigenvalues(shape_in, h, k):
    """The ``k`` smallest eigenvalues of the Dirichlet 5-point operator on a box of cells."""
    lams = []
    for axis, m in enumerate(shape_in):
        j = np.arange(1, m + 1)
        lams.append((2 - 2 * np.cos(j * np.pi / (m + 1))) / h**2)
    total = lams[0]
    for lam in lams[1:]:
        total = np.add.outer(total, lam).ravel()
    return np.sort(total)[:k]


def bessel_j0_first_zero():
    """First positive zero of ``J0`` by bisection."""
    lo, hi = 2.0, 3.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if j0(lo) * j0(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def qp_projection(v, h):
    """Projection onto ``{w >= 0, 1 + lap_h w >= 0}`` on interior cells via cvxopt."""
    from cvxopt import matrix, solvers

    interior = np.zeros(v.shape, dtype=bool)
    interior[(slice(1, -1),) * v.ndim] = True
    vin = v[interior]
    n = vin.size
    inside = np.ones(tuple(s - 2 for s in v.shape), dtype=bool)
    A, _ = dense_operator(inside, h)  # A = -lap_h on interior cells
    G = np.vstack([-np.eye(n), A])
    hvec = np.concatenate([np.zeros(n), np.ones(n)])
    solvers.options.update(show_progress=False, abstol=1e-13, reltol=1e-13, feastol=1e-13, maxiters=200)
    sol = solvers.qp(matrix(np.eye(n)), matrix(-vin), matrix(G), matrix(hvec))
    out = np.zeros(v.shape)
    out[interior] = np.array(sol["x"]).ravel()
    return out


def trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def disk_torsion_exact(x, y, s=1.0):
    return np.maximum((s * s - x * x - y * y) / 4.0, 0.0)


def ball_radius_closed_form(R0, d, t, lam1):
    omega = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return (R0 ** (2 * d + 2) + 4 * (d + 1) * lam1 * t / (d * d * omega * omega)) ** (1 / (2 * d + 2))


def brute_hausdorff_step(spec, mask, eps, points=1001):
    """Best erosion depth over a uniform scan of ``[0, max distance]``."""
    dist = distance_transform(mask, "complement").values
    hs = np.linspace(0.0, float(dist[mask.inside].max()), points)
    vals = []
    for h in hs:
        e = erode_complement(mask, h)
        if e.is_empty and spec.kind in ("neg_lambda1", "lambda_k"):
            vals.append(math.inf)
        else:
            vals.append(evaluate_shape_functional(e, spec) + h * h / (2 * eps))
    i = int(np.argmin(vals))
    return hs[i], vals[i], hs[1] - hs[0]

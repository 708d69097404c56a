"""Elliptic solvers on masked grids.

Everything here reduces to the symmetric positive definite matrix
``-lap_h + diag(mu)`` restricted to the cells where ``mu`` is finite; cells
where ``mu = +inf`` (and the boundary ring) are eliminated, so the solution is
zero there.  Masks are first embedded with :func:`shapeflow.measures.as_measure`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.linalg import eigh, eigh_tridiagonal, solve_banded

from .errors import DomainMismatchError, EmptyMaskError, IterationLimitError, ShapeflowError
from .grid import ScalarGridField, ShapeMask, check_same_domain
from .measures import CapacitaryMeasure, TorsionField, as_measure, wall_fractions

__all__ = [
    "DirichletProblemSpec",
    "EigenResult",
    "solve_dirichlet",
    "torsion",
    "principal_eigenpair",
    "eigenvalues",
    "boundary_normal_derivative",
    "RadialDisk",
    "RadialAnnulus",
    "radial_reference",
    "conjugate_gradient",
    "operator",
]

CG_RTOL = 1e-10
EIG_TOL = 1e-8
DENSE_MAX = 64  # operators this small are diagonalized densely
MAX_ITER = 10_000


def _coerce_measure(coefficient) -> CapacitaryMeasure:
    if isinstance(coefficient, ShapeMask):
        return as_measure(coefficient)
    if isinstance(coefficient, CapacitaryMeasure):
        return coefficient
    raise TypeError(f"expected a ShapeMask or CapacitaryMeasure, got {type(coefficient).__name__}")


def operator(measure: CapacitaryMeasure):
    """Sparse ``-lap_h + mu`` on the finite cells.

    Returns the CSR matrix and the boolean array of unknown cells (row order is
    C order over that array).
    """
    dom = measure.domain
    active = measure.finite
    n = int(active.sum())
    index = -np.ones(dom.shape, dtype=np.int64)
    index[active] = np.arange(n)
    h2 = dom.h**2

    rows, cols = [], []
    for axis in range(dom.dim):
        src = [slice(None)] * dom.dim
        dst = [slice(None)] * dom.dim
        src[axis] = slice(0, -1)
        dst[axis] = slice(1, None)
        a, b = index[tuple(src)], index[tuple(dst)]
        both = (a >= 0) & (b >= 0)
        rows += [a[both], b[both]]
        cols += [b[both], a[both]]
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    off = sps.coo_matrix((np.full(rows.size, -1.0 / h2), (rows, cols)), shape=(n, n))
    diag = sps.diags(2 * dom.dim / h2 + measure.values[active])
    return (off + diag).tocsr(), active


def spd_factor(A):
    """Sparse LU of a symmetric positive definite matrix, pivoting on the diagonal."""
    return spla.splu(
        sps.csc_matrix(A),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )


def conjugate_gradient(A, b, x0=None, rtol=CG_RTOL, maxiter=MAX_ITER):
    """Jacobi-preconditioned conjugate gradient.

    Stops once ``||b - A x|| <= rtol * ||b||``.  Returns ``(x, relative_residual)``.

    Raises
    ------
    IterationLimitError
        When ``maxiter`` iterations do not reach the tolerance.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0
    dinv = 1.0 / A.diagonal()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    for _ in range(maxiter):
        if res <= rtol:
            return x, res
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if res <= rtol:
        return x, res
    raise IterationLimitError("conjugate gradient did not converge", res)


@dataclass
class DirichletProblemSpec:
    """Relaxed Dirichlet problem ``-lap u + mu u = f`` with zero outside ``{mu < inf}``."""

    coefficient: object
    rhs: object = 1.0
    tol: float = CG_RTOL
    max_iter: int = MAX_ITER
    method: str = "direct"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("solver tolerance must be positive")
        if self.method not in ("direct", "cg"):
            raise ValueError(f"unknown method {self.method!r}")


def _rhs_values(spec: DirichletProblemSpec, measure: CapacitaryMeasure) -> np.ndarray:
    if isinstance(spec.rhs, ScalarGridField):
        check_same_domain(spec.rhs.domain, measure.domain)
        return spec.rhs.values
    f = np.asarray(spec.rhs, dtype=float)
    if f.ndim == 0:
        if not np.isfinite(f):
            raise ValueError("rhs must be finite")
        return np.full(measure.domain.shape, float(f))
    if f.shape != measure.domain.shape or not np.all(np.isfinite(f)):
        raise ValueError("rhs array must match the grid and be finite")
    return f


def solve_dirichlet(spec: DirichletProblemSpec) -> ScalarGridField:
    """Solve the finite-difference relaxed Dirichlet problem.

    With ``method="direct"`` the system is factorized (sparse LU); with
    ``method="cg"`` it goes through :func:`conjugate_gradient`.  Either way the
    relative residual is checked against ``spec.tol``.
    """
    measure = _coerce_measure(spec.coefficient)
    f = _rhs_values(spec, measure)
    out = np.zeros(measure.domain.shape)
    A, active = operator(measure)
    if A.shape[0] == 0:
        return ScalarGridField(measure.domain, out)
    b = f[active]
    if spec.method == "cg":
        u, _ = conjugate_gradient(A, b, rtol=spec.tol, maxiter=spec.max_iter)
    else:
        u = spd_factor(A).solve(b)
        bnorm = np.linalg.norm(b)
        res = np.linalg.norm(b - A @ u) / bnorm if bnorm > 0 else 0.0
        if res > spec.tol:
            raise IterationLimitError("direct solve lost accuracy", res)
    out[active] = u
    return ScalarGridField(measure.domain, out)


def torsion(x, method: str = "direct", tol: float = CG_RTOL) -> TorsionField:
    """Torsion function ``w = R_mu(1)`` of a measure or a mask."""
    u = solve_dirichlet(DirichletProblemSpec(x, 1.0, tol=tol, method=method))
    vals = np.maximum(u.values, 0.0)  # clears round-off of order 1e-17 near the wall
    return TorsionField.from_values(u.domain, vals, check=False)


# -- eigenvalues -----------------------------------------------------------------


@dataclass
class EigenResult:
    """Smallest eigenpairs of ``-lap_h + mu``; eigenfunctions are L2(D)-normalized."""

    eigenvalues: np.ndarray
    eigenfunctions: list
    residuals: np.ndarray
    iterations: int = 0

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])


def _inverse_iteration(A, k, tol, maxiter, solve, x0=None):
    n = A.shape[0]
    p = min(n, max(2 * k, k + 4))
    rng = np.random.default_rng(12345)
    X = rng.standard_normal((n, p))
    X[:, 0] = 1.0
    if x0 is not None:
        m = min(x0.shape[1], p)
        X[:, :m] = x0[:, :m]
    X, _ = np.linalg.qr(X)
    theta = np.zeros(p)
    res = np.full(k, np.inf)
    for it in range(1, maxiter + 1):
        Y = solve(X)
        Q, _ = np.linalg.qr(Y)
        H = Q.T @ (A @ Q)
        theta, S = eigh(0.5 * (H + H.T))
        X = Q @ S
        R = A @ X[:, :k] - X[:, :k] * theta[:k]
        res = np.linalg.norm(R, axis=0)
        if np.all(res <= tol * np.maximum(1.0, np.abs(theta[:k]))):
            return theta[:k], X[:, :k], res, it
    raise IterationLimitError("inverse iteration did not converge", float(res.max()))


def eigenvalues(
    x,
    k: int = 1,
    tol: float = EIG_TOL,
    max_iter: int = 2000,
    inner: str = "direct",
    x0=None,
) -> EigenResult:
    """The ``k`` smallest Dirichlet eigenvalues of a mask or measure.

    Block inverse iteration with Rayleigh-Ritz: every sweep re-orthogonalizes
    the iterates against each other, which deflates the converged modes.  Inner
    solves use a sparse LU factorization (``inner="direct"``) or conjugate
    gradient (``inner="cg"``).  Residuals are ``||(-lap_h + mu) u - lam u||``
    in L2(D) for unit eigenfunctions and must fall below ``tol * max(1, lam)``.
    """
    if inner not in ("direct", "cg"):
        raise ValueError(f"unknown inner solver {inner!r}")
    measure = _coerce_measure(x)
    A, active = operator(measure)
    n = A.shape[0]
    if n == 0:
        raise EmptyMaskError("eigenvalues of an empty set are undefined")
    if k < 1 or k > n:
        raise ShapeflowError(f"k={k} must satisfy 1 <= k <= number of cells ({n})")

    if n <= DENSE_MAX:
        # tiny operators: a dense symmetric eigensolve is exact and cheaper
        theta, V = eigh(A.toarray())
        lam, X, iters = theta[:k], V[:, :k], 0
        res = np.linalg.norm(A @ X - X * lam, axis=0)
    elif inner == "direct":
        lu = spd_factor(A)
        solve = lu.solve
    else:
        def solve(X):
            return np.column_stack(
                [conjugate_gradient(A, X[:, j], rtol=1e-12)[0] for j in range(X.shape[1])]
            )

    if n > DENSE_MAX:
        if x0 is not None:
            cols = x0 if isinstance(x0, (list, tuple)) else [x0]
            x0 = np.column_stack([np.asarray(getattr(v, "values", v), dtype=float)[active] for v in cols])
        lam, X, res, iters = _inverse_iteration(A, k, tol, max_iter, solve, x0)

    dom = measure.domain
    scale = dom.cell_volume ** -0.5
    funcs = []
    for j in range(k):
        u = np.zeros(dom.shape)
        col = X[:, j] * scale
        if j == 0 and col.sum() < 0:
            col = -col
        u[active] = col
        if j == 0:
            u = np.maximum(u, 0.0) if u.min() > -1e-8 * u.max() else u
        funcs.append(ScalarGridField(dom, u))
    return EigenResult(np.asarray(lam), funcs, np.asarray(res), iters)


def principal_eigenpair(x, **kwargs) -> EigenResult:
    """First eigenvalue with its nonnegative eigenfunction."""
    return eigenvalues(x, k=1, **kwargs)


# -- boundary fluxes ---------------------------------------------------------------


@dataclass
class BoundaryFlux:
    """One entry per face between an inside and an outside cell."""

    positions: np.ndarray  # wall location, shape (m, d)
    normals: np.ndarray  # outward unit normal, shape (m, d)
    values: np.ndarray  # |du/dn| estimate
    lengths: np.ndarray  # face measure h^(d-1)
    cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))


def boundary_normal_derivative(u: ScalarGridField, mask: ShapeMask) -> BoundaryFlux:
    """One-sided normal derivative ``|u(inside)| / (theta h)`` on every wall face.

    ``theta`` is the wall distance in cells (1 when the mask has no level
    function, so the wall sits on the outside cell's centre).
    """
    if u.domain != mask.domain:
        raise DomainMismatchError("field and mask live on different grids")
    dom = mask.domain
    outside = ~mask.inside
    if np.any(np.abs(u.values[outside]) > 1e-8 * max(1.0, np.abs(u.values).max())):
        raise ValueError("the field must vanish outside the mask")
    centers = dom.centers()
    h = dom.h
    pos, nrm, val, cells = [], [], [], []
    for axis, step, sel, theta in wall_fractions(mask):
        idx = np.argwhere(sel)
        if idx.size == 0:
            continue
        th = theta[sel]
        p = np.column_stack([c[sel] for c in centers])
        p[:, axis] += step * th * h
        n = np.zeros_like(p)
        n[:, axis] = step
        pos.append(p)
        nrm.append(n)
        val.append(np.abs(u.values[sel]) / (th * h))
        cells.append(idx)
    if not pos:
        d = dom.dim
        return BoundaryFlux(np.zeros((0, d)), np.zeros((0, d)), np.zeros(0), np.zeros(0),
                            np.zeros((0, d), dtype=int))
    values = np.concatenate(val)
    return BoundaryFlux(
        np.concatenate(pos),
        np.concatenate(nrm),
        values,
        np.full(values.size, h ** (dom.dim - 1)),
        np.concatenate(cells),
    )


# -- radial reference ---------------------------------------------------------------


@dataclass(frozen=True)
class RadialDisk:
    radius: float


@dataclass(frozen=True)
class RadialAnnulus:
    inner: float
    outer: float


@dataclass
class RadialResult:
    lambda1: float
    r: np.ndarray
    torsion: np.ndarray
    eigenfunction: np.ndarray
    torsion_integral: float


def _sphere_measure(d: int) -> float:
    return 2.0 if d == 1 else 2.0 * np.pi


def radial_reference(config, n: int = 10_000, dim: int = 2) -> RadialResult:
    """High-accuracy 1D radial solver for balls and annuli.

    Finite volumes on ``n`` radial cells with weight ``r^(d-1)``; on a ball the
    node at ``r = 0`` gets the half control volume, which encodes ``u'(0) = 0``.
    Both the eigenvalue and the torsion profile are second order in ``1/n``.
    """
    if n < 100:
        raise ValueError("radial reference needs n >= 100")
    if dim not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    if isinstance(config, RadialDisk):
        if config.radius <= 0:
            raise ValueError("radius must be positive")
        a, b, closed_center = 0.0, float(config.radius), True
    elif isinstance(config, RadialAnnulus):
        if not 0 <= config.inner < config.outer:
            raise ValueError("annulus needs 0 <= inner < outer")
        a, b, closed_center = float(config.inner), float(config.outer), False
    else:
        raise TypeError(f"unknown radial configuration {config!r}")

    H = (b - a) / n
    r = a + H * np.arange(n + 1)
    weight = (lambda s: s ** (dim - 1)) if dim == 2 else (lambda s: np.ones_like(s))
    # unknowns: nodes 0..n-1 on a ball (u_n = 0), nodes 1..n-1 on an annulus
    first = 0 if closed_center else 1
    nodes = np.arange(first, n)
    rn = r[nodes]
    left = np.maximum(rn - 0.5 * H, a)
    right = rn + 0.5 * H
    if dim == 2:
        mass = 0.5 * (right**2 - left**2)
    else:
        mass = right - left
    flux_r = weight(right) / H
    # the centre node of a ball has no left face
    flux_l = np.where(rn - 0.5 * H < a, 0.0, weight(np.maximum(rn - 0.5 * H, a)) / H)
    diag = flux_r + flux_l
    off = -flux_r[:-1]

    s = 1.0 / np.sqrt(mass)
    lam, vec = eigh_tridiagonal(diag * s * s, off * s[:-1] * s[1:], select="i", select_range=(0, 0))
    phi = vec[:, 0] * s
    if phi.sum() < 0:
        phi = -phi

    ab = np.zeros((3, nodes.size))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    w = solve_banded((1, 1), ab, mass)

    prof = np.zeros(n + 1)
    prof[nodes] = w
    eig = np.zeros(n + 1)
    eig[nodes] = phi
    integral = float(_sphere_measure(dim) * np.sum(mass * w))
    return RadialResult(float(lam[0]), r, prof, eig, integral)

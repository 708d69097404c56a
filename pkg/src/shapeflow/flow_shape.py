"""Minimizing movements of sets.

A step from ``M_n`` minimizes ``F(M) + |M delta M_n|^2 / 2 eps`` among supersets
of ``M_n`` (functionals decreasing under inclusion).  Two search strategies
stand in for the intractable argmin:

* ``radial``: the state is a ball plus fixed concentric annuli and the ball
  radius is optimized by golden-section search, with eigenvalues and torsion
  integrals from the 1D radial solver;
* ``greedy``: grid cells next to the set are added in batches, ranked by the
  Hadamard density ``|du/dn|^2`` and kept only while the objective decreases.

The module also runs the complementary-Hausdorff flow (the state shrinks by
erosion) and evaluates boundary perturbations of the square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyMaskError
from .flow_measure import FlowTrajectory
from .functionals import FunctionalSpec
from .grid import (
    Annulus,
    Ball,
    Box,
    GridDomain,
    ShapeMask,
    Union,
    connected_components,
    distance_transform,
    erode_complement,
    measure_stats,
    rasterize,
    sym_diff,
)
from .pde import RadialAnnulus, RadialDisk, boundary_normal_derivative, eigenvalues, radial_reference, torsion

__all__ = [
    "evaluate_shape_functional",
    "ShapeFlowConfig",
    "ShapeTrajectory",
    "StepReport",
    "RadialState",
    "mm_step_shape",
    "mm_step_with_report",
    "run_shape_flow",
    "ball_flow_reference",
    "ball_flow_rhs",
    "unit_ball_volume",
    "hausdorff_flow_run",
    "hausdorff_objective",
    "square_perturbation_study",
    "SquareStudyReport",
    "square_domain",
    "detect_jumps",
]

RADIAL_N = 10_000
ACCEPT_RTOL = 1e-12


def unit_ball_volume(d: int) -> float:
    if d == 1:
        return 2.0
    if d == 2:
        return math.pi
    raise ValueError("only d in {1, 2} is supported")


def _perimeter_factor(d: int) -> float:
    # surface measure of the unit sphere
    return 2.0 if d == 1 else 2 * math.pi


# -- functional evaluation on masks ------------------------------------------------


@dataclass
class ShapeValue:
    """Functional value with the fields needed to rank boundary cells."""

    value: float
    base: float  # without penalties
    lambdas: np.ndarray
    densities: list  # fields whose squared normal derivative is the Hadamard density
    volume: float
    perimeter: float


def _eigen_based(spec: FunctionalSpec) -> bool:
    return spec.family == "spectral" or spec.kind == "neg_lambda1"


def _shape_value(mask: ShapeMask, spec: FunctionalSpec, x0=None) -> ShapeValue:
    stats = measure_stats(mask)
    pen = spec.volume_penalty * stats.volume + spec.perimeter_penalty * stats.perimeter
    lams = np.zeros(0)
    dens = []
    if spec.kind == "zero":
        base = 0.0
    elif spec.kind == "energy":
        w = torsion(mask)
        base = -w.integral()
        dens = [w]
    elif spec.kind == "volume":
        base = stats.volume
    elif _eigen_based(spec):
        if mask.is_empty:
            raise EmptyMaskError("spectral functionals need a nonempty set")
        res = eigenvalues(mask, k=spec.n_eigen, x0=x0)
        lams = res.eigenvalues
        base = spec.phi(lams)
        dens = res.eigenfunctions if spec.kind == "lambda_sum" else [res.eigenfunctions[spec.k - 1]]
        if spec.kind == "neg_lambda1":
            dens = []
    else:
        raise ValueError(f"{spec.kind} cannot be evaluated on a set")
    return ShapeValue(base + pen, base, lams, dens, stats.volume, stats.perimeter)


def evaluate_shape_functional(mask: ShapeMask, spec: FunctionalSpec) -> float:
    """``F(M)`` plus the volume and perimeter penalties of ``spec``.

    Spectral kinds use the grid eigensolver; ``energy`` is ``-int w_M``.
    """
    if not spec.supports_shapes:
        raise ValueError(f"{spec.kind} is not defined on sets")
    return _shape_value(mask, spec).value


# -- radial family --------------------------------------------------------------------


@lru_cache(maxsize=None)
def _unit_disk(d: int, n: int):
    r = radial_reference(RadialDisk(1.0), n=n, dim=d)
    return r.lambda1, r.torsion_integral


@lru_cache(maxsize=None)
def _annulus_data(a: float, b: float, d: int, n: int):
    r = radial_reference(RadialAnnulus(a, b), n=n, dim=d)
    return r.lambda1, r.torsion_integral


@dataclass(frozen=True)
class RadialState:
    """A ball ``B(center, radius)`` together with fixed concentric annuli.

    ``annuli`` are ``(inner, outer)`` pairs sorted by radius and disjoint from
    the ball.  ``r_max`` caps the ball radius (the design region).
    """

    radius: float
    annuli: tuple = ()
    center: tuple = (0.0, 0.0)
    dim: int = 2
    r_max: float = math.inf

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        prev = self.radius
        for a, b in self.annuli:
            if not prev <= a < b:
                raise ValueError("annuli must be disjoint, sorted and outside the ball")
            prev = b

    @property
    def volume(self) -> float:
        w = unit_ball_volume(self.dim)
        return w * (self.radius**self.dim + sum(b**self.dim - a**self.dim for a, b in self.annuli))

    @property
    def perimeter(self) -> float:
        s = _perimeter_factor(self.dim)
        p = self.radius ** (self.dim - 1)
        p += sum(a ** (self.dim - 1) + b ** (self.dim - 1) for a, b in self.annuli)
        return s * p

    def grown(self, r: float) -> "RadialState":
        """Ball of radius ``r``; annuli it reaches are absorbed."""
        rest = []
        radius = r
        for a, b in self.annuli:
            if r >= a:
                radius = max(radius, b)
            else:
                rest.append((a, b))
        return RadialState(radius, tuple(rest), self.center, self.dim, self.r_max)

    def primitive(self):
        c = tuple(self.center[: self.dim])
        parts = [Ball(c, self.radius)] + [Annulus(c, a, b) for a, b in self.annuli]
        return parts[0] if len(parts) == 1 else Union(*parts)

    def to_mask(self, domain: GridDomain) -> ShapeMask:
        return rasterize(self.primitive(), domain)

    def components(self) -> int:
        return 1 + len(self.annuli)


def _radial_value(state: RadialState, spec: FunctionalSpec, n: int = RADIAL_N):
    """Value and first eigenvalue of a radial state from the 1D solver."""
    d = state.dim
    lam_unit, tor_unit = _unit_disk(d, n)
    lam_ball = lam_unit / state.radius**2
    ann = [_annulus_data(a, b, d, n) for a, b in state.annuli]
    lam1 = min([lam_ball] + [x[0] for x in ann])
    if spec.kind == "zero":
        base = 0.0
    elif spec.kind == "energy":
        base = -(tor_unit * state.radius ** (d + 2) + sum(x[1] for x in ann))
    elif spec.kind in ("lambda_k", "lambda_sum") and spec.k == 1:
        base = lam1
    else:
        raise ConfigError(f"the radial strategy supports energy, zero and lambda_1, not {spec.kind} (k={spec.k})")
    pen = spec.volume_penalty * state.volume + spec.perimeter_penalty * state.perimeter
    return base + pen, lam1


def _golden(f, lo, hi, tol=1e-12, max_iter=200):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _radial_step(spec: FunctionalSpec, state: RadialState, eps: float, n: int = RADIAL_N):
    """Best radius over each gap between annuli, plus staying put."""
    F0, _ = _radial_value(state, spec, n)
    base_vol = state.volume

    def objective(r):
        cand = state.grown(r)
        val, _ = _radial_value(cand, spec, n)
        return val + (cand.volume - base_vol) ** 2 / (2 * eps)

    best_r, best_val = state.radius, F0
    lo = state.radius
    edges = [a for a, _ in state.annuli] + [state.r_max]
    for i, hi in enumerate(edges):
        hi = min(hi, state.r_max)
        if hi > lo:
            top = hi if i == len(edges) - 1 else np.nextafter(hi, -math.inf)
            r, val = _golden(objective, lo, top)
            for cand in (lo, top):
                v = objective(cand)
                if v < val:
                    r, val = cand, v
            if val < best_val:
                best_r, best_val = r, val
        if i < len(state.annuli):
            # merging with annulus i: the ball jumps to its outer radius
            merged_val = objective(state.annuli[i][0])
            if merged_val < best_val:
                best_r, best_val = state.annuli[i][0], merged_val
            lo = state.annuli[i][1]
        if lo >= state.r_max:
            break
    new = state.grown(best_r) if best_r != state.radius else state
    return new, F0, best_val, new.volume - base_vol


# -- greedy growth ---------------------------------------------------------------------


@dataclass
class StepReport:
    state: ShapeMask
    objective_start: float
    objective: float
    value: float  # penalized functional at the new state
    distance: float  # |M delta M_n|
    batches: list = field(default_factory=list)  # accepted cell batches (index arrays)
    evaluations: int = 0
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    radial: RadialState | None = None
    notes: list = field(default_factory=list)

    @property
    def first_batch(self) -> np.ndarray | None:
        return self.batches[0] if self.batches else None


def _add_cells(mask: ShapeMask, idx: np.ndarray) -> ShapeMask:
    extra = np.zeros(mask.domain.shape, dtype=bool)
    extra[tuple(np.asarray(idx).T)] = True
    return mask.with_cells(extra)


def _crack_components(mask: ShapeMask) -> list:
    """Outside interior cells pinched between inside cells along some axis."""
    inside = mask.inside
    crack = np.zeros_like(inside)
    for axis in range(inside.ndim):
        before = np.roll(inside, 1, axis=axis)
        after = np.roll(inside, -1, axis=axis)
        crack |= before & after
    crack &= ~inside & mask.domain.interior
    labels, n = ndimage.label(crack)
    comps = [np.argwhere(labels == i + 1) for i in range(n)]
    comps.sort(key=len, reverse=True)
    return comps


def _candidates(mask: ShapeMask, ring_width: int):
    inside = mask.inside
    if inside.any():
        dist = distance_transform(mask, "set").values
        near = dist <= ring_width * mask.domain.h * (1 + 1e-9)
    else:
        near = np.zeros_like(inside)
    return near & ~inside & mask.domain.interior


def _hadamard_scores(mask: ShapeMask, fields: list) -> np.ndarray:
    """Squared normal derivatives pushed onto the outside neighbour of each wall face."""
    score = np.zeros(mask.domain.shape)
    for u in fields:
        flux = boundary_normal_derivative(u, mask)
        if flux.values.size == 0:
            continue
        # the face normal points from the inside cell to its outside neighbour
        nbr = flux.cells + np.rint(flux.normals).astype(int)
        np.add.at(score, tuple(nbr.T), flux.values**2)
    return score


def _greedy_step(
    spec: FunctionalSpec,
    M_n: ShapeMask,
    eps: float,
    batch_size: int = 16,
    ring_width: int = 1,
    max_single_trials: int | None = 32,
    max_rounds: int = 200,
) -> StepReport:
    # grown masks carry no wall positions, so the whole step uses the plain
    # embedding; otherwise the first added cell would also switch discretization
    M_n = M_n.without_level()
    start = _shape_value(M_n, spec)
    rep = StepReport(M_n, start.value, start.value, start.value, 0.0, lambdas=start.lambdas)
    if spec.perimeter_penalty > 0:
        rep.notes.append("perimeter penalty active: search restricted to supersets")
    if spec.kind == "zero" or spec.increasing_in_inclusion and not spec.decreasing_in_inclusion:
        return rep
    cur = M_n
    cur_val = start
    cur_obj = start.value
    x0 = None

    def objective(mask):
        nonlocal x0
        val = _shape_value(mask, spec, x0)
        rep.evaluations += 1
        d = sym_diff(mask, M_n)
        return val, val.value + d * d / (2 * eps)

    def accept(mask, val, obj, cells):
        nonlocal cur, cur_val, cur_obj, x0
        cur, cur_val, cur_obj = mask, val, obj
        rep.batches.append(cells)
        if val.densities and spec.family == "spectral":
            x0 = val.densities[0]

    def improves(obj):
        return obj < cur_obj - ACCEPT_RTOL * max(1.0, abs(cur_obj))

    # cuts of zero width first: cells squeezed between inside cells
    for comp in _crack_components(cur):
        trial = _add_cells(cur, comp)
        val, obj = objective(trial)
        if improves(obj):
            accept(trial, val, obj, comp)

    size = batch_size
    for _ in range(max_rounds):
        cand = _candidates(cur, ring_width)
        idx = np.argwhere(cand)
        if idx.size == 0:
            break
        score = _hadamard_scores(cur, cur_val.densities)[tuple(idx.T)]
        order = np.argsort(-score, kind="stable")
        idx = idx[order]
        accepted = False
        size = min(size, len(idx))
        while size >= 1:
            cells = idx[:size]
            trial = _add_cells(cur, cells)
            val, obj = objective(trial)
            if improves(obj):
                accept(trial, val, obj, cells)
                accepted = True
                size = min(2 * size, batch_size)
                break
            if size == 1:
                break
            size //= 2
        if accepted:
            continue
        # no batch of top-ranked cells helped: scan single cells before giving up
        limit = len(idx) if max_single_trials is None else min(len(idx), max_single_trials)
        for j in range(1, limit):
            cells = idx[j : j + 1]
            trial = _add_cells(cur, cells)
            val, obj = objective(trial)
            if improves(obj):
                accept(trial, val, obj, cells)
                accepted = True
                break
        if not accepted:
            break
        size = 1

    rep.state = cur
    rep.objective = cur_obj
    rep.value = cur_val.value
    rep.distance = sym_diff(cur, M_n)
    rep.lambdas = cur_val.lambdas
    return rep


def _fit_ball(mask: ShapeMask):
    idx = mask.inside
    if not idx.any():
        raise ValueError("the radial strategy needs a nonempty ball")
    centers = mask.domain.centers()
    c = np.array([x[idx].mean() for x in centers])
    r = (mask.volume / unit_ball_volume(mask.domain.dim)) ** (1 / mask.domain.dim)
    ref = rasterize(Ball(tuple(c), r), mask.domain) if mask.domain.contains_box(c - r, c + r) else None
    if ref is None or sym_diff(ref, mask) > 2 * measure_stats(mask).perimeter * mask.domain.h:
        raise ValueError("the radial strategy needs a ball-shaped mask")
    return RadialState(r, (), tuple(c), mask.domain.dim, mask.domain.inradius(c))


def mm_step_with_report(spec: FunctionalSpec, M_n, eps: float, strategy: str = "greedy", **params) -> StepReport:
    """One minimizing-movement step with its bookkeeping.

    ``M_n`` is a :class:`ShapeMask` (both strategies) or a :class:`RadialState`
    (radial strategy).  Greedy parameters: ``batch_size``, ``ring_width``,
    ``max_single_trials``, ``max_rounds``.  The radial strategy accepts
    ``domain`` (for rasterizing a :class:`RadialState`) and ``radial_n``.
    """
    if eps <= 0:
        raise ValueError("time step must be positive")
    if not spec.decreasing_in_inclusion:
        raise ConfigError(f"{spec.kind} is not decreasing under inclusion")
    if strategy == "greedy":
        if not isinstance(M_n, ShapeMask):
            raise TypeError("the greedy strategy works on masks")
        return _greedy_step(spec, M_n, eps, **params)
    if strategy != "radial":
        raise ConfigError(f"unknown strategy {strategy!r}")
    domain = params.pop("domain", None)
    n = params.pop("radial_n", RADIAL_N)
    if params:
        raise TypeError(f"unexpected radial parameters {sorted(params)}")
    if isinstance(M_n, ShapeMask):
        domain = M_n.domain
        state = _fit_ball(M_n)
    else:
        state = M_n
    new, f0, obj, dvol = _radial_step(spec, state, eps, n)
    val, lam1 = _radial_value(new, spec, n)
    mask = new.to_mask(domain) if domain is not None else None
    return StepReport(mask, f0, obj, val, dvol, evaluations=0, lambdas=np.array([lam1]), radial=new)


def mm_step_shape(spec: FunctionalSpec, M_n, eps: float, strategy: str = "greedy", **params):
    """Superset of ``M_n`` whose objective does not exceed the stay-put value."""
    rep = mm_step_with_report(spec, M_n, eps, strategy, **params)
    return rep.state if isinstance(M_n, ShapeMask) else rep.radial


# -- trajectories -------------------------------------------------------------------------


@dataclass
class ShapeFlowConfig:
    """Parameters of a set flow.

    ``functional`` must be decreasing under inclusion.  ``batch_size``,
    ``ring_width`` and ``max_single_trials`` tune the greedy strategy;
    ``radial_n`` is the 1D resolution of the radial strategy.
    """

    epsilon: float
    T: float
    functional: FunctionalSpec
    strategy: str = "greedy"
    batch_size: int = 16
    ring_width: int = 1
    max_single_trials: int | None = 32
    radial_n: int = RADIAL_N

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.T >= self.epsilon * (1 - 1e-12):
            raise ConfigError("T must be at least epsilon")
        if self.strategy not in ("greedy", "radial"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if not self.functional.decreasing_in_inclusion:
            raise ConfigError(f"{self.functional.kind} is not decreasing under inclusion")
        if self.batch_size < 1 or self.ring_width < 1:
            raise ConfigError("batch size and ring width must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.epsilon))


@dataclass
class ShapeTrajectory(FlowTrajectory):
    """Set-valued trajectory with geometric series per state."""

    volumes: list = field(default_factory=list)
    perimeters: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    components: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    step_parameters: list = field(default_factory=list)  # h* for erosion flows
    strategy: str = ""
    notes: list = field(default_factory=list)
    first_batches: list = field(default_factory=list)

    def record(self, mask, value, volume, perimeter, lambdas, components=None):
        self.append(mask, value)
        self.volumes.append(float(volume))
        self.perimeters.append(float(perimeter))
        self.lambdas.append(np.asarray(lambdas, dtype=float))
        self.components.append(connected_components(mask) if components is None else components)

    @property
    def lambda1(self) -> np.ndarray:
        return np.array([lam[0] if lam.size else math.nan for lam in self.lambdas])

    def is_chain(self) -> bool:
        """Whether states increase under inclusion."""
        return all(a.issubset(b) for a, b in zip(self.states[:-1], self.states[1:]))

    def components_nonincreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.components[:-1], self.components[1:]))


def detect_jumps(series, tol: float = 1e-8, factor: float = 10.0) -> list:
    """Indices ``n`` where ``series`` drops from ``n`` to ``n+1`` by far more than usual.

    A drop counts as a jump when it exceeds ``factor * tol`` and ``factor`` times
    the median of the positive drops.
    """
    s = np.asarray(series, dtype=float)
    if s.size < 2:
        return []
    drops = s[:-1] - s[1:]
    pos = drops[drops > factor * tol]
    if pos.size == 0:
        return []
    med = float(np.median(pos))
    return [int(i) for i in np.flatnonzero((drops > factor * tol) & (drops > factor * med))]


def run_shape_flow(config: ShapeFlowConfig, M0, domain: GridDomain | None = None) -> ShapeTrajectory:
    """Iterate the set step ``T / eps`` times.

    ``M0`` is a mask, or a :class:`RadialState` for the radial strategy (then
    ``domain``, if given, is used to rasterize the states).
    """
    spec = config.functional
    eps = config.epsilon
    traj = ShapeTrajectory(eps, strategy=config.strategy)
    if spec.perimeter_penalty > 0:
        traj.notes.append("perimeter penalty active: search restricted to supersets")

    if config.strategy == "radial":
        if isinstance(M0, ShapeMask):
            domain = M0.domain
            state = _fit_ball(M0)
        else:
            state = M0
        val, lam1 = _radial_value(state, spec, config.radial_n)
        mask = state.to_mask(domain) if domain is not None else None
        traj.record(mask, val, state.volume, state.perimeter, [lam1],
                    None if mask is not None else state.components())
        traj.radii.append(state.radius)
        for _ in range(config.steps):
            rep = mm_step_with_report(spec, state, eps, "radial", domain=domain, radial_n=config.radial_n)
            state = rep.radial
            traj.distances.append(rep.distance)
            traj.objectives.append((rep.objective_start, rep.objective))
            traj.record(rep.state, rep.value, state.volume, state.perimeter, rep.lambdas,
                        None if rep.state is not None else state.components())
            traj.radii.append(state.radius)
        return traj

    if not isinstance(M0, ShapeMask):
        raise TypeError("the greedy strategy starts from a mask")
    M0 = M0.without_level()
    first = _shape_value(M0, spec)
    traj.record(M0, first.value, first.volume, first.perimeter, first.lambdas)
    cur = M0
    params = dict(batch_size=config.batch_size, ring_width=config.ring_width,
                  max_single_trials=config.max_single_trials)
    for _ in range(config.steps):
        try:
            rep = mm_step_with_report(spec, cur, eps, "greedy", **params)
        except Exception as exc:  # solver failures end the run, the partial trajectory is kept
            traj.error = f"step {len(traj.states)}: {exc}"
            break
        cur = rep.state
        stats = measure_stats(cur)
        traj.distances.append(rep.distance)
        traj.objectives.append((rep.objective_start, rep.objective))
        traj.first_batches.append(rep.first_batch)
        traj.record(cur, rep.value, stats.volume, stats.perimeter, rep.lambdas)
    return traj


# -- ball evolution closed form ---------------------------------------------------------------


def ball_flow_rhs(R: float, d: int = 2, lam1: float | None = None) -> float:
    """``R' = 2 lam1(B1) / (d^2 omega_d^2 R^(2d+1))``."""
    lam1 = _unit_disk(d, RADIAL_N)[0] if lam1 is None else lam1
    w = unit_ball_volume(d)
    return 2 * lam1 / (d * d * w * w * R ** (2 * d + 1))


def ball_flow_reference(R0: float, d: int, t, lam1: float | None = None):
    """Radius of the continuous ball flow of ``lambda_1`` at time ``t``.

    ``R(t) = (R0^(2d+2) + 4 (d+1) lam1(B1) t / (d^2 omega_d^2))^(1/(2d+2))``,
    with ``lam1(B1)`` from the radial solver unless given.
    """
    if R0 <= 0:
        raise ValueError("R0 must be positive")
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    lam1 = _unit_disk(d, RADIAL_N)[0] if lam1 is None else lam1
    w = unit_ball_volume(d)
    out = (R0 ** (2 * d + 2) + 4 * (d + 1) * lam1 * t / (d * d * w * w)) ** (1.0 / (2 * d + 2))
    return float(out) if out.ndim == 0 else out


# -- complementary Hausdorff flow ---------------------------------------------------------------


def hausdorff_objective(spec: FunctionalSpec, mask: ShapeMask, dist: np.ndarray, h: float, eps: float) -> float:
    """``F(erode(M, h)) + h^2 / 2 eps`` given the distance-to-complement field of ``M``."""
    eroded = ShapeMask(mask.domain, mask.inside & (dist > h))
    if eroded.is_empty and _eigen_based(spec):
        return math.inf
    return _shape_value(eroded, spec).value + h * h / (2 * eps)


def _hausdorff_step(spec, mask, eps, scan_points=64):
    dist = distance_transform(mask, "complement").values
    inside = dist[mask.inside]
    if inside.size == 0:
        return 0.0, mask
    levels = np.unique(inside)
    hmax = float(levels[-1])
    if _eigen_based(spec):
        # the last level empties the set; keep the search on nonempty erosions
        hmax = float(levels[-2]) if levels.size > 1 else 0.0
    cache = {}

    def snap(h):
        # the objective's set part is constant on [level_k, level_{k+1}); its
        # minimum over that plateau sits at the left end
        k = np.searchsorted(levels, h, side="right") - 1
        return float(levels[k]) if k >= 0 else 0.0

    def g(h):
        key = snap(h)
        if key not in cache:
            cache[key] = hausdorff_objective(spec, mask, dist, key, eps)
        return cache[key] + (h * h - key * key) / (2 * eps)

    best_h, best = 0.0, g(0.0)
    if hmax > 0:
        grid = np.linspace(0.0, hmax, scan_points + 1)
        vals = [g(h) for h in grid]
        i = int(np.argmin(vals))
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, scan_points)]
        h, _ = _golden(g, lo, hi, tol=1e-10)
        for cand in (h, grid[i], lo, hi):
            s = snap(cand)
            v = g(s)
            if v < best or (v == best and s < best_h):
                best_h, best = s, v
    return best_h, erode_complement(mask, best_h)


def hausdorff_flow_run(spec: FunctionalSpec, omega0: ShapeMask, eps: float, T: float, scan_points: int = 64):
    """Erosion flow ``Omega_{n+1} = erode_complement(Omega_n, h*)``.

    ``h*`` minimizes ``F(erode(Omega_n, h)) + h^2 / 2 eps``: a coarse scan on
    ``[0, max distance]`` brackets the minimum, golden-section refines it, and
    the result is snapped to the distance level that starts its plateau.
    """
    if not spec.increasing_in_inclusion:
        raise ConfigError(f"{spec.kind} is not increasing under inclusion")
    if eps <= 0 or T < eps * (1 - 1e-12):
        raise ConfigError("need eps > 0 and T >= eps")
    traj = ShapeTrajectory(eps, strategy="hausdorff")
    first = _shape_value(omega0, spec) if not (omega0.is_empty and _eigen_based(spec)) else None
    st = measure_stats(omega0)
    traj.record(omega0, first.value if first else math.inf, st.volume, st.perimeter,
                first.lambdas if first else [])
    cur = omega0
    f = 0.0
    traj.radii.append(f)
    for _ in range(int(round(T / eps))):
        h, new = _hausdorff_step(spec, cur, eps, scan_points)
        val = _shape_value(new, spec) if not (new.is_empty and _eigen_based(spec)) else None
        st = measure_stats(new)
        traj.step_parameters.append(h)
        traj.distances.append(h)
        v_new = val.value if val else math.inf
        traj.objectives.append((traj.values[-1], v_new + h * h / (2 * eps)))
        traj.record(new, v_new, st.volume, st.perimeter, val.lambdas if val else [])
        f += h
        traj.radii.append(f)
        cur = new
    return traj


# -- boundary perturbations of the square --------------------------------------------------------


def square_domain(cells_per_side: int = 128, margin: int = 2) -> GridDomain:
    """Grid with ``cells_per_side`` cells across ``[0, pi]`` and a margin of outside cells."""
    h = math.pi / cells_per_side
    n = cells_per_side + 2 * margin
    return GridDomain((-margin * h, -margin * h), (math.pi + margin * h, math.pi + margin * h), (n, n))


@dataclass
class SquareStudyReport:
    lambda1: float
    integrals: np.ndarray  # int |du/dn|^2 v ds with u scaled like sin x sin y
    integrals_unit: np.ndarray  # the same with the L2-normalized eigenfunction
    t_opt: np.ndarray
    G: np.ndarray
    ranking: list  # candidate indices, best (lowest G) first
    profile_error: float  # max deviation of |du/dn| from sin along the sides
    candidates: list

    def as_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "profile_error": self.profile_error,
            "ranking": self.ranking,
            "candidates": [
                dict(c, integral=float(i), integral_unit=float(iu), t_opt=float(t), G=float(g))
                for c, i, iu, t, g in zip(self.candidates, self.integrals, self.integrals_unit, self.t_opt, self.G)
            ],
        }


_SIDES = {
    # side name: (normal axis, normal sign, tangent axis)
    "bottom": (1, -1, 0),
    "top": (1, 1, 0),
    "left": (0, -1, 1),
    "right": (0, 1, 1),
}


def _candidate_density(cand: dict, positions: np.ndarray, normals: np.ndarray) -> np.ndarray:
    kind = cand.get("kind")
    if kind == "uniform":
        return np.ones(len(positions))
    if kind != "bump":
        raise ValueError(f"unknown candidate kind {kind!r}")
    side = cand["side"]
    if side not in _SIDES:
        raise ValueError(f"unknown side {side!r}")
    axis, sign, tangent = _SIDES[side]
    on_side = np.rint(normals[:, axis]).astype(int) == sign
    s = positions[:, tangent]
    width = float(cand["width"])
    if width <= 0:
        raise ValueError("bump width must be positive")
    z = (s - float(cand["position"])) / width
    bump = np.where(np.abs(z) < 1, np.cos(0.5 * math.pi * z) ** 2, 0.0)
    return np.where(on_side, bump, 0.0)


def square_perturbation_study(eps: float, candidates: list, cells_per_side: int = 128) -> SquareStudyReport:
    """Optimal normal-displacement step of the square for each boundary density ``v``.

    With ``I_v = int |du1/dn|^2 v ds`` the one-step optimum along ``x + t v n``
    sits at ``t_v = eps I_v`` with value ``G_v = lambda1 - eps I_v^2 / 2``.
    Each candidate is normalized numerically so that ``int |v| ds = 1`` on the
    grid faces.  ``u1`` is scaled to match ``sin x sin y`` (L2 norm ``pi/2``).
    """
    if eps <= 0:
        raise ValueError("time step must be positive")
    dom = square_domain(cells_per_side)
    sq = rasterize(Box((0.0, 0.0), (math.pi, math.pi)), dom)
    res = eigenvalues(sq, k=1)
    lam = res.lambda1
    scale = math.pi / 2
    flux = boundary_normal_derivative(res.eigenfunctions[0], sq)
    dn = flux.values * scale
    ds = flux.lengths

    prof_err = 0.0
    for side, (axis, sign, tangent) in _SIDES.items():
        sel = np.rint(flux.normals[:, axis]).astype(int) == sign
        prof_err = max(prof_err, float(np.abs(dn[sel] - np.sin(flux.positions[sel, tangent])).max()))

    ints, ints_unit = [], []
    for cand in candidates:
        v = _candidate_density(cand, flux.positions, flux.normals)
        mass = float(np.sum(np.abs(v) * ds))
        if mass == 0:
            raise ValueError(f"candidate {cand} has no support on the boundary")
        v = v / mass
        ints.append(float(np.sum(dn**2 * v * ds)))
        ints_unit.append(float(np.sum(flux.values**2 * v * ds)))
    ints = np.array(ints)
    t_opt = eps * ints
    G = lam - 0.5 * eps * ints**2
    ranking = [int(i) for i in np.argsort(G, kind="stable")]
    return SquareStudyReport(lam, ints, np.array(ints_unit), t_opt, G, ranking, prof_err, list(candidates))

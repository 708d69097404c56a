"""Grid simulator for minimizing-movement flows of shapes and capacitary measures.

Modules
-------
grid
    Cartesian domains, masks, primitives, set metrics and erosion.
measures, pde
    Capacitary measures on the grid, the relaxed Dirichlet solver, eigenvalues
    and the radial reference solver.
capmeasure
    The measure/torsion correspondence, gamma distance and geodesics.
projection
    Projection onto the convex set of discrete torsion functions.
functionals
    Catalog of energy, integral, spectral and set functionals.
flow_measure, flow_shape
    Minimizing movements of measures and of sets, with diagnostics and the
    analytic case studies.
io, cli
    File formats and the command-line front end.
"""

from .capmeasure import gamma_distance, geodesic_interpolate, measure_of_torsion
from .errors import (
    ConfigError,
    DomainMismatchError,
    DomainViolationError,
    EmptyMaskError,
    InfiniteDistanceError,
    InvariantViolationError,
    IterationLimitError,
    ShapeflowError,
)
from .flow_measure import FlowTrajectory, MeasureFlowConfig, prox_step, run_measure_flow
from .flow_shape import ShapeFlowConfig, ShapeTrajectory, mm_step_shape, run_shape_flow
from .functionals import FunctionalSpec
from .grid import (
    Annulus,
    Ball,
    Box,
    Difference,
    GridDomain,
    ScalarGridField,
    ShapeMask,
    Union,
    measure_stats,
    rasterize,
    set_distances,
    sym_diff,
)
from .measures import CapacitaryMeasure, TorsionField, as_measure
from .pde import eigenvalues, solve_dirichlet, torsion
from .projection import project_onto_X

__version__ = "0.1.0"

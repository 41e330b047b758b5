"""Trimmed isogeometric Poisson solver with Nitsche boundary conditions.

Modules: ``spline`` (B-spline spaces), ``geometry`` (maps), ``trimming``
(cut cells and quadrature), ``stabilization`` (flux operators on cut
cells), ``assembly`` (system, solve, spectra, errors) and ``experiments``
(scenarios and sweeps driven by ``trimiga.cli``).
"""

from .assembly import (
    LinearSystem,
    ProblemData,
    SolverError,
    apply_strong_bc,
    assemble,
    condition_number,
    deactivate_dofs,
    error_norms,
    gen_eig_extremes,
    gram_1h,
    solve,
)
from .geometry import GeometryMap, affine_map, boundary_pushforward, c0_quarter_annulus, identity_map, map_eval, quarter_annulus
from .spline import (
    KnotVector,
    TensorSplineSpace,
    bezier_extract,
    eval_basis,
    insert_knot,
    l2_project_global,
    make_open_knot_vector,
)
from .stabilization import (
    StabilizationPlan,
    eval_Rh,
    parametric_flux_operator,
    physical_flux_operator,
    stability_ratio,
)
from .trimming import (
    Label,
    TrimmedMesh,
    classify_cells,
    cut_cell_quadrature,
    select_good_neighbor,
    trim_boundary_rule,
)

__version__ = "0.1.0"

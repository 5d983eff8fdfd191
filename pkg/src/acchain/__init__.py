"""Adaptive atomistic-to-continuum coupling on a periodic 1D chain."""

from .chain import (
    AdmissibilityError,
    BondStencil,
    Deformation,
    LatticeConfig,
    LatticeFunction,
    diff_stencil,
    lp_norm,
    project_mean_zero,
)
from .potential import (
    DerivativeRatios,
    PotentialModel,
    assumption_ratios,
    cauchy_born,
    eam,
    eval_V,
    grad_V,
    hess_V,
    lennard_jones,
    morse,
)
from .atomistic import (
    AtomisticProblem,
    SolveReport,
    SolverError,
    energy_a,
    grad_a,
    hessian_a,
    solve_a,
    stress_a,
)
from .mesh import ACMesh, MeshError, bisect, build_initial, kappa, merge_into_atomistic, validate
from .coupling import (
    CoupledState,
    NodalForces,
    energy_ac,
    grad_ac,
    interface_site_energy,
    nodal_force_projection,
    solve_ac,
    stress_ac_atomwise,
    stress_ac_elementwise,
)
from .estimators import (
    EstimatorReport,
    StabilityError,
    build_report,
    eta_cg,
    eta_hybrid,
    eta_mo,
    eta_z,
    model_residual,
    recover_gradient,
    stability_constant,
    total_bound,
)
from .efficiency import EfficiencyAudit, audit, bubble_element, edge_test, interface_test
from .adaptivity import AdaptConfig, AdaptRecord, adapt_loop, doerfler_mark, refine, true_error

__version__ = "0.1.0"

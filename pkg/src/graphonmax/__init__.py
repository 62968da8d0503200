"""Entropy-maximizing multipodal graphons constrained by edge and subgraph densities."""

from .core import (
    MultipodalGraphon,
    S0_MAX,
    effective_podality,
    gradients,
    merge_clusters,
    read_graphon,
    s0,
    s0_deriv,
    s0_prime_inv,
    write_graphon,
)
from .stars import (
    PsiMax,
    PsiProfile,
    StarWeights,
    bad_value_scan,
    beta_sensitivity,
    degeneracy_value,
    poly_density,
    poly_gradients,
    psi,
    psi_grid,
    psi_prime,
    zeta,
)
from .bipodal import (
    BipodalSolution,
    ContinuationPath,
    continue_path,
    default_tau_window,
    jacobian,
    limit_solution,
    multipliers,
    residual,
    solve_at,
)
from .subgraphs import (
    SubgraphSpec,
    bad_values_for,
    complete,
    cycle,
    delta_tau_check,
    homomorphism_density,
    path_graph,
    star,
    star_weights_for,
    triangle,
)
from .optimizer import (
    ConstrainedProblem,
    OptimizerReport,
    bipodal_params,
    kkt_fit,
    kkt_residual,
    maximize,
    read_report,
    write_report,
)

__version__ = "0.1.0"

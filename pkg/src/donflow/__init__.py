"""Spectral simulator for the parabolic flow toward the critical-metric
(Donaldson) equation on flat complex tori, with its proved estimates wired in
as runtime-checked invariants."""

from .diagnostics import (
    DecayFit,
    DiagnosticsRow,
    decay_fit,
    donaldson_residual,
    oscillation,
)
from .flow import (
    FlowConfig,
    FlowState,
    chi_phi,
    flow_rhs,
    flow_step,
    initial_state,
    normalize,
    run_flow,
)
from .geometry import BackgroundGeometry, ConeError, generate_geometry, identity_geometry
from .grid import (
    GridSpec,
    ScalarField,
    dbar_hessian,
    holomorphic_gradient,
    integrate_mu,
    make_grid,
    spectral_tail_energy,
)
from .heat import apply_L, harnack_ratio, li_yau_G, run_heat
from .hermitian import (
    ConeReport,
    EigenSpectrum,
    HermitianMatrix,
    cone_margin,
    eigenvalues_hermitian,
    h_inverse_metric,
    inverse_hermitian,
    is_positive_definite,
    li_eigenvalue_bound,
    trace_pair,
    wedge_trace_ratio_oracle,
)

__version__ = "0.1.0"

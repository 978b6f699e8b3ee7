"""Eigenvalues and eigenfunctions of linear stochastic Hamiltonian systems with regime switching."""

from ._accel import backend
from .coefficients import (
    CoefficientField, DualField, HamiltonianSpec, PiecewisePoly, check_H4, check_monotonicity,
    compute_rho_b, dual_transform, evaluate,
)
from .config import load_spec, loads_spec, spec_from_dict, spec_to_dict
from .riccati import (
    NEG_INFINITY, BlowUpResult, RiccatiTrajectory, blow_up_time, check_weaker_condition,
    closed_form_k1, integrate_backward, rhs_dual, rhs_primal, solve_gain,
)

__version__ = "0.1.0"

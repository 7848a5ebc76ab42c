"""Finite-element solver and certification harness for a coupled pair of
linear parabolic equations (Neumann heat-type component coupled to a
Dirichlet diffusion component), with a semi-implicit marching scheme,
step-wise energy minimization, and evaluators for the explicit stability,
continuous-dependence, and convergence estimates the scheme satisfies."""

from .fem import (Mesh, FeSpace, build_mesh, assemble_gram, assemble_forms,
                  dual_norm, embedding_constant, mass_matrix,
                  stiffness_matrix, convection_matrix)
from .fields import (SpaceTimeField, CoefficientSextet, TimeSlices,
                     SchemeConstants, ValidationReport, validate_sextet,
                     delta_star, tau_star, c_star, c_tilde_star,
                     operator_bounds, discretize_time, interpolant_eval,
                     compute_scheme_constants, read_field, write_field)
from .stepper import (StepSystem, DiscreteTrajectory, assemble_step_system,
                      solve_step, energy, energy_gradient, run_scheme,
                      trajectory_interpolants, slice_sextet, slice_forcing,
                      ForcingSlices, project_initial, TauGuardError,
                      IndefiniteStepError, SolverConvergenceError)
from .analysis import (ResidualReport, EstimateReport, ConvergenceTable,
                       apply_T, residual_report, check_apriori, r_star,
                       check_continuous_dependence, tau_refinement_study,
                       dense_oracle_step, minimize_energy_oracle,
                       check_isomorphism_sandwich, RunData)
from .kwc import (f_eps, ModelFunctions, PhaseFieldPair, build_linearized,
                  build_adjoint)
from . import catalog

__version__ = "0.1.0"

"""Inertial solvers for monotone equations.

A second-order flow with Hessian-driven damping and time rescaling, its
implicit discretization, and the diagnostics used to measure their rates.
"""

from ._backend import BACKEND, compiled_available
from .diagnostics import (RateReport, decay_products, detect_transient, fit_exponential_rate,
                          fit_loglog_slope, gap_function, monotonicity_report,
                          primal_dual_metrics, quad_form_sign)
from .errors import (ConvergenceError, DivergenceError, FitDomainError, IllPosedStepError,
                     InvalidInputError, MonoflowError, NumericalDomainError, ParameterViolation,
                     ScheduleInvalidError, StiffnessError, UnsupportedMetricError)
from .experiments import RunConfig, load_config, run, sweep
from .flow import (EnergyParams, FlowState, IntegratorConfig, energy_continuous, flow_rhs,
                   integrate, trajectory_energy)
from .operators import (LagrangianProblem, OperatorSpec, affine_operator, build_lagrangian_operator,
                        build_saddle_example2, example1_operator, example1_problem, evaluate,
                        identity_operator, monotonicity_probe)
from .schedules import (BetaSchedule, SolverParams, aux_inequalities, beta_seq, beta_value,
                        check_growth_continuous, check_growth_discrete, beta_inequalities)
from .stepper import (ResolventConfig, StepCoefficients, compute_coefficients, energy_discrete,
                      eta_k, recurrence_residual, resolvent, run_discrete)
from .trajectory import Trajectory

__version__ = "0.1.0"

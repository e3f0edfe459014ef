"""Closed-loop workbench for discrete pellet fueling and density control.

A nonlinear 1D drift-diffusion plasma simulator is the plant; two
mixed-integer MPC strategies (branch-and-bound MIQP and a barrier-modified
penalty-term homotopy) plus a relay baseline track a line-averaged density
reference without violating the edge density limit.
"""

__version__ = "0.1.0"

from .plasma import (DEFAULT_NODES, DeviceParams, PelletSpec, PlasmaProfileState,
                     RadialGrid, TransportCoefficients, default_coefficients,
                     default_grid, default_initial_state, pellet_source, rhs,
                     rk4_step, simulate_control_interval, vector_field)
from .prediction import (CondensedPrediction, ContinuousLinearModel,
                         ExtendedLtiModel, build_extended_model, condense, extend,
                         free_response, jacobian, zoh_discretize)
from .ocp import (CondensedOcp, PathConstraint, ReferenceSignal, Weights,
                  build_reference_state, condense_ocp, default_reference,
                  default_weights, greenwald_constraint, greenwald_limit,
                  line_avg_density, ocp_objective)
from .qp import QpProblem, QpSolution, solve as solve_qp
from .bnb import BnbConfig, MiMpcController, MipSolution, solve_bnb
from .pth import (PthMpcController, PthResult, PthSchedule, pth_homotopy,
                  relaxed_objective, solve_subproblem)
from .harness import (ClosedLoopTrace, MetricsReport, RelayController, Scenario,
                      ScenarioConfig, build_scenario, compute_metrics, read_trace,
                      relay_step, run_closed_loop, write_summary, write_trace)

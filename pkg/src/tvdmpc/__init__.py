"""Distributionally robust MPC with total-variation ambiguity sets."""

from .controllers import (CVAR_MPC, DRMPC, KINDS, NOMINAL, SMPC, TIGHT_DRMPC, ControlProblemSpec,
                          ControllerKind, MpcController, MpcStepResult, build_cvar_mpc_qp, build_drmpc_qp,
                          build_nominal_qp, build_smpc_miqp, build_tight_drmpc_qp, evaluate_cost_oracle,
                          receding_horizon_step)
from .dynamics import (BatchMatrices, LinearSystemModel, ScenarioSet, batch_matrices, disturbance_offset,
                       enumerate_scenarios, propagate_disturbed, propagate_nominal)
from .errors import (CapacityError, ConfigError, DimensionError, DomainError, ReportError, RiskWarning,
                     ScheduleError, SolverError, TvdMpcError)
from .montecarlo import (CampaignConfig, Cell, SimulationReport, compare_report, run_campaign, run_trial)
from .qp import QpProblem, QpSolution, kkt_residuals, solve_miqp, solve_qp
from .risk import (DiscreteDistribution, brute_force_tvd_sup, cvar_tail, expectation, sample_in_tvd_ball,
                   tvd_distance, tvd_risk, var_tail, worst_case_distribution)
from .tightening import (PolytopeConstraint, TighteningSchedule, ZetaLpSolution, build_schedule, cvar_margin,
                         exact_indicator_tightening, norm_margin, zeta_lp)

__version__ = "0.1.0"

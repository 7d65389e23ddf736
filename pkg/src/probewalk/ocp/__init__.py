"""Optimal-control problem assembly and the SQP solver."""

from probewalk.ocp.barriers import TABLE_I, BarrierParams, barrier_derivatives, relaxed_log_barrier
from probewalk.ocp.integrate import rk4_step
from probewalk.ocp.problem import AssemblyError, OcpProblem, RobotNLP, knot_times, transcribe
from probewalk.ocp.sqp import (
    LQProblem,
    SingularKKTError,
    Trajectory,
    dense_kkt_solve,
    linearize,
    merit,
    riccati_solve,
    solve_sqp,
)
from probewalk.ocp.terms import (
    ModeConstraints,
    References,
    ScheduleError,
    Weights,
    default_input_weights,
    default_state_weights,
    foot_placement_residuals,
    friction_cone_residual,
    mode_constraints,
    probing_barrier_rows,
    probing_force_residual,
    stage_cost,
    support_polygon_residuals,
)

__all__ = [
    "TABLE_I", "AssemblyError", "BarrierParams", "LQProblem", "ModeConstraints", "OcpProblem", "References",
    "RobotNLP", "ScheduleError", "SingularKKTError", "Trajectory", "Weights", "barrier_derivatives",
    "default_input_weights", "default_state_weights", "dense_kkt_solve", "foot_placement_residuals",
    "friction_cone_residual", "knot_times", "linearize", "merit", "mode_constraints", "probing_barrier_rows",
    "probing_force_residual", "relaxed_log_barrier", "riccati_solve", "rk4_step", "solve_sqp", "stage_cost",
    "support_polygon_residuals", "transcribe",
]

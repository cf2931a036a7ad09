"""Unbalanced optimal power flow with PV inverter control strategies."""
from .curtailment import CurtailmentReport, InverterDispatch, compute_curtailment
from .ipm import IpmOptions, IpmResult, interior_point
from .problem import TIE_BREAK_EPS, FormulationError, OptimizationProblem, Strategy, build_problem
from .solve import (INFEASIBLE, ITERATION_LIMIT, OPTIMAL, OpfSolution, SolverOptions,
                    default_tolerance, solve, solve_opf)
from .verify import VerificationError, VerificationReport, verify_solution

__all__ = [
    "CurtailmentReport", "InverterDispatch", "compute_curtailment",
    "IpmOptions", "IpmResult", "interior_point",
    "TIE_BREAK_EPS", "FormulationError", "OptimizationProblem", "Strategy", "build_problem",
    "INFEASIBLE", "ITERATION_LIMIT", "OPTIMAL", "OpfSolution", "SolverOptions",
    "default_tolerance", "solve", "solve_opf",
    "VerificationError", "VerificationReport", "verify_solution",
]

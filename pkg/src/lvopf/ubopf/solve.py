from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from ..netmodel import Network
from .ipm import IpmOptions, interior_point
from .problem import OptimizationProblem, Strategy, build_problem

logger = logging.getLogger(__name__)

OPTIMAL = "optimal_local"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"

TOL_ENV = "LVOPF_TOL"


def default_tolerance() -> float:
    raw = os.environ.get(TOL_ENV)
    if raw is None:
        return 1e-6
    try:
        tol = float(raw)
    except ValueError:
        raise ValueError(f"{TOL_ENV} must be a number, got {raw!r}") from None
    if not tol > 0:
        raise ValueError(f"{TOL_ENV} must be positive, got {raw!r}")
    return tol


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = field(default_factory=default_tolerance)
    opt_tol: float = field(default_factory=default_tolerance)
    max_iter: int = 500
    multistart: int = 5
    seed: int = 0
    perturbation: float = 0.05
    pv_init: float = 0.9


@dataclass(frozen=True, eq=False)
class OpfSolution:
    """Optimized operating point; all electrical quantities in per-unit."""

    strategy: Strategy
    node_ids: tuple[int, ...]
    voltages: np.ndarray
    conv_p: np.ndarray
    conv_q: np.ndarray
    pv_p: np.ndarray
    pv_q: np.ndarray
    objective: float
    status: str
    kkt_stationarity: float
    max_constraint_violation: float
    complementarity: float = 0.0
    iterations: int = 0
    message: str = ""
    regularization: float = 0.0
    starts: int = 1
    best_start: int = 0
    verification: Any = None

    @property
    def v_max(self) -> float:
        return float(np.abs(self.voltages).max())

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages).reshape(-1, 3)

    @property
    def verified(self) -> bool:
        return self.verification is not None and self.verification.passed

    def with_verification(self, report) -> "OpfSolution":
        return replace(self, verification=report)


def _classify(res, opts: SolverOptions) -> str:
    if res.converged and res.feasibility <= opts.feas_tol and res.stationarity <= opts.opt_tol:
        return OPTIMAL
    if res.message == "iteration limit":
        return ITERATION_LIMIT
    return INFEASIBLE


def _solve_once(problem: OptimizationProblem, x0: np.ndarray, opts: SolverOptions) -> OpfSolution:
    ipm_opts = IpmOptions(feas_tol=0.01 * opts.feas_tol, grad_tol=0.01 * opts.opt_tol,
                          comp_tol=0.001 * opts.opt_tol, max_iter=opts.max_iter)
    res = interior_point(problem.objective, problem.constraints, problem.hessian, x0, ipm_opts)
    parts = problem.unpack(res.x)
    status = _classify(res, opts)
    g, _, h, _ = problem.constraints(res.x)
    viol = max(float(np.abs(g).max(initial=0.0)), float(h.max(initial=0.0)), 0.0)
    short = problem.s_avail - parts["pv_p"]
    logger.info("%s start: %s after %d iterations (%s), viol %.2e",
                problem.strategy.value, status, res.iterations, res.message, viol)
    return OpfSolution(
        strategy=problem.strategy,
        node_ids=tuple(problem.network.node_ids),
        voltages=parts["voltages"],
        conv_p=parts["conv_p"], conv_q=parts["conv_q"],
        pv_p=parts["pv_p"], pv_q=parts["pv_q"],
        objective=problem.cost(res.x),
        status=status,
        kkt_stationarity=res.stationarity,
        max_constraint_violation=viol,
        complementarity=res.complementarity,
        iterations=res.iterations,
        message=res.message,
        regularization=problem.tie_break * float(short @ short),
    )


def start_fractions(problem: OptimizationProblem, opts: SolverOptions) -> list[np.ndarray]:
    """Initial PV fractions: the nominal start, then seeded perturbations."""
    rng = np.random.default_rng(opts.seed)
    base = np.full(problem.m, opts.pv_init)
    starts = [base]
    for _ in range(max(opts.multistart, 1) - 1):
        starts.append(base * (1.0 + rng.uniform(-opts.perturbation, opts.perturbation, problem.m)))
    return starts


def solve(problem: OptimizationProblem, options: SolverOptions | None = None) -> OpfSolution:
    """Multistart local solve; keeps the best locally optimal point.

    If no start reaches local optimality, the least-violating iterate is
    returned with its honest status.
    """
    opts = options or SolverOptions()
    candidates = []
    for k, frac in enumerate(start_fractions(problem, opts)):
        sol = _solve_once(problem, problem.initial_point(frac), opts)
        candidates.append(replace(sol, best_start=k))
    optimal = [c for c in candidates if c.status == OPTIMAL]
    if optimal:
        best = min(optimal, key=lambda c: c.objective + c.regularization)
    else:
        best = min(candidates, key=lambda c: (c.max_constraint_violation, c.best_start))
    return replace(best, starts=len(candidates))


def solve_opf(network: Network, strategy, options: SolverOptions | None = None) -> OpfSolution:
    return solve(build_problem(network, strategy), options)

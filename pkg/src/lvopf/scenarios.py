"""Scenario transformations of a base feeder and strategy comparison studies."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .netmodel import Network, Phase, bundled_path, loads_by_phase, network_to_dict
from .powerflow import PfSolution, PowerFlowError, solve_power_flow
from .ubopf import (OPTIMAL, CurtailmentReport, OpfSolution, SolverOptions, Strategy,
                    VerificationError, compute_curtailment, solve_opf, verify_solution)

logger = logging.getLogger(__name__)

SHARE_TOLERANCE = 1.0   # percentage points


class ScenarioError(ValueError):
    pass


class UnreachableSharesError(ScenarioError):
    def __init__(self, target, achieved):
        self.target = tuple(target)
        self.achieved = tuple(achieved)
        fmt = "/".join(f"{s:.1f}" for s in achieved)
        super().__init__(f"phase shares {'/'.join(f'{s:.1f}' for s in target)} unreachable "
                         f"with whole-load moves; best achievable {fmt}")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    pv_scale: float = 1.0
    demand_scale: float = 1.0
    capacitive_fraction: float = 0.0
    phase_shares: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not (self.pv_scale > 0 and math.isfinite(self.pv_scale)):
            raise ScenarioError(f"{self.name}: pv_scale must be positive")
        if not (self.demand_scale > 0 and math.isfinite(self.demand_scale)):
            raise ScenarioError(f"{self.name}: demand_scale must be positive")
        if not 0.0 <= self.capacitive_fraction <= 1.0:
            raise ScenarioError(f"{self.name}: capacitive_fraction must lie in [0, 1]")
        if self.phase_shares is not None:
            shares = tuple(float(s) for s in self.phase_shares)
            if len(shares) != 3 or any(s < 0 for s in shares):
                raise ScenarioError(f"{self.name}: phase_shares needs three non-negative values")
            if abs(sum(shares) - 100.0) > 0.1:
                raise ScenarioError(f"{self.name}: phase_shares sum to {sum(shares):.2f}, not 100")
            object.__setattr__(self, "phase_shares", shares)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_shares"] = list(self.phase_shares) if self.phase_shares else None
        return d


def load_specs(path: "str | Path") -> list[ScenarioSpec]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    entries = doc["scenarios"] if isinstance(doc, dict) else doc
    specs = []
    for k, e in enumerate(entries):
        try:
            specs.append(ScenarioSpec(
                name=str(e["name"]),
                pv_scale=float(e.get("pv_scale", 1.0)),
                demand_scale=float(e.get("demand_scale", 1.0)),
                capacitive_fraction=float(e.get("capacitive_fraction", 0.0)),
                phase_shares=e.get("phase_shares")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"scenarios[{k}]: {exc}") from None
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ScenarioError("scenario names must be unique")
    return specs


def default_specs() -> list[ScenarioSpec]:
    """The bundled baseline and S1-S5 variations."""
    return load_specs(bundled_path("scenarios.json"))


# -- transformations ---------------------------------------------------------

def _shares(p: np.ndarray, phases: np.ndarray) -> np.ndarray:
    tot = np.bincount(phases, weights=p, minlength=3)
    return 100.0 * tot / tot.sum()


def reallocate_phases(p: np.ndarray, phases: np.ndarray, target, tolerance: float = SHARE_TOLERANCE,
                      max_steps: int = 100) -> np.ndarray:
    """Greedy whole-load moves and pairwise swaps toward target P shares.

    Each step applies the single move or swap with the largest reduction of
    the squared share error; ties go to the first candidate in load order.
    Returns the new phase assignment.
    """
    target = np.asarray(target, float)
    phases = np.array(phases, dtype=int)
    n = len(p)

    def err(ph):
        return float(np.sum((_shares(p, ph) - target) ** 2))

    current = err(phases)
    for _ in range(max_steps):
        best, best_err = None, current
        for k in range(n):
            for ph in range(3):
                if ph == phases[k]:
                    continue
                trial = phases.copy()
                trial[k] = ph
                e = err(trial)
                if e < best_err - 1e-12:
                    best, best_err = trial, e
        for k, l in itertools.combinations(range(n), 2):
            if phases[k] == phases[l]:
                continue
            trial = phases.copy()
            trial[k], trial[l] = phases[l], phases[k]
            e = err(trial)
            if e < best_err - 1e-12:
                best, best_err = trial, e
        if best is None:
            break
        phases, current = best, best_err
    achieved = _shares(p, phases)
    if np.abs(achieved - target).max() > tolerance:
        raise UnreachableSharesError(target, achieved)
    return phases


def apply_scenario(base: Network, spec: ScenarioSpec) -> Network:
    """Derive a scenario network; the base is left untouched.

    Order: demand scaling, capacitive flip of the first ceil(f*N) loads in
    load order, phase reallocation, PV scaling.
    """
    loads = [replace(ld, p_demand=ld.p_demand * spec.demand_scale,
                     q_demand=ld.q_demand * spec.demand_scale) for ld in base.loads]
    n_flip = math.ceil(spec.capacitive_fraction * len(loads) - 1e-9)
    for k in range(n_flip):
        loads[k] = replace(loads[k], q_demand=-abs(loads[k].q_demand))
    if spec.phase_shares is not None and loads:
        p = np.array([ld.p_demand for ld in loads])
        ph = reallocate_phases(p, np.array([int(ld.phase) for ld in loads]), spec.phase_shares)
        loads = [replace(ld, phase=Phase(int(k))) for ld, k in zip(loads, ph)]
    pvs = tuple(replace(pv, s_available=pv.s_available * spec.pv_scale) for pv in base.pv_inverters)
    return replace(base, loads=tuple(loads), pv_inverters=pvs)


# -- studies -----------------------------------------------------------------

STRATEGIES = (Strategy.NoControl, Strategy.ActiveOnly, Strategy.ActiveReactive)


@dataclass(frozen=True)
class StrategyOutcome:
    strategy: Strategy
    status: str
    report: CurtailmentReport | None = None
    max_violation: float = float("nan")
    message: str = ""
    solution: OpfSolution | PfSolution | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None


@dataclass(frozen=True)
class ScenarioOutcome:
    spec: ScenarioSpec
    v_max_no_control: float
    outcomes: tuple[StrategyOutcome, ...]
    p_shares: tuple[float, float, float] = (0.0, 0.0, 0.0)
    q_shares: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def name(self) -> str:
        return self.spec.name

    def __getitem__(self, strategy) -> StrategyOutcome:
        s = Strategy.parse(strategy)
        return next(o for o in self.outcomes if o.strategy is s)


@dataclass(frozen=True)
class StudyResult:
    scenarios: tuple[ScenarioOutcome, ...]
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> ScenarioOutcome:
        for row in self.scenarios:
            if row.name == name:
                return row
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [row.name for row in self.scenarios]


def network_hash(network: Network) -> str:
    doc = json.dumps(network_to_dict(network), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()


def _percent(v: np.ndarray) -> tuple[float, float, float]:
    tot = v.sum()
    return tuple(float(x) for x in (100.0 * v / tot if tot else v))


def run_scenario(base: Network, spec: ScenarioSpec, options: SolverOptions | None = None) -> ScenarioOutcome:
    net = apply_scenario(base, spec)
    try:
        pf = solve_power_flow(net)
        v_nc = pf.v_max
        outcomes = [StrategyOutcome(Strategy.NoControl, "converged", compute_curtailment(net, pf), 0.0,
                                     solution=pf)]
    except PowerFlowError as exc:
        v_nc = float("nan")
        outcomes = [StrategyOutcome(Strategy.NoControl, "pf_failed", message=str(exc))]
    previous = None
    for strategy in STRATEGIES[1:]:
        sol = solve_opf(net, strategy, options)
        if sol.status != OPTIMAL:
            logger.warning("%s/%s: %s (%s)", spec.name, strategy.value, sol.status, sol.message)
            outcomes.append(StrategyOutcome(strategy, sol.status, None, sol.max_constraint_violation,
                                            sol.message))
            continue
        try:
            check = verify_solution(net, sol)
        except VerificationError as exc:
            outcomes.append(StrategyOutcome(strategy, "unverified", None, exc.violation, str(exc)))
            continue
        if not check.passed:
            outcomes.append(StrategyOutcome(strategy, "unverified", None, check.max_violation,
                                            f"worst family {check.worst}"))
            continue
        sol = sol.with_verification(check)
        report = compute_curtailment(net, sol, previous)
        outcomes.append(StrategyOutcome(strategy, sol.status, report, check.max_violation,
                                        solution=sol))
        previous = sol
    return ScenarioOutcome(spec, v_nc, tuple(outcomes),
                           _percent(loads_by_phase(net, "p_demand")),
                           _percent(loads_by_phase(net, "q_demand")))


def _run_row(args):
    return run_scenario(*args)


def run_study(base: Network, specs, options: SolverOptions | None = None,
              max_workers: int = 1) -> StudyResult:
    """No-control power flow plus both optimized strategies for every scenario.

    Rows are independent; with ``max_workers > 1`` they run in separate
    processes and are reassembled in input order.
    """
    specs = list(specs)
    options = options or SolverOptions()
    jobs = [(base, s, options) for s in specs]
    if max_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            rows = tuple(pool.map(_run_row, jobs))
    else:
        rows = tuple(_run_row(j) for j in jobs)
    provenance = {
        "base_network_sha256": network_hash(base),
        "specs": [s.to_dict() for s in specs],
        "solver": {"feas_tol": options.feas_tol, "opt_tol": options.opt_tol,
                   "multistart": options.multistart, "seed": options.seed},
        "capacitive_selection": "first ceil(f*N) loads in load order",
    }
    return StudyResult(rows, provenance)

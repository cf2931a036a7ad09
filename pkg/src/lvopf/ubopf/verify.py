"""Independent feasibility check of an OPF operating point.

Nothing here reuses the optimizer's constraint code: balances are rebuilt
from the admittance matrix, line flows from the branch blocks, and the
voltages are cross-checked by an ordinary power flow with the optimized
injections held fixed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..admittance import assemble_global_admittance, line_flows
from ..netmodel import Network, as_per_unit
from ..powerflow import (PowerFlowError, nodal_current_injections, nodal_power_injections,
                         network_injections, slack_rows, solve_power_flow)
from .problem import Strategy

PASS_TOL = 1e-6
FAIL_TOL = 1e-5


class VerificationError(RuntimeError):
    def __init__(self, family: str, violation: float):
        self.family = family
        self.violation = violation
        super().__init__(f"verification failed: {family} violated by {violation:.3e} pu")


@dataclass(frozen=True)
class VerificationReport:
    """Worst violation per constraint family (per-unit; the disc in pu^2)."""

    families: dict
    tolerance: float = PASS_TOL

    @property
    def max_violation(self) -> float:
        return max(self.families.values(), default=0.0)

    @property
    def worst(self) -> str:
        return max(self.families, key=self.families.get)

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.families.values())

    def __str__(self) -> str:
        rows = [f"  {k:<14s} {v:.3e}" for k, v in self.families.items()]
        head = "verification " + ("passed" if self.passed else f"FAILED ({self.worst})")
        return "\n".join([head, *rows])


def _excess(values) -> float:
    values = np.asarray(values, float)
    return float(np.maximum(values, 0.0).max(initial=0.0))


def verify_solution(network: Network, solution, *, strict: bool = True,
                    tolerance: float = PASS_TOL) -> VerificationReport:
    """Recompute every constraint residual of ``solution`` from scratch.

    With ``strict``, any family off by more than ``FAIL_TOL`` raises
    :class:`VerificationError` naming that family.
    """
    net = as_per_unit(network)
    y = assemble_global_admittance(net)
    v = np.asarray(solution.voltages, complex)
    pv_p, pv_q = np.asarray(solution.pv_p, float), np.asarray(solution.pv_q, float)
    conv = np.asarray(solution.conv_p) + 1j * np.asarray(solution.conv_q)
    s_avail = np.array([pv.s_available for pv in net.pv_inverters], float)
    lim = net.limits

    injected = network_injections(net, pv_p, pv_q, conv)
    drawn = nodal_power_injections(v, nodal_current_injections(y, v))
    mismatch = drawn - injected
    slack = slack_rows(net)
    free = np.setdiff1d(np.arange(v.size), slack)
    vm = np.abs(v)

    fam = {
        "p_balance": float(np.abs(mismatch.real).max()),
        "q_balance": float(np.abs(mismatch.imag).max()),
        "slack_voltage": float(np.abs(v[slack] - net.slack_voltages()).max()),
        "v_max": _excess(vm[free] - lim.v_max),
        "v_min": _excess(lim.v_min - vm[free]),
    }
    gens = net.conventional_generators
    fam["conv_p"] = max((_excess(np.r_[solution.conv_p[k] - g.p_max, g.p_min - solution.conv_p[k]])
                         for k, g in enumerate(gens)), default=0.0)
    fam["conv_q"] = max((_excess(np.r_[solution.conv_q[k] - g.q_max, g.q_min - solution.conv_q[k]])
                         for k, g in enumerate(gens)), default=0.0)
    fam["pv_disc"] = _excess(pv_p ** 2 + pv_q ** 2 - s_avail ** 2)
    fam["pv_p_min"] = _excess(-pv_p)

    strategy = Strategy.parse(solution.strategy)
    if strategy in (Strategy.ActiveOnly, Strategy.NoControl):
        fam["pv_q_zero"] = float(np.abs(pv_q).max(initial=0.0))
    if strategy is Strategy.NoControl:
        fam["pv_p_fixed"] = float(np.abs(pv_p - s_avail).max(initial=0.0))

    limits = np.array([ln.p_flow_max for ln in net.lines], float)
    if np.isfinite(limits).any():
        sending = line_flows(net, y, v)[:, 0, :].real
        finite = np.isfinite(limits)
        fam["line_flow"] = _excess(np.abs(sending[finite]) - limits[finite, None])
    else:
        fam["line_flow"] = 0.0

    try:
        pf = solve_power_flow(net, injected, y=y)
        fam["pf_agreement"] = float(np.abs(pf.voltages - v).max())
    except PowerFlowError:
        fam["pf_agreement"] = math.inf

    report = VerificationReport(fam, tolerance)
    if strict and report.max_violation > FAIL_TOL:
        raise VerificationError(report.worst, report.max_violation)
    return report

"""PV curtailment accounting for a dispatched or uncontrolled feeder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netmodel import Network, Phase, as_per_unit
from ..powerflow import PfSolution
from .problem import Strategy


@dataclass(frozen=True)
class InverterDispatch:
    node: int
    phase: Phase
    s_available_kva: float
    p_kw: float
    q_kvar: float
    delta_p_kw: float = float("nan")   # P here minus P in the comparison case


@dataclass(frozen=True)
class CurtailmentReport:
    strategy: Strategy
    p_available_kw: float
    p_injected_kw: float
    p_curtailed_kw: float
    curtailed_pct: float
    v_max_pu: float
    inverters: tuple[InverterDispatch, ...]


def _dispatch(net: Network, solution) -> tuple[np.ndarray, np.ndarray, Strategy]:
    if isinstance(solution, PfSolution):
        p = np.array([pv.s_available for pv in net.pv_inverters], float)
        return p, np.zeros_like(p), Strategy.NoControl
    return (np.asarray(solution.pv_p, float), np.asarray(solution.pv_q, float),
            Strategy.parse(solution.strategy))


def compute_curtailment(network: Network, solution, compare=None) -> CurtailmentReport:
    """Available vs. injected PV power for an OPF solution or a no-control power flow.

    ``compare`` (another solution on the same network) fills the per-inverter
    ``delta_p_kw`` column.
    """
    net = as_per_unit(network)
    kw = net.s_base / 1000.0
    p, q, strategy = _dispatch(net, solution)
    s = np.array([pv.s_available for pv in net.pv_inverters], float)
    delta = np.full(p.shape, np.nan)
    if compare is not None:
        delta = p - _dispatch(net, compare)[0]
    available, injected = float(s.sum()) * kw, float(p.sum()) * kw
    curtailed = available - injected
    units = tuple(
        InverterDispatch(pv.node, pv.phase, float(s[k] * kw), float(p[k] * kw), float(q[k] * kw),
                         float(delta[k] * kw))
        for k, pv in enumerate(net.pv_inverters))
    return CurtailmentReport(
        strategy=strategy,
        p_available_kw=available,
        p_injected_kw=injected,
        p_curtailed_kw=curtailed,
        curtailed_pct=100.0 * curtailed / available if available > 0 else 0.0,
        v_max_pu=float(np.abs(solution.voltages).max()),
        inverters=units,
    )

"""Unbalanced power flow with fixed nodal injections.

Newton-Raphson on the real and imaginary parts of every non-slack phase
voltage. The slack node holds balanced phasors and absorbs the residual.
"""
from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .admittance import GlobalAdmittance, assemble_global_admittance
from .netmodel import Network, Phase, as_per_unit

logger = logging.getLogger(__name__)

PF_TOL = 1e-8
PF_MAX_ITER = 50


class PowerFlowError(RuntimeError):
    pass


class PowerFlowDiverged(PowerFlowError):
    def __init__(self, iterations: int, mismatch: float):
        self.iterations = iterations
        self.mismatch = mismatch
        super().__init__(f"power flow did not converge in {iterations} iterations "
                         f"(final mismatch {mismatch:.3e} pu)")


class SingularJacobianError(PowerFlowError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"singular Jacobian at iteration {iteration}")


@dataclass(frozen=True, eq=False)
class PfSolution:
    """Per-(node, phase) results in node-major, phase-minor order (per-unit)."""

    node_ids: tuple[int, ...]
    voltages: np.ndarray
    currents: np.ndarray
    powers: np.ndarray
    max_mismatch: float
    iterations: int
    converged: bool

    def _row(self, node_id: int, phase) -> int:
        return 3 * self.node_ids.index(node_id) + int(Phase.parse(phase))

    def voltage(self, node_id: int, phase) -> complex:
        return complex(self.voltages[self._row(node_id, phase)])

    def power(self, node_id: int, phase) -> complex:
        return complex(self.powers[self._row(node_id, phase)])

    def current(self, node_id: int, phase) -> complex:
        return complex(self.currents[self._row(node_id, phase)])

    @property
    def magnitudes(self) -> np.ndarray:
        """|V| as an (n_nodes, 3) array."""
        return np.abs(self.voltages).reshape(-1, 3)

    @property
    def v_max(self) -> float:
        return float(np.abs(self.voltages).max())

    def argmax(self) -> tuple[int, Phase]:
        k = int(np.argmax(np.abs(self.voltages)))
        return self.node_ids[k // 3], Phase(k % 3)


def nodal_current_injections(y: GlobalAdmittance, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape != (y.size,):
        raise ValueError(f"voltage vector has shape {v.shape}, expected ({y.size},)")
    return y.matrix @ v


def nodal_power_injections(v: np.ndarray, i: np.ndarray) -> np.ndarray:
    return np.asarray(v, complex) * np.conj(np.asarray(i, complex))


def slack_rows(network: Network) -> np.ndarray:
    base = 3 * network.node_position(network.slack.id)
    return np.arange(base, base + 3)


def network_injections(network: Network, pv_p=None, pv_q=None, conv=None) -> np.ndarray:
    """Net complex injection per (node, phase), per-unit.

    ``pv_p``/``pv_q`` default to the no-control operating point: every
    inverter at its available power, unity power factor. ``conv`` is an
    optional (n_gen, 3) complex array of conventional injections.
    """
    net = as_per_unit(network)
    s = np.zeros(3 * net.n_nodes, dtype=complex)
    for ld in net.loads:
        s[net.index(ld.node, ld.phase)] -= complex(ld.p_demand, ld.q_demand)
    p = [pv.s_available for pv in net.pv_inverters] if pv_p is None else pv_p
    q = np.zeros(len(net.pv_inverters)) if pv_q is None else pv_q
    for pv, pk, qk in zip(net.pv_inverters, p, q):
        s[net.index(pv.node, pv.phase)] += complex(pk, qk)
    if conv is not None:
        for g, sg in zip(net.conventional_generators, conv):
            base = net.index(g.node, 0)
            s[base:base + 3] += np.asarray(sg, complex)
    return s


def _jacobian(y: sp.csr_matrix, v: np.ndarray, rows: np.ndarray) -> sp.csr_matrix:
    i_conj = np.conj(y @ v)
    dv = sp.diags(v)
    ds_de = sp.diags(i_conj) + dv @ y.conj()
    ds_df = 1j * (sp.diags(i_conj) - dv @ y.conj())
    ds_de = ds_de[rows][:, rows]
    ds_df = ds_df[rows][:, rows]
    return sp.bmat([[ds_de.real, ds_df.real], [ds_de.imag, ds_df.imag]], format="csc")


def solve_power_flow(network: Network, fixed_injections=None, *, tol: float = PF_TOL,
                     max_iter: int = PF_MAX_ITER, y: GlobalAdmittance | None = None,
                     v0: np.ndarray | None = None) -> PfSolution:
    """Solve for voltages given complex injections at every non-slack (node, phase).

    ``fixed_injections`` is a length-3n complex array in per-unit (entries at
    slack rows are ignored); it defaults to ``network_injections(network)``.
    """
    net = as_per_unit(network)
    if y is None:
        y = assemble_global_admittance(net)
    s_spec = network_injections(net) if fixed_injections is None else np.asarray(fixed_injections, complex)
    n = y.size
    if s_spec.shape != (n,):
        raise ValueError(f"injection vector has shape {s_spec.shape}, expected ({n},)")
    slack = slack_rows(net)
    free = np.setdiff1d(np.arange(n), slack)
    v = np.tile(net.slack_voltages(), net.n_nodes) if v0 is None else np.array(v0, complex)
    v[slack] = net.slack_voltages()
    ymat = y.matrix.tocsr()

    def mismatch(vv):
        return (s_spec - vv * np.conj(ymat @ vv))[free]

    dS = mismatch(v)
    err = float(np.abs(dS).max(initial=0.0))
    it = 0
    while err > tol:
        if it >= max_iter:
            raise PowerFlowDiverged(it, err)
        it += 1
        jac = _jacobian(ymat, v, free)
        rhs = np.concatenate([dS.real, dS.imag])
        try:
            with np.errstate(all="raise"), warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                dx = spla.spsolve(jac, rhs)
        except (RuntimeError, FloatingPointError, ValueError, spla.MatrixRankWarning):
            raise SingularJacobianError(it) from None
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(it)
        step = dx[:free.size] + 1j * dx[free.size:]
        alpha = 1.0
        while True:
            trial = v.copy()
            trial[free] += alpha * step
            dS_trial = mismatch(trial)
            err_trial = float(np.abs(dS_trial).max(initial=0.0))
            if err_trial < err or alpha < 1.0 / 64:
                break
            alpha *= 0.5
        v, dS, err = trial, dS_trial, err_trial
        logger.debug("pf iteration %d: mismatch %.3e (step %.3g)", it, err, alpha)

    cur = ymat @ v
    return PfSolution(tuple(net.node_ids), v, cur, v * np.conj(cur), err, it, True)


# -- Thevenin voltage-rise estimate ------------------------------------------

@dataclass(frozen=True)
class TheveninEquivalent:
    r_th: float
    x_th: float
    u_th: float


def estimate_voltage_rise(p: float, q: float, th: TheveninEquivalent) -> float:
    """Linearized rise ``(P R + Q X) / U`` at the point of common coupling."""
    if not th.u_th > 0:
        raise ValueError(f"Thevenin voltage must be positive, got {th.u_th}")
    return (p * th.r_th + q * th.x_th) / th.u_th


class MeshedNetworkError(ValueError):
    pass


def extract_thevenin(network: Network, node: int, phase) -> TheveninEquivalent:
    """Series impedance seen from ``node`` back to the slack on one phase (per-unit).

    Only defined for radial feeders; the upstream source is ideal.
    """
    net = as_per_unit(network)
    ph = int(Phase.parse(phase))
    if len(net.lines) != net.n_nodes - 1:
        raise MeshedNetworkError("Thevenin extraction requires a radial network")
    adj: dict[int, list[tuple[int, complex]]] = {i: [] for i in net.node_ids}
    for ln in net.lines:
        z = complex(ln.z_series[ph, ph])
        adj[ln.from_node].append((ln.to_node, z))
        adj[ln.to_node].append((ln.from_node, z))
    root = net.slack.id
    acc = {root: 0j}
    queue = deque([root])
    while queue:
        cur = queue.popleft()
        for nb, z in adj[cur]:
            if nb not in acc:
                acc[nb] = acc[cur] + z
                queue.append(nb)
    if node not in acc:
        raise ValueError(f"node {node} is not connected to the slack")
    u_th = float(net.slack.nominal_phase_voltage)
    return TheveninEquivalent(acc[node].real, acc[node].imag, u_th)


def voltage_rise(pf: PfSolution, node: int, phase, u_th: float) -> float:
    """Exact magnitude rise ``|U_pcc| - |U_th|`` from a power-flow solution."""
    return float(abs(pf.voltage(node, phase)) - abs(u_th))


def max_voltage_volts(pf: PfSolution, network: Network) -> float:
    """Largest phase-voltage magnitude in volts."""
    return pf.v_max * network.v_base_phase

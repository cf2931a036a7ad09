"""Nonlinear UBOPF formulation in rectangular voltage coordinates.

Decision vector layout (per-unit)::

    [Re V (3n) | Im V (3n) | P_conv (3 per gen) | Q_conv | P_pv (m) | Q_pv (m)]

The slack node keeps its voltage variables but is pinned to its balanced
phasors by equality rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from ..admittance import GlobalAdmittance, assemble_global_admittance
from ..netmodel import Network, as_per_unit
from ..powerflow import slack_rows
from .quadratic import ComplexPowerMap

TIE_BREAK_EPS = 1e-6


class Strategy(str, Enum):
    NoControl = "none"
    ActiveOnly = "p_only"
    ActiveReactive = "pq"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"none": cls.NoControl, "no_control": cls.NoControl, "nocontrol": cls.NoControl,
                   "p": cls.ActiveOnly, "p_only": cls.ActiveOnly, "activeonly": cls.ActiveOnly,
                   "active_only": cls.ActiveOnly,
                   "pq": cls.ActiveReactive, "p+q": cls.ActiveReactive,
                   "activereactive": cls.ActiveReactive, "active_reactive": cls.ActiveReactive}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown strategy {value!r}") from None


class FormulationError(ValueError):
    pass


@dataclass
class _Block:
    """A family of constraint rows: name and row range."""
    name: str
    start: int
    stop: int

    @property
    def rows(self) -> slice:
        return slice(self.start, self.stop)


class OptimizationProblem:
    """Objective, constraints and derivatives for one network and strategy."""

    def __init__(self, network: Network, strategy: Strategy, *, tie_break: float = TIE_BREAK_EPS,
                 y: GlobalAdmittance | None = None):
        self.network = net = as_per_unit(network)
        self.strategy = Strategy.parse(strategy)
        self.tie_break = tie_break
        self.y = y if y is not None else assemble_global_admittance(net)
        if not net.conventional_generators:
            raise FormulationError("at least one conventional generator is required")

        n = self.nv = 3 * net.n_nodes
        ng, m = len(net.conventional_generators), len(net.pv_inverters)
        self.ng, self.m = ng, m
        off = 2 * n
        self.sl_e, self.sl_f = slice(0, n), slice(n, 2 * n)
        self.sl_pc, self.sl_qc = slice(off, off + 3 * ng), slice(off + 3 * ng, off + 6 * ng)
        off += 6 * ng
        self.sl_ppv, self.sl_qpv = slice(off, off + m), slice(off + m, off + 2 * m)
        self.n_vars = off + 2 * m

        self.slack = slack_rows(net)
        self.v_slack = net.slack_voltages()
        self.free_rows = np.setdiff1d(np.arange(n), self.slack)

        self.pd = np.zeros(n)
        self.qd = np.zeros(n)
        for ld in net.loads:
            k = net.index(ld.node, ld.phase)
            self.pd[k] += ld.p_demand
            self.qd[k] += ld.q_demand
        gen_rows = np.concatenate([np.arange(3) + net.index(g.node, 0)
                                   for g in net.conventional_generators])
        self.gen_map = sp.csr_matrix((np.ones(3 * ng), (gen_rows, np.arange(3 * ng))), shape=(n, 3 * ng))
        pv_rows = np.array([net.index(pv.node, pv.phase) for pv in net.pv_inverters], dtype=int)
        self.pv_map = sp.csr_matrix((np.ones(m), (pv_rows, np.arange(m))), shape=(n, m))
        self.s_avail = np.array([pv.s_available for pv in net.pv_inverters], dtype=float)

        costs = np.array([g.cost for g in net.conventional_generators], dtype=float)
        self.cost_scale = float(costs.max()) if costs.size and costs.max() > 0 else 1.0
        self.cost_pu = np.repeat(costs, 3)
        self.c = self.cost_pu / self.cost_scale
        self.p_bounds = (np.repeat([g.p_min for g in net.conventional_generators], 3),
                         np.repeat([g.p_max for g in net.conventional_generators], 3))
        self.q_bounds = (np.repeat([g.q_min for g in net.conventional_generators], 3),
                         np.repeat([g.q_max for g in net.conventional_generators], 3))

        self.nodal = ComplexPowerMap(sp.identity(n, format="csr"), self.y.matrix)
        self._build_flow_map()
        self._layout_constraints()

    # -- structure ------------------------------------------------------

    def _build_flow_map(self):
        net, y = self.network, self.y
        limited = [k for k, ln in enumerate(net.lines) if math.isfinite(ln.p_flow_max)]
        n = self.nv
        rows_a, cols_a, rows_b, cols_b, vals_b = [], [], [], [], []
        limits = []
        for r_line, k in enumerate(limited):
            ln, br = net.lines[k], y.branches[k]
            oi, oj = y.index(ln.from_node, 0), y.index(ln.to_node, 0)
            for ph in range(3):
                r = 3 * r_line + ph
                rows_a.append(r)
                cols_a.append(oi + ph)
                for col in range(3):
                    rows_b += [r, r]
                    cols_b += [oi + col, oj + col]
                    vals_b += [br.y_ii[ph, col], br.y_ij[ph, col]]
                limits.append(ln.p_flow_max)
        nr = 3 * len(limited)
        a = sp.csr_matrix((np.ones(nr), (rows_a, cols_a)), shape=(nr, n))
        b = sp.csr_matrix((np.array(vals_b, complex), (rows_b, cols_b)), shape=(nr, n))
        self.flow = ComplexPowerMap(a, b) if nr else None
        self.flow_limits = np.array(limits, dtype=float)
        self.limited_lines = tuple(limited)

    def _layout_constraints(self):
        n, m = self.nv, self.m
        s = self.strategy
        eq = [("p_balance", n), ("q_balance", n), ("slack_re", 3), ("slack_im", 3)]
        self.zero_cap = self.s_avail <= 0
        self.q_fixed = np.ones(m, bool) if s in (Strategy.ActiveOnly, Strategy.NoControl) else self.zero_cap.copy()
        self.p_fixed = np.ones(m, bool) if s is Strategy.NoControl else self.zero_cap.copy()
        eq += [("pv_q_fixed", int(self.q_fixed.sum())), ("pv_p_fixed", int(self.p_fixed.sum()))]

        nfree = self.free_rows.size
        p_free = ~self.p_fixed
        self.disc_units = np.flatnonzero(p_free & ~self.q_fixed) if s is Strategy.ActiveReactive else np.array([], int)
        self.upper_units = np.flatnonzero(p_free) if s is Strategy.ActiveOnly else np.array([], int)
        self.lower_units = np.flatnonzero(p_free)
        iq = [("v_max", nfree), ("v_min", nfree),
              ("conv_p_max", 3 * self.ng), ("conv_p_min", 3 * self.ng),
              ("conv_q_max", 3 * self.ng), ("conv_q_min", 3 * self.ng),
              ("pv_p_min", self.lower_units.size), ("pv_p_max", self.upper_units.size),
              ("pv_disc", self.disc_units.size),
              ("flow_max", self.flow_limits.size), ("flow_min", self.flow_limits.size)]
        self.eq_blocks = _blocks(eq)
        self.iq_blocks = _blocks(iq)
        self.n_eq = self.eq_blocks[-1].stop
        self.n_iq = self.iq_blocks[-1].stop

    def block(self, name: str) -> _Block:
        for b in self.eq_blocks + self.iq_blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def count(self, name: str) -> int:
        b = self.block(name)
        return b.stop - b.start

    # -- starting point -------------------------------------------------

    def initial_point(self, pv_fraction=0.9) -> np.ndarray:
        """Flat start; ``pv_fraction`` may be a scalar or per-inverter array."""
        x = np.zeros(self.n_vars)
        v = np.tile(self.v_slack, self.network.n_nodes)
        x[self.sl_e], x[self.sl_f] = v.real, v.imag
        frac = np.broadcast_to(np.asarray(pv_fraction, float), (self.m,))
        ppv = np.clip(frac, 0.0, 1.0) * self.s_avail
        ppv[self.p_fixed] = self.s_avail[self.p_fixed]
        ppv[self.zero_cap] = 0.0
        x[self.sl_ppv] = ppv
        net_p = self.pd - self.pv_map @ ppv
        per_phase_p = net_p.reshape(-1, 3).sum(axis=0)
        per_phase_q = self.qd.reshape(-1, 3).sum(axis=0)
        lo, hi = self.p_bounds
        x[self.sl_pc] = np.clip(np.tile(per_phase_p / self.ng, self.ng), lo, hi)
        lo, hi = self.q_bounds
        x[self.sl_qc] = np.clip(np.tile(per_phase_q / self.ng, self.ng), lo, hi)
        return x

    # -- evaluation -----------------------------------------------------

    def voltages(self, x: np.ndarray) -> np.ndarray:
        return x[self.sl_e] + 1j * x[self.sl_f]

    def objective(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Normalized cost plus the curtailment tie-breaker, and its gradient."""
        grad = np.zeros(self.n_vars)
        pc = x[self.sl_pc]
        short = self.s_avail - x[self.sl_ppv]
        f = float(self.c @ pc) + self.tie_break * float(short @ short)
        grad[self.sl_pc] = self.c
        grad[self.sl_ppv] = -2.0 * self.tie_break * short
        return f, grad

    def cost(self, x: np.ndarray) -> float:
        """Generation cost in currency units (cost per W times W)."""
        return float(self.cost_pu @ x[self.sl_pc])

    def constraints(self, x: np.ndarray):
        """Return ``g, dg, h, dh``; rows are constraints, columns variables."""
        n, nx = self.nv, self.n_vars
        v = self.voltages(x)
        e, f = x[self.sl_e], x[self.sl_f]
        pc, qc, ppv, qpv = x[self.sl_pc], x[self.sl_qc], x[self.sl_ppv], x[self.sl_qpv]

        s = self.nodal.value(v)
        jp, jq = self.nodal.jacobian(v)
        g_parts, dg_parts = [], []

        def cols(block_slice, mat):
            return _place(mat, block_slice.start, nx)

        zpad = sp.csr_matrix((n, nx - 2 * n))
        g_parts.append(s.real - self.gen_map @ pc - self.pv_map @ ppv + self.pd)
        dg_parts.append(sp.hstack([jp, zpad]) - cols(self.sl_pc, self.gen_map) - cols(self.sl_ppv, self.pv_map))
        g_parts.append(s.imag - self.gen_map @ qc - self.pv_map @ qpv + self.qd)
        dg_parts.append(sp.hstack([jq, zpad]) - cols(self.sl_qc, self.gen_map) - cols(self.sl_qpv, self.pv_map))

        sel = _selector(self.slack, n)
        g_parts.append(e[self.slack] - self.v_slack.real)
        dg_parts.append(cols(self.sl_e, sel))
        g_parts.append(f[self.slack] - self.v_slack.imag)
        dg_parts.append(cols(self.sl_f, sel))

        qf, pf = np.flatnonzero(self.q_fixed), np.flatnonzero(self.p_fixed)
        g_parts.append(qpv[qf])
        dg_parts.append(cols(self.sl_qpv, _selector(qf, self.m)))
        g_parts.append(ppv[pf] - np.where(self.zero_cap[pf], 0.0, self.s_avail[pf]))
        dg_parts.append(cols(self.sl_ppv, _selector(pf, self.m)))

        g = np.concatenate(g_parts)
        dg = sp.vstack(dg_parts, format="csr")

        h_parts, dh_parts = [], []
        fr = self.free_rows
        vm2 = e[fr] ** 2 + f[fr] ** 2
        lim = self.network.limits
        dv = sp.hstack([sp.diags(2 * e[fr]) @ _selector(fr, n), sp.diags(2 * f[fr]) @ _selector(fr, n),
                        sp.csr_matrix((fr.size, nx - 2 * n))], format="csr")
        h_parts += [vm2 - lim.v_max ** 2, lim.v_min ** 2 - vm2]
        dh_parts += [dv, -dv]

        eye_g = sp.identity(3 * self.ng, format="csr")
        lo, hi = self.p_bounds
        h_parts += [pc - hi, lo - pc]
        dh_parts += [cols(self.sl_pc, eye_g), cols(self.sl_pc, -eye_g)]
        lo, hi = self.q_bounds
        h_parts += [qc - hi, lo - qc]
        dh_parts += [cols(self.sl_qc, eye_g), cols(self.sl_qc, -eye_g)]

        lu, uu, du = self.lower_units, self.upper_units, self.disc_units
        h_parts.append(-ppv[lu])
        dh_parts.append(cols(self.sl_ppv, -_selector(lu, self.m)))
        h_parts.append(ppv[uu] - self.s_avail[uu])
        dh_parts.append(cols(self.sl_ppv, _selector(uu, self.m)))
        h_parts.append(ppv[du] ** 2 + qpv[du] ** 2 - self.s_avail[du] ** 2)
        dh_parts.append(cols(self.sl_ppv, sp.diags(2 * ppv[du]) @ _selector(du, self.m))
                        + cols(self.sl_qpv, sp.diags(2 * qpv[du]) @ _selector(du, self.m)))

        nf = self.flow_limits.size
        if nf:
            pflow = self.flow.value(v).real
            jfp, _ = self.flow.jacobian(v)
            jfp = sp.hstack([jfp, sp.csr_matrix((nf, nx - 2 * n))], format="csr")
            h_parts += [pflow - self.flow_limits, -self.flow_limits - pflow]
            dh_parts += [jfp, -jfp]
        else:
            h_parts += [np.zeros(0), np.zeros(0)]
            dh_parts += [sp.csr_matrix((0, nx)), sp.csr_matrix((0, nx))]

        h = np.concatenate(h_parts)
        dh = sp.vstack(dh_parts, format="csr")
        return g, dg, h, dh

    def hessian(self, x: np.ndarray, lam: np.ndarray, mu: np.ndarray) -> sp.csr_matrix:
        """Hessian of the Lagrangian ``f + lam.g + mu.h``."""
        n, nx = self.nv, self.n_vars
        b_p, b_q = self.block("p_balance"), self.block("q_balance")
        hv = self.nodal.hessian(lam[b_p.rows], lam[b_q.rows])

        fr = self.free_rows
        w = mu[self.block("v_max").rows] - mu[self.block("v_min").rows]
        diag_v = np.zeros(n)
        diag_v[fr] = 2 * w
        hv = hv + sp.diags(np.concatenate([diag_v, diag_v]))

        if self.flow_limits.size:
            wf = mu[self.block("flow_max").rows] - mu[self.block("flow_min").rows]
            hv = hv + self.flow.hessian(wf, np.zeros_like(wf))

        diag_rest = np.zeros(nx - 2 * n)
        off = 2 * n
        ppv_idx = np.arange(self.sl_ppv.start, self.sl_ppv.stop) - off
        qpv_idx = np.arange(self.sl_qpv.start, self.sl_qpv.stop) - off
        diag_rest[ppv_idx] += 2 * self.tie_break
        md = mu[self.block("pv_disc").rows]
        diag_rest[ppv_idx[self.disc_units]] += 2 * md
        diag_rest[qpv_idx[self.disc_units]] += 2 * md
        return sp.block_diag([hv, sp.diags(diag_rest)], format="csr")

    # -- unpacking ------------------------------------------------------

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {
            "voltages": self.voltages(x),
            "conv_p": x[self.sl_pc].reshape(self.ng, 3),
            "conv_q": x[self.sl_qc].reshape(self.ng, 3),
            "pv_p": x[self.sl_ppv].copy(),
            "pv_q": x[self.sl_qpv].copy(),
        }


def _blocks(spec) -> list[_Block]:
    out, start = [], 0
    for name, size in spec:
        out.append(_Block(name, start, start + size))
        start += size
    return out


def _place(mat, start: int, width: int) -> sp.csr_matrix:
    """Embed ``mat`` at column offset ``start`` in a matrix ``width`` columns wide."""
    mat = sp.csr_matrix(mat)
    r, c = mat.shape
    return sp.hstack([sp.csr_matrix((r, start)), mat, sp.csr_matrix((r, width - start - c))],
                     format="csr")


def _selector(idx, n: int) -> sp.csr_matrix:
    idx = np.asarray(idx, dtype=int)
    return sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))


def build_problem(network: Network, strategy: "Strategy | str", **kwargs) -> OptimizationProblem:
    return OptimizationProblem(network, Strategy.parse(strategy), **kwargs)

"""Branch pi-model admittances and the global nodal admittance matrix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .netmodel import COND_LIMIT, Line, Network, Phase, as_per_unit


class SingularImpedanceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BranchAdmittance:
    """The four 3x3 blocks of a line's 6x6 branch admittance matrix."""

    y_ii: np.ndarray
    y_ij: np.ndarray
    y_ji: np.ndarray
    y_jj: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.y_ii, self.y_ij], [self.y_ji, self.y_jj]])


def build_branch_admittance(line: Line, name: str | None = None) -> BranchAdmittance:
    z = np.asarray(line.z_series, dtype=complex)
    if not np.any(z) or np.linalg.cond(z) > COND_LIMIT:
        raise SingularImpedanceError(f"singular series impedance on {name or line.name}")
    y_series = np.linalg.inv(z)
    # symmetrize away inversion round-off so Y stays exactly reciprocal
    y_series = 0.5 * (y_series + y_series.T)
    half_shunt = 0.5 * np.asarray(line.y_shunt, dtype=complex)
    self_block = y_series + half_shunt
    mutual = -y_series
    return BranchAdmittance(self_block, mutual, mutual.copy(), self_block.copy())


@dataclass(frozen=True, eq=False)
class GlobalAdmittance:
    """Sparse 3n x 3n nodal admittance with its (node, phase) -> row map."""

    matrix: sp.csr_matrix
    node_ids: tuple[int, ...]
    branches: tuple[BranchAdmittance, ...]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def index(self, node_id: int, phase: "Phase | str | int") -> int:
        return 3 * self.node_ids.index(node_id) + int(Phase.parse(phase))

    def block(self, i: int, j: int) -> np.ndarray:
        """The 3x3 block coupling node ids ``i`` and ``j``."""
        a, b = 3 * self.node_ids.index(i), 3 * self.node_ids.index(j)
        return self.matrix[a:a + 3, b:b + 3].toarray()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def assemble_global_admittance(network: Network) -> GlobalAdmittance:
    """Stamp every line's branch admittance into the global matrix (per-unit)."""
    net = as_per_unit(network)
    pos = {n.id: k for k, n in enumerate(net.nodes)}
    rows, cols, vals = [], [], []
    branches = []
    local = np.arange(3)
    rr, cc = np.meshgrid(local, local, indexing="ij")
    for ln in net.lines:
        br = build_branch_admittance(ln)
        branches.append(br)
        oi, oj = 3 * pos[ln.from_node], 3 * pos[ln.to_node]
        for (ro, co), blk in (((oi, oi), br.y_ii), ((oi, oj), br.y_ij),
                              ((oj, oi), br.y_ji), ((oj, oj), br.y_jj)):
            rows.append((ro + rr).ravel())
            cols.append((co + cc).ravel())
            vals.append(blk.ravel())
    n = 3 * len(net.nodes)
    if rows:
        y = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    else:
        y = sp.csr_matrix((n, n), dtype=complex)
    y.sum_duplicates()
    return GlobalAdmittance(y, tuple(pos), tuple(branches))


def branch_current(branch: BranchAdmittance, v_i, v_j, phase: "Phase | str | int") -> complex:
    """Phase component of the current leaving the sending end into the line."""
    i_vec = branch.y_ii @ np.asarray(v_i, complex) + branch.y_ij @ np.asarray(v_j, complex)
    return complex(i_vec[int(Phase.parse(phase))])


def line_power_flow(v_i_phase: complex, i_ij_phase: complex) -> complex:
    """Sending-end complex power ``V * conj(I)``; real part P, imaginary part Q."""
    return complex(v_i_phase) * np.conj(complex(i_ij_phase))


def line_flows(network: Network, y: GlobalAdmittance, v: np.ndarray) -> np.ndarray:
    """Per-line, per-phase sending (col 0) and receiving (col 1) end powers, shape (nl, 2, 3)."""
    net = as_per_unit(network)
    out = np.zeros((len(net.lines), 2, 3), dtype=complex)
    for k, (ln, br) in enumerate(zip(net.lines, y.branches)):
        a, b = y.index(ln.from_node, 0), y.index(ln.to_node, 0)
        vi, vj = v[a:a + 3], v[b:b + 3]
        for ph in range(3):
            out[k, 0, ph] = line_power_flow(vi[ph], branch_current(br, vi, vj, ph))
            out[k, 1, ph] = line_power_flow(vj[ph], (br.y_ji @ vi + br.y_jj @ vj)[ph])
    return out

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvopf.admittance import (SingularImpedanceError, assemble_global_admittance, branch_current,
                              build_branch_admittance, line_flows, line_power_flow)
from lvopf.netmodel import Line, Phase, as_per_unit
from lvopf.powerflow import nodal_current_injections, nodal_power_injections

from netfactory import coupled, decoupled, pu_network, random_impedance, random_network
from oracles import BALANCED, dense_ybus, pi_circuit_currents


def random_phasors(rng, size=3):
    return rng.normal(1.0, 0.05, size) * np.exp(1j * rng.normal(0, 0.1, size)) * np.tile(BALANCED, size // 3)


# -- branch admittance -----------------------------------------------------------

def test_decoupled_branch():
    z = 0.1 + 0.04j
    br = build_branch_admittance(Line(1, 2, decoupled(z)))
    np.testing.assert_allclose(br.y_ii, np.eye(3) / z, rtol=1e-14)
    np.testing.assert_allclose(br.y_ij, -np.eye(3) / z, rtol=1e-14)


def test_shunt_split_between_ends():
    ysh = np.diag([1e-3j, 2e-3j, 1.5e-3j])
    ysh[0, 1] = ysh[1, 0] = 2e-4j
    br = build_branch_admittance(Line(1, 2, coupled(0.1 + 0.05j, 0.03 + 0.01j), ysh))
    assert np.array_equal(br.y_ii - br.y_jj, np.zeros((3, 3)))
    np.testing.assert_allclose(br.y_ii + br.y_ij, 0.5 * ysh, atol=1e-15)
    np.testing.assert_array_equal(br.y_ij, br.y_ji)


def test_reference_branch_against_circuit_solve(ref_net):
    ln = as_per_unit(ref_net).lines[0]
    br = build_branch_admittance(ln)
    rng = np.random.default_rng(7)
    for _ in range(10):
        vi, vj = random_phasors(rng), random_phasors(rng)
        want_i, want_j = pi_circuit_currents(ln.z_series, ln.y_shunt, vi, vj)
        got = br.matrix @ np.concatenate([vi, vj])
        np.testing.assert_allclose(got, np.concatenate([want_i, want_j]), rtol=0, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_zero_shunt_common_mode_null(seed):
    rng = np.random.default_rng(seed)
    br = build_branch_admittance(Line(1, 2, random_impedance(rng)))
    v = random_phasors(rng)
    scale = np.abs(br.matrix).max()
    assert np.abs(br.matrix @ np.concatenate([v, v])).max() <= 1e-12 * scale


def test_singular_impedance_names_line():
    u = np.array([1.0, 2.0, 3.0])
    with pytest.raises(SingularImpedanceError, match="line 3-4"):
        build_branch_admittance(Line(3, 4, np.outer(u, u) * (1 + 1j)))
    with pytest.raises(SingularImpedanceError):
        build_branch_admittance(Line(3, 4, np.zeros((3, 3))))


# -- global matrix -----------------------------------------------------------------

def test_single_line_equals_branch_matrix():
    ln = Line(1, 2, coupled(0.05 + 0.02j, 0.01 + 0.005j), np.diag([1e-3j] * 3))
    y = assemble_global_admittance(pu_network(2, [ln]))
    np.testing.assert_array_equal(y.dense(), build_branch_admittance(ln).matrix)


def test_block_extraction_identity():
    ln = Line(1, 2, coupled(0.07 + 0.03j, 0.02 + 0.01j), np.diag([2e-3j] * 3))
    y = assemble_global_admittance(pu_network(2, [ln]))
    br = build_branch_admittance(ln)
    for (i, j), blk in {(1, 1): br.y_ii, (1, 2): br.y_ij, (2, 1): br.y_ji, (2, 2): br.y_jj}.items():
        assert np.array_equal(y.block(i, j), blk)


def test_reference_symmetry_and_sparsity(ref_net):
    y = assemble_global_admittance(ref_net)
    dense = y.dense()
    assert np.abs(dense - dense.T).max() <= 1e-12
    adjacent = {frozenset((ln.from_node, ln.to_node)) for ln in ref_net.lines}
    assert len(adjacent) == 17
    for i in ref_net.node_ids:
        for j in ref_net.node_ids:
            nonzero = np.any(y.block(i, j))
            assert nonzero == (i == j or frozenset((i, j)) in adjacent), (i, j)


def test_flat_voltage_null_on_zero_shunt(ref_net):
    from dataclasses import replace
    lines = tuple(Line(ln.from_node, ln.to_node, ln.z_series) for ln in ref_net.lines)
    y = assemble_global_admittance(replace(ref_net, lines=lines))
    v_flat = np.tile(BALANCED, ref_net.n_nodes)
    assert np.abs(y.matrix @ v_flat).max() <= 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_random_networks_match_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    y = assemble_global_admittance(net)
    pos = {nid: k for k, nid in enumerate(net.node_ids)}
    ref = dense_ybus(net.n_nodes, [(pos[ln.from_node], pos[ln.to_node], ln.z_series, ln.y_shunt)
                                   for ln in net.lines])
    np.testing.assert_allclose(y.dense(), ref, rtol=0, atol=1e-9 * np.abs(ref).max())
    assert np.abs(y.dense() - y.dense().T).max() <= 1e-12


def test_injection_law_holds_for_any_voltage():
    rng = np.random.default_rng(3)
    net = random_network(rng, 4)
    y = assemble_global_admittance(net)
    v = random_phasors(rng, 12)
    # currents summed branch by branch must equal Y V at every node
    i = np.zeros(12, complex)
    for ln, br in zip(net.lines, y.branches):
        a, b = y.index(ln.from_node, 0), y.index(ln.to_node, 0)
        i[a:a + 3] += br.y_ii @ v[a:a + 3] + br.y_ij @ v[b:b + 3]
        i[b:b + 3] += br.y_ji @ v[a:a + 3] + br.y_jj @ v[b:b + 3]
    np.testing.assert_allclose(nodal_current_injections(y, v), i, atol=1e-12)


# -- branch currents and flows --------------------------------------------------------

def test_branch_current_equal_voltages_zero():
    br = build_branch_admittance(Line(1, 2, coupled(0.1 + 0.05j, 0.02j)))
    v = BALANCED * 1.01
    assert all(abs(branch_current(br, v, v, ph)) < 1e-14 for ph in Phase)


def test_branch_current_ohms_law():
    z = 0.2 + 0.1j
    br = build_branch_admittance(Line(1, 2, decoupled(z)))
    delta = 0.03 - 0.01j
    vi = BALANCED + np.array([delta, 0, 0])
    got = [branch_current(br, vi, BALANCED, ph) for ph in Phase]
    np.testing.assert_allclose(got, [delta / z, 0, 0], atol=1e-15)


def test_branch_current_coupled_against_circuit_solve(ref_net):
    ln = as_per_unit(ref_net).lines[5]
    br = build_branch_admittance(ln)
    rng = np.random.default_rng(11)
    for _ in range(10):
        vi, vj = random_phasors(rng), random_phasors(rng)
        want, _ = pi_circuit_currents(ln.z_series, ln.y_shunt, vi, vj)
        got = [branch_current(br, vi, vj, ph) for ph in Phase]
        np.testing.assert_allclose(got, want, atol=1e-10)


@pytest.mark.parametrize("v, i, s", [(1.0, 0.0, 0.0), (1.0, 1.0, 1.0), (1j, 1j, 1.0), (1.0, 1j, -1j)])
def test_line_power_flow(v, i, s):
    assert line_power_flow(v, i) == pytest.approx(s)


def test_flows_sum_to_nodal_injection(ref_net, ref_no_control):
    y = assemble_global_admittance(ref_net)
    v = ref_no_control.voltages
    flows = line_flows(ref_net, y, v)
    s_node = nodal_power_injections(v, nodal_current_injections(y, v))
    total = np.zeros(v.size, complex)
    for k, ln in enumerate(ref_net.lines):
        a, b = y.index(ln.from_node, 0), y.index(ln.to_node, 0)
        total[a:a + 3] += flows[k, 0]
        total[b:b + 3] += flows[k, 1]
    assert np.abs(total - s_node).max() <= 1e-8


def test_power_conservation(ref_net, ref_no_control):
    y = assemble_global_admittance(ref_net)
    v = ref_no_control.voltages
    losses = line_flows(ref_net, y, v).sum(axis=1).sum()
    assert abs(ref_no_control.powers.sum() - losses) <= 1e-8
    assert losses.real > 0

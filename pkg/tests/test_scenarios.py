import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvopf.netmodel import loads_by_phase, network_to_dict
from lvopf.powerflow import solve_power_flow
from lvopf.scenarios import (ScenarioError, ScenarioSpec, UnreachableSharesError, apply_scenario,
                             default_specs, load_specs, network_hash, reallocate_phases, run_scenario,
                             run_study)
from lvopf.ubopf import SolverOptions, Strategy


def shares(net, attr="p_demand"):
    v = loads_by_phase(net, attr)
    return 100 * v / v.sum()


# -- specs -----------------------------------------------------------------------------------------

def test_bundled_specs():
    specs = {s.name: s for s in default_specs()}
    assert list(specs) == ["baseline", "S1", "S2", "S3", "S4", "S5"]
    assert (specs["S1"].pv_scale, specs["S1"].demand_scale) == (1.6, 0.5)
    assert (specs["S2"].pv_scale, specs["S2"].demand_scale) == (1.0, 1.5)
    assert specs["S3"].capacitive_fraction == 0.5 and specs["S4"].capacitive_fraction == 1.0
    assert specs["S5"].phase_shares == (40.9, 25.8, 33.3)


@pytest.mark.parametrize("kwargs", [
    {"pv_scale": 0.0}, {"demand_scale": -1.0}, {"capacitive_fraction": 1.5},
    {"phase_shares": (50.0, 30.0, 30.0)}, {"phase_shares": (50.0, 50.0)},
])
def test_spec_invariants(kwargs):
    with pytest.raises(ScenarioError):
        ScenarioSpec("bad", **kwargs)


def test_spec_file_round_trip(tmp_path):
    path = tmp_path / "specs.json"
    specs = default_specs()
    path.write_text(json.dumps({"scenarios": [s.to_dict() for s in specs]}))
    assert load_specs(path) == specs


@pytest.mark.parametrize("text", ['{"scenarios": [{"pv_scale": 1}]}', "[{]",
                                  '[{"name": "a"}, {"name": "a"}]'])
def test_bad_spec_files(tmp_path, text):
    path = tmp_path / "specs.json"
    path.write_text(text)
    with pytest.raises(ScenarioError):
        load_specs(path)


# -- transformations ---------------------------------------------------------------------------------

def test_identity_spec(ref_net):
    assert network_to_dict(apply_scenario(ref_net, ScenarioSpec("id"))) == network_to_dict(ref_net)


def test_s1_capacity(ref_net):
    net = apply_scenario(ref_net, ScenarioSpec("S1", 1.6, 0.5))
    assert net.total_pv() == pytest.approx(64_000.0)
    assert net.total_load() == pytest.approx(0.5 * ref_net.total_load())


def test_base_network_untouched(ref_net):
    before = network_to_dict(ref_net)
    apply_scenario(ref_net, ScenarioSpec("x", 1.3, 0.7, 1.0, (40.9, 25.8, 33.3)))
    assert network_to_dict(ref_net) == before


@pytest.mark.parametrize("fraction, flipped", [(0.0, 0), (0.5, 10), (0.51, 11), (1.0, 20)])
def test_capacitive_flip_first_loads(ref_net, fraction, flipped):
    net = apply_scenario(ref_net, ScenarioSpec("cap", capacitive_fraction=fraction))
    q_before = np.array([ld.q_demand for ld in ref_net.loads])
    q_after = np.array([ld.q_demand for ld in net.loads])
    np.testing.assert_array_equal(q_after[:flipped], -np.abs(q_before[:flipped]))
    np.testing.assert_array_equal(q_after[flipped:], q_before[flipped:])
    np.testing.assert_array_equal(np.abs(q_after), np.abs(q_before))


def test_phase_reallocation_s5(ref_net):
    net = apply_scenario(ref_net, ScenarioSpec("S5", phase_shares=(40.9, 25.8, 33.3)))
    assert np.abs(shares(net) - [40.9, 25.8, 33.3]).max() <= 1.0
    assert sum(ld.p_demand for ld in net.loads) == pytest.approx(ref_net.total_load().real, rel=1e-9)
    assert [(ld.node, ld.p_demand) for ld in net.loads] == [(ld.node, ld.p_demand) for ld in ref_net.loads]
    assert net.pv_inverters == ref_net.pv_inverters


def test_unreachable_shares_report_best(ref_net):
    # the smallest load is several percent of demand, so 1 % on a phase is out of reach
    with pytest.raises(UnreachableSharesError) as exc:
        apply_scenario(ref_net, ScenarioSpec("lopsided", phase_shares=(98.0, 1.0, 1.0)))
    achieved = exc.value.achieved
    assert sum(achieved) == pytest.approx(100.0)
    assert "best achievable" in str(exc.value)


def test_unreachable_two_equal_loads():
    with pytest.raises(UnreachableSharesError) as exc:
        reallocate_phases(np.array([1.0, 1.0]), np.array([0, 0]), (50.0, 25.0, 25.0))
    assert sorted(exc.value.achieved) == [0.0, 50.0, 50.0]


def test_reallocation_greedy_small_case():
    p = np.array([3.0, 1.0, 1.0, 1.0])
    ph = reallocate_phases(p, np.array([0, 0, 0, 0]), (50.0, 16.7, 33.3))
    np.testing.assert_allclose(np.bincount(ph, weights=p, minlength=3), [3.0, 1.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(a=st.floats(20, 50), b=st.floats(20, 45))
def test_reallocation_conserves_totals(ref_net, a, b):
    target = (a, b, 100.0 - a - b)
    try:
        net = apply_scenario(ref_net, ScenarioSpec("t", phase_shares=target))
    except UnreachableSharesError:
        return
    for attr in ("p_demand", "q_demand"):
        before = sum(getattr(ld, attr) for ld in ref_net.loads)
        after = sum(getattr(ld, attr) for ld in net.loads)
        assert after == pytest.approx(before, rel=1e-9)


def test_scenario_derivation_deterministic(ref_net):
    spec = ScenarioSpec("S5", 1.2, 0.9, 0.3, (40.9, 25.8, 33.3))
    a, b = apply_scenario(ref_net, spec), apply_scenario(ref_net, spec)
    assert json.dumps(network_to_dict(a)) == json.dumps(network_to_dict(b))
    assert network_hash(a) == network_hash(b) != network_hash(ref_net)


def test_pv_sweep_monotone(ref_net):
    vmax = [solve_power_flow(apply_scenario(ref_net, ScenarioSpec("k", pv_scale=k))).v_max
            for k in (1.0, 1.2, 1.4, 1.6)]
    assert all(b >= a for a, b in zip(vmax, vmax[1:]))


# -- studies ------------------------------------------------------------------------------------------

def test_study_rows_complete(study):
    result, _ = study
    assert result.names == ["baseline", "S1", "S2", "S3", "S4", "S5"]
    for row in result.scenarios:
        assert [o.strategy for o in row.outcomes] == list(Strategy)
        assert all(o.ok for o in row.outcomes)
        for s in (Strategy.ActiveOnly, Strategy.ActiveReactive):
            assert row[s].solution.verified


def test_study_provenance(ref_net, study):
    result, _ = study
    assert result.provenance["base_network_sha256"] == network_hash(ref_net)
    assert [s["name"] for s in result.provenance["specs"]] == result.names


def test_study_s5_shares(study):
    row = study[0]["S5"]
    assert abs(row.p_shares[0] - 40.9) <= 1.0 and abs(row.p_shares[1] - 25.8) <= 1.0


def test_infeasible_row_marked(ref_net):
    # six-fold demand sags the feeder to ~0.89 pu; token PV cannot lift it back to 0.97
    tight = ScenarioSpec("heavy", pv_scale=0.01, demand_scale=6.0)
    row = run_scenario(ref_net, tight, SolverOptions(multistart=1))
    assert row[Strategy.ActiveOnly].status == "infeasible"
    assert row[Strategy.ActiveOnly].report is None
    assert row[Strategy.NoControl].ok


def test_study_continues_after_infeasible_row(ref_net):
    specs = [ScenarioSpec("heavy", pv_scale=0.01, demand_scale=6.0), ScenarioSpec("baseline")]
    result = run_study(ref_net, specs, SolverOptions(multistart=1))
    assert not result["heavy"][Strategy.ActiveReactive].ok
    assert result["baseline"][Strategy.ActiveReactive].ok


def test_parallel_rows_match_serial(ref_net):
    specs = [ScenarioSpec("baseline"), ScenarioSpec("S2", 1.0, 1.5)]
    opts = SolverOptions(multistart=1)
    serial = run_study(ref_net, specs, opts)
    parallel = run_study(ref_net, specs, opts, max_workers=2)
    for a, b in zip(serial.scenarios, parallel.scenarios):
        for s in Strategy:
            ra, rb = a[s].report, b[s].report
            assert (ra.p_injected_kw, ra.v_max_pu) == (rb.p_injected_kw, rb.v_max_pu)
            pa = np.array([[u.p_kw, u.q_kvar, u.delta_p_kw] for u in ra.inverters])
            pb = np.array([[u.p_kw, u.q_kvar, u.delta_p_kw] for u in rb.inverters])
            np.testing.assert_array_equal(pa, pb)

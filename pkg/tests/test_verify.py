import dataclasses
import json

import numpy as np
import pytest

from conftest import load_network
from triscp.netmodel import assemble_ybus, build_index, slack_voltages
from triscp.pfcore import solve_power_flow
from triscp.scp import solve_opf
from triscp.verify import (
    ReferenceInfeasible,
    ReferenceTooLarge,
    _pf_jacobian,
    optimality_gap,
    power_flow_roots,
    reference_optimum_tiny,
    verify_solution,
)


@pytest.fixture(scope="module")
def tiny_solution():
    net = load_network("tiny_t1")
    return net, solve_opf(net)


def test_report_on_converged_solution(tiny_solution):
    net, sol = tiny_solution
    report = verify_solution(net, sol)
    assert report.converged
    assert report.oracle_converged
    assert report.voltage_error_max <= 1e-4
    assert report.ohm_residual_max < 1e-7
    assert report.bilinear_residual_max <= report.delta_final + 1e-9
    assert report.triangle_slack_min >= -1e-9
    assert report.identity_error_max <= 1e-12
    assert report.voltage_bound_violation_max <= 1e-7
    assert report.optimality_gap_pct is None  # no reference supplied


def test_report_serializes_to_json(tiny_solution):
    net, sol = tiny_solution
    report = verify_solution(net, sol, reference_objective=2.334884278e-3)
    doc = json.loads(report.to_json())
    assert set(doc) == {f.name for f in dataclasses.fields(report)}
    assert doc["optimality_gap_pct"] == pytest.approx(report.optimality_gap_pct)
    assert doc["oracle_iterations"] >= 1


def test_corrupted_voltage_is_flagged(tiny_solution):
    net, sol = tiny_solution
    V = sol.V.copy()
    index = build_index(net)
    V[index.node("b1", "a")] += 1e-3
    bad = dataclasses.replace(sol, V=V)
    report = verify_solution(net, bad)
    assert report.ohm_residual_max > 1e-3  # V and I no longer satisfy I = YV
    assert report.voltage_error_max > 5e-4


def test_corrupted_m_breaks_the_error_chain(tiny_solution):
    net, sol = tiny_solution
    m = sol.m.copy()
    m[0, build_index(net).node("b1", "a")] += 10.0 * sol.delta2_final**0.5
    report = verify_solution(net, dataclasses.replace(sol, m=m))
    assert report.bilinear_residual_max > report.delta_final


def test_dimension_mismatch_rejected(tiny_solution):
    net, sol = tiny_solution
    with pytest.raises(ValueError, match="dimensions"):
        verify_solution(net, dataclasses.replace(sol, V=sol.V[:1]))


def test_optimality_gap_definition():
    assert optimality_gap(1.001, 1.0) == pytest.approx(0.1)
    assert optimality_gap(0.0, 0.0) == 0.0
    assert optimality_gap(1e-9, 0.0) > 0.0  # floored denominator, no crash


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    k = 3
    y = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
    y = y + y.T
    w0 = rng.normal(size=k) + 1j * rng.normal(size=k)
    s = rng.normal(size=k) + 1j * rng.normal(size=k)

    def residual(u):
        V = u[:k] + 1j * u[k:]
        W = y @ V + w0
        F = s - V * np.conj(W)
        return np.concatenate([F.real, F.imag])

    u0 = rng.normal(size=2 * k)
    V0 = u0[:k] + 1j * u0[k:]
    J = _pf_jacobian(V0, y @ V0 + w0, y)
    eps = 1e-7
    for col in range(2 * k):
        step = np.zeros(2 * k)
        step[col] = eps
        fd = (residual(u0 + step) - residual(u0 - step)) / (2 * eps)
        assert np.max(np.abs(J[:, col] - fd)) < 1e-6


def test_power_flow_roots_contains_oracle_solution():
    net = load_network("tiny_t3")
    roots = power_flow_roots(net, include_oracle_seed=False)
    assert len(roots) >= 2  # high-voltage root plus at least one low-voltage root
    pf = solve_power_flow(net)
    nearest = min(np.max(np.abs(r - pf.V)) for r in roots)
    assert nearest < 1e-6
    # every root pins the slack
    index = build_index(net)
    ybus = assemble_ybus(net, index)
    vs = slack_voltages(net, index)
    for root in roots:
        assert np.allclose(root[ybus.slack], vs)


def test_reference_matches_known_two_bus_value():
    net = load_network("tiny_t1")
    obj, V = reference_optimum_tiny(net)
    assert obj == pytest.approx(2.334884278e-3, rel=1e-6)
    index = build_index(net)
    assert abs(V[index.node("b1", "a")]) == pytest.approx(0.96626348, rel=1e-6)


def test_reference_rejects_large_instances():
    with pytest.raises(ReferenceTooLarge):
        reference_optimum_tiny(load_network("desk04"))


def test_reference_detects_infeasible_band():
    import copy

    from conftest import fixture_path
    from triscp.ingest import feeder_from_dict, to_network

    doc = copy.deepcopy(json.loads(fixture_path("tiny_t1").read_text()))
    for bus in doc["buses"]:
        bus["vmin_pu"] = 0.999
    with pytest.raises(ReferenceInfeasible):
        reference_optimum_tiny(to_network(feeder_from_dict(doc)))


def test_reference_generator_instance_is_zero():
    net = load_network("tiny_gen1")
    obj, V = reference_optimum_tiny(net)
    assert obj < 1e-10
    assert np.max(np.abs(np.abs(V) - 1.0)) < 1e-5

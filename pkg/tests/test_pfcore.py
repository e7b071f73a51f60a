import numpy as np
import pytest

from conftest import load_network, single_phase_network
from triscp.netmodel import assemble_ybus, build_index, reference_voltages
from triscp.pfcore import (
    PowerFlowError,
    load_injections,
    power_balance_residual,
    solve_power_flow,
)


def test_two_bus_matches_scalar_fixed_point():
    # independent scalar recursion v = 1 - z * conj(s / v)
    z, s = 0.01 + 0.02j, 2.0 + 0.6j
    v = 1.0 + 0.0j
    for _ in range(500):
        v_new = 1.0 - z * np.conj(s / v)
        if abs(v_new - v) < 1e-15:
            break
        v = v_new
    net = single_phase_network(z=z, p=s.real, q=s.imag)
    index = build_index(net)
    result = solve_power_flow(net)
    assert result.converged
    assert abs(result.V[index.node("b1", "a")] - v) < 1e-10
    assert abs(result.V[index.node("slack", "a")] - 1.0) < 1e-15


@pytest.mark.parametrize("name", ["tiny_t3", "desk04", "desk13_tie"])
def test_solution_satisfies_power_balance(name):
    net = load_network(name)
    result = solve_power_flow(net)
    assert result.converged
    resid = power_balance_residual(net, result.V)
    index = build_index(net)
    ybus = assemble_ybus(net, index)
    assert np.max(np.abs(resid[ybus.nonslack])) < 1e-9
    assert result.residual < 1e-9
    # currents are consistent with the admittance model
    assert np.max(np.abs(ybus.matrix @ result.V - result.I)) < 1e-12


def test_no_load_network_sits_at_reference():
    net = single_phase_network(p=0.0, q=0.0)
    index = build_index(net)
    result = solve_power_flow(net)
    assert result.converged
    assert np.max(np.abs(result.V - reference_voltages(net, index))) < 1e-14
    assert result.iterations <= 2


def test_balanced_three_phase_stays_balanced():
    from triscp.ingest import generate_feeder

    net = generate_feeder(5, phase_policy="abc", seed=4)  # identical load on every phase
    result = solve_power_flow(net)
    assert result.converged
    index = build_index(net)
    for bus in {b for b, _ in index.pairs}:
        mags = [abs(result.V[index.node(bus, p)]) for p in "abc"]
        assert max(mags) - min(mags) < 1e-9


def test_warm_start_converges_immediately():
    net = load_network("desk07")
    cold = solve_power_flow(net)
    warm = solve_power_flow(net, V_init=cold.V)
    assert warm.converged
    assert warm.iterations <= 2


def test_explicit_injections_shift_the_solution():
    net = load_network("tiny_t1")
    index = build_index(net)
    base = load_injections(net, index)
    half = solve_power_flow(net, injections=0.5 * base)
    full = solve_power_flow(net)
    node = index.node("b1", "a")
    assert abs(half.V[node]) > abs(full.V[node])  # lighter load, smaller drop
    resid = power_balance_residual(net, half.V, injections=0.5 * base)
    ybus = assemble_ybus(net, index)
    assert np.max(np.abs(resid[ybus.nonslack])) < 1e-9


def test_unsolvable_load_is_reported_not_converged():
    net = single_phase_network(p=1000.0, q=300.0)  # far beyond maximum transfer
    res = solve_power_flow(net)
    assert not res.converged
    assert res.residual > 1.0


def test_zero_voltage_start_raises():
    net = single_phase_network()
    index = build_index(net)
    with pytest.raises(PowerFlowError, match="zero voltage"):
        solve_power_flow(net, V_init=np.zeros(index.n_ph, dtype=complex))


def test_tolerance_is_respected():
    net = load_network("desk04")
    loose = solve_power_flow(net, tol=1e-6)
    tight = solve_power_flow(net, tol=1e-12)
    assert loose.converged and tight.converged
    assert tight.iterations >= loose.iterations
    assert tight.residual <= 1e-9

import math

import numpy as np
import pytest

from conftest import load_network
from triscp.netmodel import assemble_ybus, build_index, reference_voltages
from triscp.pfcore import power_balance_residual
from triscp.scp import (
    ScpError,
    TrustRegionConfig,
    flat_start,
    injections_from_solution,
    solve_opf,
    update_radius,
    voltage_deviation,
)


def test_config_defaults_are_valid():
    TrustRegionConfig().validate()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha": 1.0},
        {"alpha": 0.0},
        {"beta": 0.5},
        {"tau": 0.0},
        {"delta2_min": 0.0},
        {"delta2_min": 0.2, "delta2_init": 0.1},
        {"delta2_max": 0.05, "delta2_init": 0.1},
    ],
)
def test_config_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        TrustRegionConfig(**kwargs).validate()


def test_radius_contracts_exactly_below_threshold():
    config = TrustRegionConfig(alpha=0.5, beta=2.0, tau=1e-3)
    rng = np.random.default_rng(3)
    for _ in range(200):
        delta2 = float(rng.uniform(1e-8, 0.5))
        dv = float(rng.uniform(0.0, 2e-3))
        out = update_radius(delta2, dv, config)
        if dv < config.tau:
            assert out == max(config.delta2_min, config.alpha * delta2)
        else:
            assert out == min(config.delta2_max, config.beta * delta2)


def test_radius_clamps_to_both_rails():
    config = TrustRegionConfig(delta2_min=1e-4, delta2_max=1e-2, delta2_init=1e-3, alpha=0.5, beta=2.0, tau=1e-3)
    d = 2e-4
    for _ in range(30):
        d = update_radius(d, 0.0, config)  # always contracting
    assert d == config.delta2_min
    d = 5e-3
    for _ in range(30):
        d = update_radius(d, 1.0, config)  # always expanding
    assert d == config.delta2_max


def test_contraction_cascade_step_count():
    # from 1e-1, halving must need ceil(log2(1e-1 / 1e-6)) = 17 steps
    config = TrustRegionConfig(alpha=0.5, tau=1e-3)
    delta2 = 1e-1
    steps = 0
    while delta2 >= 1e-6:
        delta2 = update_radius(delta2, 0.0, config)
        steps += 1
    assert steps == 17
    assert steps == math.ceil(math.log(1e-6 / 1e-1, 0.5))


def test_voltage_deviation_is_max_of_component_sums():
    a = np.array([1.0 + 1.0j, 2.0 - 1.0j])
    b = np.array([0.5 + 0.25j, 2.0 - 1.0j])
    # per node |dRe| + |dIm|: [0.5 + 0.75, 0.0]
    assert voltage_deviation(a, b) == pytest.approx(1.25)
    assert voltage_deviation(a, a) == 0.0


def test_flat_start_matches_reference_profile():
    net = load_network("desk04")
    index = build_index(net)
    ybus = assemble_ybus(net, index)
    lin = flat_start(net, index, ybus)
    assert np.allclose(lin.V, reference_voltages(net, index))
    assert np.max(np.abs(ybus.matrix @ lin.V - lin.I)) < 1e-12


def test_solve_opf_converges_on_heavy_two_bus():
    net = load_network("tiny_t1")
    sol = solve_opf(net)
    assert sol.converged
    assert sol.iterations <= 10
    assert sol.dv_final < 1e-3
    assert sol.delta2_final < 1e-6
    assert sol.objective == pytest.approx(2.3334e-3, rel=1e-3)
    assert len(sol.history) == sol.iterations
    assert all(rec.status == "optimal" for rec in sol.history)
    assert sol.delta2_final == sol.history[-1].delta2


def test_solve_opf_is_deterministic():
    net = load_network("desk04")
    a = solve_opf(net)
    b = solve_opf(net)
    assert np.array_equal(a.V, b.V)
    assert np.array_equal(a.m, b.m)
    assert a.objective == b.objective
    assert [r.objective for r in a.history] == [r.objective for r in b.history]


def test_power_mismatch_is_bounded_by_bilinear_gap():
    net = load_network("tiny_t1")
    sol = solve_opf(net)
    index = build_index(net)
    ybus = assemble_ybus(net, index)
    s = injections_from_solution(sol)
    resid = power_balance_residual(net, sol.V, injections=s)
    # the m-implied injections differ from V * conj(Y V) only through the
    # relaxation gap m - V.I, so the mismatch is bounded by that residual
    gap = sol.history[-1].max_bilinear_residual
    assert np.max(np.abs(resid[ybus.nonslack])) <= 2.0 * gap + 1e-9
    assert np.max(np.abs(resid[ybus.nonslack])) < 1e-2


def test_generator_instance_reaches_nominal_profile():
    net = load_network("tiny_gen1")
    sol = solve_opf(net)
    assert sol.converged
    assert sol.objective < 1e-10
    index = build_index(net)
    assert np.max(np.abs(sol.V - reference_voltages(net, index))) < 1e-4
    # net injection at the free node is (numerically) zero
    assert abs(sol.pg[0]) < 1e-4 and abs(sol.qg[0]) < 1e-4


def test_iteration_budget_reports_unconverged():
    net = load_network("tiny_t1")
    sol = solve_opf(net, max_iter=1)
    assert not sol.converged
    assert sol.iterations == 1
    assert len(sol.history) == 1


def test_on_iteration_streams_every_record():
    net = load_network("tiny_t1")
    seen = []
    sol = solve_opf(net, on_iteration=seen.append)
    assert [r.k for r in seen] == list(range(1, sol.iterations + 1))
    assert seen[-1].objective == sol.history[-1].objective


def test_infeasible_band_raises_scp_error():
    import copy
    import json

    from conftest import fixture_path
    from triscp.ingest import feeder_from_dict, to_network

    doc = copy.deepcopy(json.loads(fixture_path("tiny_t1").read_text()))
    for bus in doc["buses"]:
        bus["vmin_pu"] = 0.999  # heavy load cannot hold the band
    net = to_network(feeder_from_dict(doc))
    with pytest.raises(ScpError) as err:
        solve_opf(net)
    assert err.value.iteration is not None


def test_unknown_backend_rejected_up_front():
    net = load_network("tiny_t1")
    with pytest.raises(ValueError, match="unknown conic backend"):
        solve_opf(net, backend="bogus")


def test_cvxpy_backend_reaches_same_objective():
    pytest.importorskip("cvxpy")
    net = load_network("tiny_t1")
    ref = solve_opf(net)
    alt = solve_opf(net, backend="cvxpy")
    assert alt.converged
    assert alt.objective == pytest.approx(ref.objective, rel=1e-4)


def test_global_cone_variant_agrees():
    net = load_network("tiny_t1")
    per_node = solve_opf(net)
    stacked = solve_opf(net, global_cone=True)
    assert stacked.converged
    # one shared radius is a looser coupling; same fixed point up to tolerance
    assert stacked.objective == pytest.approx(per_node.objective, rel=5e-3)


def test_max_iter_validation():
    net = load_network("tiny_t1")
    with pytest.raises(ValueError):
        solve_opf(net, max_iter=0)

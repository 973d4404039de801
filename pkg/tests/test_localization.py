import math

import numpy as np
import pytest

from adlm.assumptions import validate_assumptions
from adlm.errors import UsageError
from adlm.localization import (CORNER4, TABLE_ALGOS, FlaggedNetworkError, LocalizationRunConfig,
                               SensorNetwork, build_layout, build_problem, generate_network,
                               rmse, run_dadlm, run_dgd, run_localization)
from adlm.problem import PrimalDualPoint, eval_objective, grad_aug_lagrangian


def small(seed=3, S=6, noise=0.05):
    return generate_network(S, radius=0.6, noise_factor=noise, seed=seed)


def test_seed7_network_shape():
    net = generate_network(10, "corner4", 0.5, 0.05, seed=7)
    assert net.n_nodes == 14 and net.n_anchors == 4
    np.testing.assert_array_equal(net.anchor_positions, CORNER4)
    assert not net.flagged
    for (a, b), d2 in zip(net.edges, net.measurements):
        assert np.linalg.norm(net.position(a) - net.position(b)) < 0.5
        assert d2 >= 0.0
        assert not (net.is_anchor(a) and net.is_anchor(b))


def test_anchors_only_network_has_no_edges():
    net = generate_network(0)
    assert net.n_nodes == 4 and net.edges == () and not net.flagged


def test_generation_is_deterministic():
    a, b = generate_network(10, seed=7), generate_network(10, seed=7)
    assert a.to_json() == b.to_json()
    assert generate_network(10, seed=8).to_json() != a.to_json()


def test_noise_variance_scales_with_mean_squared_distance():
    net = generate_network(30, seed=1)
    true = np.array([np.sum((net.position(a) - net.position(b)) ** 2) for a, b in net.edges])
    assert net.noise_sigma2 == pytest.approx(0.05 * true.mean(), rel=1e-12)
    exact = generate_network(30, seed=1, noise_factor=0.0)
    np.testing.assert_allclose(exact.measurements, true, rtol=1e-12)


def test_network_json_round_trip(tmp_path):
    net = generate_network(10, seed=7)
    path = tmp_path / "net.json"
    net.save(path)
    back = SensorNetwork.load(path)
    assert back.to_json() == net.to_json()
    np.testing.assert_array_equal(back.sensor_positions, net.sensor_positions)
    assert back.measurements == net.measurements
    with pytest.raises(UsageError):
        SensorNetwork.from_dict({"positions": [[0, 0]], "anchor": [False]})


def test_isolated_sensor_is_flagged():
    net = SensorNetwork([[0.5, 0.5], [0.1, 0.1]], CORNER4, [(1, 2)], [0.02])
    assert net.flags == ["sensor 0 has no measurements"]
    island = SensorNetwork([[0.5, 0.5], [0.6, 0.5]], CORNER4, [(0, 1)], [0.01])
    assert len(island.flags) == 2 and "no path to an anchor" in island.flags[0]
    with pytest.raises(FlaggedNetworkError):
        build_problem(net)
    with pytest.raises(FlaggedNetworkError):
        run_dadlm(net, LocalizationRunConfig(iterations=2))
    run_dadlm(island, LocalizationRunConfig(iterations=2, allow_flagged=True))


def test_copy_layout_blocks():
    net = generate_network(10, seed=7)
    lay = build_layout(net)
    E = lay.E
    for n in range(net.n_nodes):
        En = lay.E_n(n)
        sens, _ = net.neighbors(n)
        expect = sorted(sens + [n]) if n < net.S else sens
        assert sorted(lay.node_copies[n]) == expect
        blocks = En.reshape(En.shape[0] // 2, 2, net.S, 2).transpose(0, 2, 1, 3)
        for row in blocks:
            ids = [j for j in range(net.S) if np.any(row[j])]
            assert len(ids) == 1
            np.testing.assert_array_equal(row[ids[0]], np.eye(2))
    assert np.linalg.matrix_rank(E) == 2 * net.S
    z = np.random.default_rng(0).normal(size=2 * net.S)
    np.testing.assert_allclose(lay.average(lay.expand(z)), z, atol=1e-15)


def test_problem_meets_prop1_structure():
    p, _ = build_problem(generate_network(10, seed=7))
    assert validate_assumptions(p, "prop1-unconstrained").structural_passed


def test_gradient_matches_finite_differences():
    net = generate_network(10, seed=7)
    p, lay = build_problem(net)
    rng = np.random.default_rng([7, 2])
    for _ in range(50):
        x = rng.uniform(0, 1, p.p1)
        g = p.f.grad(x)
        fd = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = 1e-6
            fd[i] = (p.f.value(x + e) - p.f.value(x - e)) / 2e-6
        assert np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(fd)) <= 1e-6


def test_zero_noise_truth_has_zero_objective():
    net = generate_network(10, seed=7, noise_factor=0.0)
    p, lay = build_problem(net)
    z = net.sensor_positions.reshape(-1)
    x = lay.expand(z)
    assert eval_objective(p, x, z) == pytest.approx(0.0, abs=1e-28)
    assert np.linalg.norm(x - lay.E @ z) == 0.0


def test_objective_invariant_under_sensor_relabeling():
    net = generate_network(8, seed=4)
    perm = np.random.default_rng(1).permutation(net.S)   # old i -> new perm[i]
    pos = np.empty_like(net.sensor_positions)
    pos[perm] = net.sensor_positions
    relabel = lambda a: int(perm[a]) if a < net.S else a
    edges = [(relabel(a), relabel(b)) for a, b in net.edges]
    net2 = SensorNetwork(pos, net.anchor_positions, edges, net.measurements)
    p1, l1 = build_problem(net)
    p2, l2 = build_problem(net2)
    z1 = np.random.default_rng(2).uniform(0, 1, (net.S, 2))
    z2 = np.empty_like(z1)
    z2[perm] = z1
    assert p2.f.value(l2.expand(z2.ravel())) == pytest.approx(p1.f.value(l1.expand(z1.ravel())),
                                                               rel=1e-13)


def test_rmse_examples():
    net = generate_network(10, seed=7)
    assert rmse(net.sensor_positions, net) == 0.0
    one = SensorNetwork([[0.2, 0.2]], CORNER4, [(0, 1)], [0.08])
    assert rmse([[0.5, 0.6]], one) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("algo", TABLE_ALGOS)
def test_zero_noise_truth_is_fixed_point(algo):
    net = generate_network(10, seed=7, noise_factor=0.0)
    cfg = LocalizationRunConfig(algo=algo, iterations=10, z_init=net.sensor_positions.ravel())
    tr, est = run_localization(net, cfg)
    assert np.max(tr.column("r")) <= 1e-12
    assert np.max(tr.column("stationarity")) <= 1e-12
    np.testing.assert_allclose(est, net.sensor_positions, atol=1e-12)


def test_z_update_is_exact_minimizer_and_dual_identity():
    net = small()
    p, lay = build_problem(net)
    tr, _ = run_dadlm(net, LocalizationRunConfig(algo="admm-2", iterations=30))
    pt = PrimalDualPoint(tr.x, tr.z, tr.y - 2.0 * (tr.x - lay.expand(tr.z)), 2.0)
    assert np.linalg.norm(grad_aug_lagrangian(p, pt, "z")) <= 1e-10
    # dual step equals rho times the final residual, node by node
    assert tr.column("dual_step")[-1] == pytest.approx(2.0 * tr.column("r")[-1], rel=1e-12)


def test_threaded_run_is_bit_identical():
    net = generate_network(10, seed=7)
    for algo in ("adpm", "admm-1"):
        a, _ = run_dadlm(net, LocalizationRunConfig(algo=algo, iterations=40))
        b, _ = run_dadlm(net, LocalizationRunConfig(algo=algo, iterations=40, workers=4))
        assert a.csv_text() == b.csv_text()


def test_adpm_residual_trends_down():
    tr, _ = run_dadlm(generate_network(10, seed=7), LocalizationRunConfig(algo="adpm",
                                                                         iterations=500))
    r = tr.column("r")
    assert r[0] == 0.0          # copies start consistent
    assert r[-1] < r[1]
    assert np.mean(r[-50:]) < np.mean(r[1:51])


def test_admm_dual_tail_and_fon_reported():
    tr, _ = run_dadlm(generate_network(10, seed=7), LocalizationRunConfig(algo="admm-1"))
    assert tr.verdict == "completed" and tr.iterations == 5000
    assert np.max(tr.column("dual_step")[-20:]) <= 1e-4
    s = tr.summary()
    assert s["dual_step_tail_max"] <= 1e-4
    assert s["fon"] is not None and s["fon"]["primal_residual"] <= 1e-4


def test_dgd_default_and_far_initialization():
    net = generate_network(10, seed=7)
    tr, _ = run_dgd(net, LocalizationRunConfig(algo="dgd", iterations=300))
    assert tr.verdict == "completed"
    assert tr.column("r")[-1] < tr.column("r")[1]
    far, _ = run_dgd(net, LocalizationRunConfig(algo="dgd", iterations=50, z_init=(100.0, 100.0)))
    assert far.verdict in ("diverged", "completed")
    assert not np.any(np.isnan(far.column("r")))


def test_literal_z_update_runs():
    net = generate_network(10, seed=7)
    tr, est = run_dadlm(net, LocalizationRunConfig(algo="admm-1", iterations=200,
                                                   z_update="literal"))
    assert tr.verdict == "completed" and np.all(np.isfinite(est))


def test_tolerance_stop_and_config_errors():
    net = small()
    tr, _ = run_dadlm(net, LocalizationRunConfig(algo="admm-1", iterations=5000, tol=1e-6))
    assert tr.verdict == "converged" and tr.column("max_node_residual")[-1] < 1e-6
    for bad in ({"algo": "admm-0"}, {"algo": "sgd"}, {"iterations": 0}, {"z_update": "gossip"},
                {"workers": 0}):
        with pytest.raises(UsageError):
            LocalizationRunConfig(**bad)
    with pytest.raises(UsageError):
        run_dgd(net, LocalizationRunConfig(algo="adpm"))
    with pytest.raises(UsageError):
        run_dadlm(net, LocalizationRunConfig(z_init=(1.0, 2.0, 3.0)))


def test_trace_csv_columns():
    tr, _ = run_dadlm(small(), LocalizationRunConfig(algo="adpm-y", iterations=3))
    lines = tr.csv_text().splitlines()
    head = lines[0].split(",")
    assert head[:10] == ["t", "rho", "r", "stationarity", "objective", "dual_step",
                         "max_node_residual", "rmse", "dual_norm", "node_failures"]
    assert len(head) == 10 + 12 and len(lines) == 5
    assert [float(l.split(",")[1]) for l in lines[2:]] == [1.0, 2.0, 3.0]
    assert not math.isnan(float(lines[-1].split(",")[7]))

"""Smoke test for the psicert Python bindings.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/psicert-*.whl

then run ``python python/smoke_test.py`` or ``pytest python/smoke_test.py`` from
the repository root.
"""

import json
import math

import psicert_py as pc


def close(a, b, tol):
    return abs(a - b) <= tol


def test_bounds():
    assert close(pc.hoeffding_bound(50, 0.1), 0.17308, 5e-5)
    assert close(pc.scenario_bound(0, 50, 0.1), 0.046052, 5e-5)
    assert close(pc.bernstein_slack(0.0, 50, 0.1), 7 * math.log(20) / 147, 1e-12)
    flags = [True, False, False, False]
    assert pc.empirical_mean(flags) == 0.25
    assert pc.pairwise_variance(flags) == 0.25
    assert pc.count_support([0.0, 0.0, 0.4]) == 1
    assert close(pc.analytic_delta(1.0, 500, 0.0288, 1.0), math.exp(-1 / 29.466666666666667), 1e-12)
    try:
        pc.hoeffding_bound(50, 1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("delta outside (0, 1) must raise")


def test_safety():
    assert pc.h_pair([2.0, 0.0], [0.0, 0.0]) == 3.0
    assert pc.grad_h_pair([2.0, 0.0], [0.0, 0.0]) == [4.0, 0.0]
    a = pc.propagation_vector([1.0, 0.0], [0.0, 0.0])
    assert close(a[0], math.exp(-1.0), 1e-6)
    params = pc.SafetyParams(psi=0.0)
    assert pc.psi_safety([2.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 0.0], params) == 3.0
    assert close(pc.disturbance_margin([1.5, 2.0], [0.0, 0.0], 0.05), 0.5, 1e-12)


def test_qp():
    sol = pc.solve_qp([[1.0, 0.0]], [2.0])
    assert sol.status == "optimal"
    assert close(sol.u_star[0], 2.0, 1e-9) and close(sol.u_star[1], 0.0, 1e-9)
    assert sol.active_set == [0]
    relaxed = pc.solve_qp([[1.0], [-1.0]], [1.0, 1.0])
    assert relaxed.status == "infeasible_relaxed"
    assert relaxed.slack_used > 0.0


def test_rollouts_and_certificate():
    cfg = pc.ExperimentConfig(json.dumps({"groups": 2, "rollouts_per_group": 6, "system": {"horizon_steps": 10}}))
    assert cfg.groups == 2
    assert len(cfg.config_hash()) == 64
    again = pc.ExperimentConfig(cfg.to_json())
    assert again.config_hash() == cfg.config_hash()

    seed = cfg.rollout_seed(0, 0)
    r1 = pc.run_rollout(cfg, seed, record_trajectory=True)
    r2 = pc.run_rollout(cfg, seed)
    assert r1.raw_min_margin == r2.raw_min_margin
    assert len(r1.trajectory) == 11 * 2
    assert r2.trajectory is None

    groups = pc.run_experiment(cfg)
    assert [g.group_index for g in groups] == [0, 1]
    assert all(0.0 <= z <= 1.0 for z in groups[0].z_scores)

    report = pc.certify(cfg)
    assert report["total_rollouts"] == 12
    assert len(report["groups"]) == 2

    try:
        pc.ExperimentConfig('{"theta": 1.5}')
    except ValueError as e:
        assert "theta" in str(e)
    else:
        raise AssertionError("invalid theta must raise")

    assert "properties" in pc.config_schema()


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok {name}")

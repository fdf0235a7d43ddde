import numpy as np
import pytest

from dpptavg.dual import (NON_POLYHEDRAL, POLYHEDRAL, UNDETERMINED, DualPoint, dual_value, dual_values,
                          primal_grid_opt, primal_opt, probe_geometry, solve_dual)
from dpptavg.engine import RunConfig, run
from dpptavg.problem import Box, ConvexFn, StochasticProblem

from conftest import builtin, dual_of

LAM_LINEAR = np.array([2 / 3, 1 / 6, 0.0, 0.0])


def random_lams(problem, rng, n, scale=2.0):
    return np.concatenate([rng.uniform(0, scale, (n, problem.J)), rng.normal(0, scale, (n, problem.I))], axis=1)


def test_dual_at_zero_is_min_f(sim_linear):
    d = dual_value(sim_linear, np.zeros(4))
    assert d.value == pytest.approx(1.5 * -5 - 10)


def test_dual_rejects_negative_w(sim_linear):
    with pytest.raises(ValueError):
        dual_value(sim_linear, DualPoint([-0.1, 0.0], [0.0, 0.0]))


def test_dual_at_known_multiplier(sim_linear):
    assert dual_value(sim_linear, LAM_LINEAR).value == pytest.approx(1.25, abs=1e-12)


@pytest.mark.parametrize("name", ["sim-linear", "sim-quadratic", "sim-quadratic-nonunique"])
def test_concavity_and_supergradients(name):
    p = builtin(name)
    rng = np.random.default_rng(5)
    L1, L2 = random_lams(p, rng, 200), random_lams(p, rng, 200)
    d1, d2, dm = dual_values(p, L1), dual_values(p, L2), dual_values(p, 0.5 * (L1 + L2))
    assert np.all(dm >= 0.5 * (d1 + d2) - 1e-9)
    for a, b in zip(L1[:50], L2[:50]):
        da, db = dual_value(p, a), dual_value(p, b)
        assert db.value <= da.value + da.supergradient @ (b - a) + 1e-9
        # per-state form
        gy = p.g(da.y)
        for k, xk in enumerate(da.x_minimizers):
            dbk = dual_value(p, b).per_state[k]
            hk = np.concatenate([gy, xk - da.y])
            assert dbk <= da.per_state[k] + hk @ (b - a) + 1e-9


def test_batch_matches_scalar(sim_quadratic):
    rng = np.random.default_rng(6)
    lams = random_lams(sim_quadratic, rng, 30)
    assert np.allclose(dual_values(sim_quadratic, lams), [dual_value(sim_quadratic, l).value for l in lams])


def test_solve_dual_linear():
    sol = dual_of("sim-linear")
    assert sol.d_star == pytest.approx(1.25, abs=1e-4)
    assert sol.unique_flag and sol.converged
    assert sol.d_star <= sol.f_opt + 1e-6
    assert np.allclose(sol.lambda_star.lam, LAM_LINEAR, atol=1e-6)


def test_solve_dual_quadratic():
    sol = dual_of("sim-quadratic")
    assert sol.d_star == pytest.approx(0.5, abs=1e-4) and sol.unique_flag
    assert np.allclose(sol.lambda_star.lam, [1 / 3, 1 / 3, 0, 0], atol=1e-5)


@pytest.mark.parametrize("name", ["sim-linear-nonunique", "sim-quadratic-nonunique"])
def test_solve_dual_nonunique(name):
    sol = dual_of(name)
    assert sol.d_star == pytest.approx(builtin(name.replace("-nonunique", "")).f([0.5, 0.5]), abs=1e-4)
    assert not sol.unique_flag
    assert sol.multi_start_spread > 1e-3


def test_ascent_history_monotone():
    sol = dual_of("sim-linear")
    assert np.all(np.diff(sol.history, axis=1) >= 0)


def test_ascent_backends_agree(sim_linear):
    a = solve_dual(sim_linear, starts=4, iterations=300, polyak_iterations=300, backend="numba")
    b = solve_dual(sim_linear, starts=4, iterations=300, polyak_iterations=300, backend="numpy")
    assert np.allclose(a.endpoint_values, b.endpoint_values, atol=1e-9)


def test_unconstrained_dual():
    p = StochasticProblem((0, 1), (0.5, 0.5), ([[0.0], [2.0]], [[1.0], [3.0]]), ConvexFn.quadratic([1.0], [-4.0]),
                          (), Box([0.0], [3.0]))
    sol = solve_dual(p, starts=4)
    assert sol.lambda_star.w.size == 0
    assert sol.d_star == pytest.approx(sol.f_opt, abs=1e-6)
    # min (x-2)^2 over the average set [0.5, 2.5]
    assert sol.f_opt == pytest.approx(-4.0, abs=1e-6)


def test_grid_oracle_values():
    assert primal_grid_opt(builtin("sim-linear"), 200) == pytest.approx(1.25, abs=0.01)
    assert primal_grid_opt(builtin("sim-quadratic"), 200) == pytest.approx(0.5, abs=0.01)
    assert primal_grid_opt(builtin("sim-linear-pointwise"), 200) == pytest.approx(1.6875, abs=0.01)


def test_grid_oracle_unconstrained_affine_is_vertex_min():
    p = StochasticProblem((0, 1), (0.25, 0.75), ([[0, 0], [1, 2]], [[-1, 1], [2, -3]]), ConvexFn.affine([1.0, 1.0]))
    combos = [0.25 * np.array(a) + 0.75 * np.array(b) for a in ([0, 0], [1, 2]) for b in ([-1, 1], [2, -3])]
    assert primal_grid_opt(p, 50) == pytest.approx(min(c.sum() for c in combos), abs=1e-9)


def test_grid_oracle_infeasible():
    p = StochasticProblem((0,), (1.0,), ([[0.0], [1.0]],), ConvexFn.affine([1.0]), (ConvexFn.affine([-1.0], 2.0),))
    with pytest.raises(ValueError, match="no feasible grid point"):
        primal_grid_opt(p, 50)


def test_grid_oracle_keeps_thin_feasible_sliver():
    # feasible only on x in [0.999, 1]: far thinner than a 5-point grid cell, but 1 is a generator point
    p = StochasticProblem((0,), (1.0,), ([[0.0], [1.0]],), ConvexFn.affine([1.0]), (ConvexFn.affine([-1.0], 0.999),))
    assert primal_grid_opt(p, 5, zoom_levels=0) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", [52, 84, 207, 384])
def test_primal_opt_on_hard_random_instances(seed):
    from random_instances import random_problem

    p = random_problem(seed)
    f_opt, grid = primal_opt(p).f_opt, primal_grid_opt(p, 60, zoom_levels=3)
    assert f_opt <= grid + 1e-8
    assert grid - f_opt <= 1e-3


@pytest.mark.parametrize("name", ["sim-linear", "sim-quadratic", "sim-linear-pointwise"])
def test_primal_solvers_agree(name):
    p = builtin(name)
    assert primal_opt(p).f_opt == pytest.approx(primal_grid_opt(p, 100), abs=1e-3)


def test_weak_duality_on_probes():
    for name in ("sim-linear", "sim-quadratic-nonunique"):
        p = builtin(name)
        grid = primal_grid_opt(p, 100)
        vals = dual_values(p, random_lams(p, np.random.default_rng(8), 2000))
        assert np.all(vals <= grid + 1e-9)


def test_geometry_kinds():
    p = builtin("sim-linear")
    geo = probe_geometry(p, dual_of("sim-linear"))
    assert geo.kind == POLYHEDRAL and geo.L_P > 0
    assert np.all(geo.L_P * geo.radii <= geo.envelope + 1e-12)
    geo = probe_geometry(builtin("sim-quadratic"), dual_of("sim-quadratic"))
    assert geo.kind == NON_POLYHEDRAL and geo.L_G > 0 and geo.L_G_prime > 0 and geo.S > 0
    assert probe_geometry(builtin("sim-linear-nonunique"), dual_of("sim-linear-nonunique")).kind == UNDETERMINED


def test_geometry_recovers_synthetic_curvature():
    # I=1, J=0, X={1}, f=y^2 on [-10, 10]: d(z) = z - z^2/4, z* = 2, gap = delta^2/4 exactly
    p = StochasticProblem((0,), (1.0,), ([[1.0]],), ConvexFn.quadratic([1.0]), (), Box([-10.0], [10.0]))
    sol = solve_dual(p, starts=8)
    assert sol.lambda_star.z[0] == pytest.approx(2.0, abs=1e-6)
    geo = probe_geometry(p, sol)
    assert geo.kind == NON_POLYHEDRAL
    assert geo.L_G == pytest.approx(0.25, rel=0.05)


def test_dual_minimizers_match_engine_decisions():
    p = builtin("sim-quadratic")
    tr = run(p, RunConfig(40.0, 400, seed=2))
    for t in range(0, 400, 7):
        dv = dual_value(p, tr.Q[t] / tr.V)
        assert np.allclose(dv.y, tr.y[t], atol=1e-9)
        k = tr.omega[t]
        assert np.allclose(dv.x_minimizers[k], tr.x[t])

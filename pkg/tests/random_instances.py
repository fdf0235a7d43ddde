"""Random small instances with strictly feasible constraints, and the per-instance property audit."""
import math

import numpy as np

from dpptavg.dual import dual_value, dual_values, primal_grid_opt
from dpptavg.engine import RunConfig, run, trace_to_csv
from dpptavg.problem import Box, ConvexFn, StochasticProblem, compute_C
from dpptavg.solvers import x_step, y_objective, y_step


def random_problem(seed: int) -> StochasticProblem:
    rng = np.random.default_rng(seed)
    I = int(rng.integers(1, 4))
    J = int(rng.integers(0, 4))
    S = int(rng.integers(1, 5))
    probs = rng.dirichlet(np.ones(S))
    sets = [np.round(rng.uniform(-5, 5, (int(rng.integers(1, 6)), I)), 3) for _ in range(S)]
    # a point of the average set; constraints are strictly satisfied there (Slater)
    x0 = sum(p * s[rng.integers(len(s))] for p, s in zip(probs, sets))
    if rng.uniform() < 0.5:
        f = ConvexFn.affine(rng.normal(size=I), rng.normal())
    else:
        f = ConvexFn.quadratic(rng.uniform(0.1, 2.0, I), rng.normal(size=I), rng.normal())
    cons = []
    for _ in range(J):
        slack = rng.uniform(0.1, 1.0)
        if rng.uniform() < 0.7:
            a = rng.normal(size=I)
            cons.append(ConvexFn.affine(a, -slack - a @ x0))
        else:
            q, c = rng.uniform(0.0, 1.0, I), rng.normal(size=I)
            cons.append(ConvexFn.quadratic(q, c, -slack - (q @ x0**2 + c @ x0)))
    pts = np.vstack(sets)
    pad = rng.uniform(0.0, 2.0, I)
    box = Box(pts.min(axis=0) - pad, pts.max(axis=0) + pad)
    return StochasticProblem(tuple(range(S)), probs, sets, f, cons, box, name=f"random-{seed}")


def audit(seed: int) -> list[str]:
    """Return the failed properties (empty when all hold)."""
    p = random_problem(seed)
    rng = np.random.default_rng(10_000 + seed)
    fails = []
    lam = lambda n: np.concatenate([rng.uniform(0, 3, (n, p.J)), rng.normal(0, 3, (n, p.I))], axis=1)

    # dual concavity
    a, b = lam(50), lam(50)
    if not np.all(dual_values(p, 0.5 * (a + b)) >= 0.5 * (dual_values(p, a) + dual_values(p, b)) - 1e-9):
        fails.append("concavity")
    # supergradient inequality
    for la, lb in zip(a[:20], b[:20]):
        da = dual_value(p, la)
        if dual_value(p, lb).value > da.value + da.supergradient @ (lb - la) + 1e-9:
            fails.append("supergradient")
            break
    # weak duality against the grid oracle (slack 0: every kept grid point is feasible)
    grid = primal_grid_opt(p, resolution=30 if p.I == 3 else 60, zoom_levels=3)
    if not np.all(dual_values(p, lam(200)) <= grid + 1e-9):
        fails.append("weak duality")

    V = float(rng.uniform(1, 100))
    cfg = RunConfig(V, 2000, seed=seed)
    tr = run(p, cfg)
    # bounded increments of K around a fixed reference point, the drift inequality, W >= 0
    K = np.linalg.norm(tr.Q - V * lam(1)[0], axis=1)
    if np.abs(np.diff(K)).max(initial=0.0) > math.sqrt(2 * compute_C(p)) + 1e-9:
        fails.append("increment bound")
    if np.any(tr.W < 0) or np.any(tr.drift > tr.bound_rhs + 1e-9):
        fails.append("drift inequality")
    # x-step and y-step optimality audits on sampled slots
    for t in rng.integers(0, 2000, 25):
        pts = p.decision_sets[tr.omega[t]]
        if tr.Z[t] @ tr.x[t] > (pts @ tr.Z[t]).min() + 1e-9 * (1 + np.abs(tr.Z[t]).sum()):
            fails.append("x-step")
            break
        if x_step(pts, tr.Z[t]).point.tolist() != tr.x[t].tolist():
            fails.append("x-step tie rule")
            break
        r = y_step(p, V, tr.W[t], tr.Z[t])
        ys = p.extended_set.uniform(rng, 100)
        if np.any(r.objective_value > y_objective(p, V, tr.W[t], tr.Z[t], ys) + 1e-9):
            fails.append("y-step")
            break
        if not np.allclose(r.point, tr.y[t], atol=1e-9):
            fails.append("y-step vs engine")
            break
    # determinism
    if trace_to_csv(run(p, cfg)) != trace_to_csv(tr):
        fails.append("determinism")
    return fails

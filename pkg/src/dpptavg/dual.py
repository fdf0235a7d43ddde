"""Dual of the embedded static problem: evaluation, ascent, primal oracles, geometry probes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.spatial import ConvexHull

from . import kernels
from .problem import AFFINE, StochasticProblem
from .solvers import x_step, y_step

POLYHEDRAL = "polyhedral"
NON_POLYHEDRAL = "non-polyhedral"
UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class DualPoint:
    w: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(-1))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(-1))

    @property
    def lam(self) -> np.ndarray:
        return np.concatenate([self.w, self.z])

    @classmethod
    def from_lam(cls, lam, J: int) -> "DualPoint":
        lam = np.asarray(lam, dtype=float)
        return cls(lam[:J], lam[J:])


@dataclass(frozen=True)
class DualValue:
    value: float
    supergradient: np.ndarray
    x_minimizers: list
    y: np.ndarray
    per_state: np.ndarray


def _as_point(problem: StochasticProblem, lam) -> DualPoint:
    if isinstance(lam, DualPoint):
        return lam
    return DualPoint.from_lam(lam, problem.J)


def dual_value(problem: StochasticProblem, lam) -> DualValue:
    """d(w, z) with its supergradient (g(y*), sum_w pi_w x*^w - y*) and the minimizers.

    The linear x-part over conv(X_w) is minimized at a vertex, so the x-step
    enumeration is exact; the y-part is the slot y-step with V = 1.
    """
    pt = _as_point(problem, lam)
    if np.any(pt.w < 0):
        raise ValueError("invalid multiplier: w must be nonnegative")
    yr = y_step(problem, 1.0, pt.w, pt.z)
    xs = [x_step(pts, pt.z) for pts in problem.decision_sets]
    per_state = np.array([yr.objective_value + xr.objective_value for xr in xs])
    xbar = sum(p * xr.point for p, xr in zip(problem.probs, xs))
    h = np.concatenate([problem.g(yr.point), xbar - yr.point])
    return DualValue(float(problem.probs @ per_state), h, [xr.point for xr in xs], yr.point, per_state)


def dual_values(problem: StochasticProblem, lams) -> np.ndarray:
    """Vectorized d over rows of ``lams``."""
    p = problem.packed()
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    val, _, _, _ = kernels.dual_batch(p["points"], p["offsets"], problem.probs, p["fq"], p["fl"], p["f0"],
                                      p["gq"], p["gl"], p["g0"], p["lower"], p["upper"], lams)
    return val


# -- primal side ----------------------------------------------------------------

@dataclass(frozen=True)
class PrimalSolution:
    f_opt: float
    xbar: np.ndarray
    weights: list


def primal_opt(problem: StochasticProblem) -> PrimalSolution:
    """Solve the embedded static problem over convex weights of each decision set.

    Affine instances go to an LP solver; anything with quadratic terms to SLSQP.
    """
    I, J = problem.I, problem.J
    sizes = [len(s) for s in problem.decision_sets]
    n = sum(sizes)
    # xbar = M @ mu, mu >= 0, per-state weights sum to one
    M = np.zeros((I, n))
    A_eq = np.zeros((len(sizes), n))
    k = 0
    for s, (pts, pw) in enumerate(zip(problem.decision_sets, problem.probs)):
        M[:, k:k + len(pts)] = pw * pts.T
        A_eq[s, k:k + len(pts)] = 1.0
        k += len(pts)
    b_eq = np.ones(len(sizes))
    fn_all = [problem.objective, *problem.constraints]
    if all(fn.kind == AFFINE for fn in fn_all):
        c = problem.objective.linear @ M
        A_ub = np.array([g.linear @ M for g in problem.constraints]).reshape(J, n)
        b_ub = -np.array([g.offset for g in problem.constraints])
        res = linprog(c, A_ub=A_ub if J else None, b_ub=b_ub if J else None, A_eq=A_eq, b_eq=b_eq,
                      bounds=(0, None), method="highs")
        if res.status != 0:
            raise ValueError(f"embedded problem not solved: {res.message}")
        mu = res.x
    else:
        mu0 = np.concatenate([np.full(m, 1.0 / m) for m in sizes])
        cons = [{"type": "eq", "fun": lambda mu: A_eq @ mu - b_eq, "jac": lambda mu: A_eq}]
        for g in problem.constraints:
            cons.append({"type": "ineq",
                         "fun": lambda mu, g=g: -g.value(M @ mu),
                         "jac": lambda mu, g=g: -(g.gradient(M @ mu) @ M)})
        res = minimize(lambda mu: problem.f(M @ mu), mu0,
                       jac=lambda mu: problem.objective.gradient(M @ mu) @ M,
                       bounds=[(0, None)] * n, constraints=cons, method="SLSQP",
                       options={"ftol": 1e-14, "maxiter": 2000})
        mu = np.maximum(res.x, 0.0)
        # status 8 is SLSQP running out of line-search precision at the tight ftol; keep a feasible point
        feasible = (np.abs(A_eq @ mu - b_eq).max() <= 1e-8
                    and all(float(g.value(M @ mu)) <= 1e-8 for g in problem.constraints))
        if not (res.success or (res.status == 8 and feasible)):
            raise ValueError(f"embedded problem not solved: {res.message}")
    xbar = M @ mu
    splits = np.cumsum(sizes)[:-1]
    return PrimalSolution(float(problem.f(xbar)), xbar, np.split(mu, splits))


def minkowski_points(problem: StochasticProblem, limit: int = 200_000) -> np.ndarray:
    """All sums sum_w pi_w v_w over vertex choices; their hull is the average set."""
    count = math.prod(len(s) for s in problem.decision_sets)
    if count > limit:
        raise ValueError(f"{count} vertex combinations exceed the limit of {limit}")
    pts = np.zeros((1, problem.I))
    for pw, s in zip(problem.probs, problem.decision_sets):
        pts = (pts[:, None, :] + pw * s[None, :, :]).reshape(-1, problem.I)
        pts = np.unique(np.round(pts, 12), axis=0)
    return pts


class _AverageSet:
    """Membership oracle for conv(minkowski points), working in its affine hull."""

    def __init__(self, pts: np.ndarray):
        self.center = pts.mean(axis=0)
        centered = pts - self.center
        scale = max(float(np.abs(centered).max()), 1.0)
        _, sv, vt = np.linalg.svd(centered, full_matrices=False)
        rank = int(np.sum(sv > 1e-9 * scale * max(1, len(pts)) ** 0.5))
        self.basis = vt[:rank]
        self.coords = centered @ self.basis.T
        self.rank = rank
        self.tol = 1e-12 * scale
        if rank >= 2:
            self.equations = ConvexHull(self.coords).equations
        self.lo = self.coords.min(axis=0) if rank else np.zeros(0)
        self.hi = self.coords.max(axis=0) if rank else np.zeros(0)

    def inside(self, u: np.ndarray) -> np.ndarray:
        if self.rank >= 2:
            return np.all(u @ self.equations[:, :-1].T + self.equations[:, -1] <= self.tol, axis=1)
        return np.all((u >= self.lo - self.tol) & (u <= self.hi + self.tol), axis=1)

    def lift(self, u: np.ndarray) -> np.ndarray:
        return self.center + u @ self.basis


def primal_grid_opt(problem: StochasticProblem, resolution: int = 200, zoom_levels: int = 6,
                    slack: float = 0.0) -> float:
    """Brute-force min of f over grid points of the average set with g_j <= slack.

    The grid lives in the affine hull of the average set and is seeded with
    the set's generator points. After the first pass the grid is re-laid
    around the incumbent at the same resolution ``zoom_levels`` times. With ``slack = 0`` every kept point is feasible,
    so the result is an upper bound on the optimum that tightens with
    resolution.
    """
    if problem.I > 3:
        raise ValueError("primal_grid_opt supports I <= 3")
    aset = _AverageSet(minkowski_points(problem))
    if aset.rank == 0:
        x = aset.center[None, :]
        if problem.J and np.any(problem.g(x) > slack):
            raise ValueError("no feasible grid point")
        return float(problem.f(x)[0])
    lo, hi = aset.lo.copy(), aset.hi.copy()
    best_val, best_u = math.inf, None
    # the generator points belong to the set too; they catch feasible regions thinner than a grid cell
    x = aset.lift(aset.coords)
    keep = np.all(problem.g(x) <= slack, axis=1) if problem.J else np.ones(len(x), dtype=bool)
    if keep.any():
        fv = problem.f(x[keep])
        k = int(np.argmin(fv))
        best_val, best_u = float(fv[k]), aset.coords[keep][k]
    for level in range(zoom_levels + 1):
        axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
        spacing = np.array([(b - a) / max(resolution - 1, 1) for a, b in zip(lo, hi)])
        for first in axes[0]:
            rest = np.meshgrid(*axes[1:], indexing="ij") if len(axes) > 1 else []
            u = np.column_stack([np.full(rest[0].size if rest else 1, first)] + [r.ravel() for r in rest])
            u = u[aset.inside(u)]
            if not len(u):
                continue
            x = aset.lift(u)
            if problem.J:
                keep = np.all(problem.g(x) <= slack, axis=1)
                u, x = u[keep], x[keep]
                if not len(u):
                    continue
            fv = problem.f(x)
            k = int(np.argmin(fv))
            if fv[k] < best_val:
                best_val, best_u = float(fv[k]), u[k]
        if best_u is None:
            raise ValueError("no feasible grid point")
        if level < zoom_levels:
            lo = np.maximum(best_u - 2 * spacing, aset.lo)
            hi = np.minimum(best_u + 2 * spacing, aset.hi)
    return best_val


# -- dual ascent ----------------------------------------------------------------

@dataclass
class DualSolution:
    lambda_star: DualPoint
    d_star: float
    f_opt: float
    multi_start_spread: float
    unique_flag: bool
    converged: bool = True
    endpoints: np.ndarray = field(default=None, repr=False)
    endpoint_values: np.ndarray = field(default=None, repr=False)
    history: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "lambda_star": {"w": self.lambda_star.w.tolist(), "z": self.lambda_star.z.tolist()},
            "d_star": self.d_star,
            "f_opt": self.f_opt,
            "multi_start_spread": self.multi_start_spread,
            "unique_flag": self.unique_flag,
            "converged": self.converged,
        }


def solve_dual(problem: StochasticProblem, starts: int = 16, tol: float = 1e-3, a: float = 1.0, b: float = 0.01,
               iterations: int = 2000, polyak_iterations: int = 20000, seed: int = 0,
               init_scale: float = 2.0, backend: str | None = None) -> DualSolution:
    """Maximize d over w >= 0 from ``starts`` random initial points.

    Each start runs ``iterations`` projected supergradient steps of size
    a/(1 + k b), then Polyak steps aimed at the primal optimum (strong
    duality). The best endpoint is returned; ``unique_flag`` records whether
    all endpoints agree within ``tol``.
    """
    J, I = problem.J, problem.I
    f_opt = primal_opt(problem).f_opt
    rng = np.random.default_rng(seed)
    lam0 = np.concatenate([rng.uniform(0.0, init_scale, (starts, J)),
                           rng.uniform(-init_scale, init_scale, (starts, I))], axis=1)
    p = problem.packed()
    best_lam = np.empty_like(lam0)
    best_val = np.empty(starts)
    total = iterations + polyak_iterations
    hist = np.empty((starts, total))
    kernels.ascent(p["points"], p["offsets"], problem.probs, p["fq"], p["fl"], p["f0"], p["gq"], p["gl"], p["g0"],
                   p["lower"], p["upper"], lam0, float(a), float(b), int(iterations), float(f_opt),
                   int(polyak_iterations), best_lam, best_val, hist, backend=backend)
    if _smooth_y_part(problem):
        for s in range(starts):
            best_lam[s], best_val[s] = _polish(problem, best_lam[s])
    k = int(np.argmax(best_val))
    diffs = best_lam[:, None, :] - best_lam[None, :, :]
    spread = float(np.sqrt((diffs**2).sum(axis=2)).max()) if starts > 1 else 0.0
    tail = max(total // 10, 1)
    still_improving = float(np.max(hist[:, -1] - hist[:, -tail - 1])) if total > tail else math.inf
    converged = bool(still_improving <= 1e-9 or f_opt - best_val.max() <= 1e-9)
    return DualSolution(DualPoint.from_lam(best_lam[k], J), float(dual_value(problem, best_lam[k]).value), f_opt,
                        spread, spread < tol, converged, best_lam, best_val, hist)


def _smooth_y_part(problem: StochasticProblem) -> bool:
    """True when the y-infimum is strictly convex for every w >= 0, making it C^1 in (w, z)."""
    p = problem.packed()
    return bool(np.all(p["fq"] > 0) and np.all(p["gq"] >= 0))


def _polish(problem: StochasticProblem, lam0: np.ndarray) -> tuple[np.ndarray, float]:
    """Local SLSQP refinement of an ascent endpoint in epigraph form.

    Variables are (w, z, s) with s_k <= z'v for every vertex v of state k, and
    the objective sum_k pi_k s_k + min_y [f + w'g - z'y] is smooth here.
    """
    J, I, n = problem.J, problem.I, len(problem.probs)
    p = problem.packed()
    rows = []
    for k, pts in enumerate(problem.decision_sets):
        for v in pts:
            r = np.zeros(J + I + n)
            r[J:J + I] = v
            r[J + I + k] = -1.0
            rows.append(r)
    A = np.array(rows)

    def neg(v):
        lam = v[:J + I]
        val, h, _, _ = kernels.dual_batch(p["points"], p["offsets"], problem.probs, p["fq"], p["fl"], p["f0"],
                                          p["gq"], p["gl"], p["g0"], p["lower"], p["upper"], lam[None, :])
        # replace the x-part of the batch value by the epigraph variables
        xs = np.array([x_step(pts, lam[J:]).objective_value for pts in problem.decision_sets])
        y_val = val[0] - problem.probs @ xs
        grad_y = h[0].copy()
        grad_y[J:] += -sum(pw * x_step(pts, lam[J:]).point for pw, pts in zip(problem.probs, problem.decision_sets))
        obj = y_val + problem.probs @ v[J + I:]
        return -obj, -np.concatenate([grad_y, problem.probs])

    s0 = np.array([x_step(pts, lam0[J:]).objective_value for pts in problem.decision_sets])
    v0 = np.concatenate([lam0, s0])
    res = minimize(neg, v0, jac=True, method="SLSQP",
                   bounds=[(0, None)] * J + [(None, None)] * (I + n),
                   constraints=[{"type": "ineq", "fun": lambda v: A @ v, "jac": lambda v: A}],
                   options={"ftol": 1e-15, "maxiter": 500})
    lam = res.x[:J + I].copy()
    lam[:J] = np.maximum(lam[:J], 0.0)
    val = dual_value(problem, lam).value
    start_val = dual_value(problem, lam0).value
    if val < start_val:
        return lam0, start_val
    return lam, val


# -- geometry -------------------------------------------------------------------

@dataclass
class GeometryEstimate:
    kind: str
    L_P: float | None = None
    L_G: float | None = None
    L_G_prime: float | None = None
    S: float | None = None
    sample_count: int = 0
    local_exponent: float | None = None
    radii: np.ndarray = field(default=None, repr=False)
    envelope: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "L_P": self.L_P, "L_G": self.L_G, "L_G_prime": self.L_G_prime,
                "S": self.S, "sample_count": self.sample_count, "local_exponent": self.local_exponent}


DEFAULT_RADII = tuple(np.geomspace(1e-3, 1.0, 13))


def _feasible_dirs(u: np.ndarray, w_star: np.ndarray, J: int) -> np.ndarray:
    u = u.copy()
    at_bound = w_star <= 1e-12
    u[:, :J][:, at_bound] = np.abs(u[:, :J][:, at_bound])
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _gaps(problem, lam_star, d_star, dirs, radii):
    J = problem.J
    lam = lam_star[None, None, :] + radii[None, :, None] * dirs[:, None, :]
    lam[..., :J] = np.maximum(lam[..., :J], 0.0)
    dist = np.linalg.norm(lam - lam_star, axis=2)
    vals = dual_values(problem, lam.reshape(-1, lam.shape[-1])).reshape(dist.shape)
    return d_star - vals, dist


def probe_geometry(problem: StochasticProblem, solution: DualSolution, directions: int = 64,
                   radii=DEFAULT_RADII, seed: int = 0, refine: int = 8) -> GeometryEstimate:
    """Classify the dual's decay around lambda* as linear (polyhedral) or quadratic.

    Probes d along random feasible directions plus coordinate and per-block
    directions, then sharpens the worst few by local search at the smallest
    radius. The lower envelope of the gap over directions decides the kind:
    log-log slope below 1.5 means polyhedral.
    """
    if not solution.unique_flag:
        return GeometryEstimate(UNDETERMINED)
    J, I = problem.J, problem.I
    n = J + I
    lam_star = solution.lambda_star.lam
    d_star = dual_value(problem, lam_star).value
    radii = np.asarray(sorted(radii), dtype=float)
    rng = np.random.default_rng(seed)
    cand = [rng.standard_normal((directions, n)), np.vstack([np.eye(n), -np.eye(n)])]
    for lo, hi in ((0, J), (J, n)):
        if hi > lo:
            block = np.zeros((directions // 4 + 1, n))
            block[:, lo:hi] = rng.standard_normal((len(block), hi - lo))
            cand.append(block)
    dirs = np.vstack(cand)
    dirs = dirs[np.linalg.norm(dirs, axis=1) > 0]
    dirs = _feasible_dirs(dirs, lam_star[:J], J)
    r0 = radii[:1]
    gap0, _ = _gaps(problem, lam_star, d_star, dirs, r0)
    found = []
    for k in np.argsort(gap0[:, 0])[:refine]:
        u, best = dirs[k].copy(), gap0[k, 0]
        step = 0.5
        while step > 1e-4:
            trial = _feasible_dirs(u[None, :] + step * rng.standard_normal((16, n)), lam_star[:J], J)
            g, _ = _gaps(problem, lam_star, d_star, trial, r0)
            j = int(np.argmin(g[:, 0]))
            if g[j, 0] < best:
                u, best = trial[j], g[j, 0]
            else:
                step *= 0.5
        found.append(u)
    dirs = np.vstack([dirs, *found]) if found else dirs
    gaps, dist = _gaps(problem, lam_star, d_star, dirs, radii)
    count = gaps.size
    if np.any(gaps < -1e-9) or np.all(gaps <= 0):
        return GeometryEstimate(UNDETERMINED, sample_count=count)
    valid = dist > 0
    ratio1 = np.where(valid, gaps / np.where(valid, dist, 1.0), np.inf)
    ratio2 = np.where(valid, gaps / np.where(valid, dist, 1.0) ** 2, np.inf)
    envelope = ratio1.min(axis=0) * radii  # lower envelope of the gap at each nominal radius
    small = slice(0, min(4, len(radii)))
    pos = envelope[small] > 0
    if pos.sum() < 2:
        slope = 2.0
    else:
        slope = float(np.polyfit(np.log(radii[small][pos]), np.log(envelope[small][pos]), 1)[0])
    if slope < 1.5:
        return GeometryEstimate(POLYHEDRAL, L_P=float(ratio1.min()), sample_count=count,
                                local_exponent=slope, radii=radii, envelope=envelope)
    curv = envelope[0] / radii[0] ** 2
    resid = np.abs(envelope - curv * radii**2) / np.maximum(envelope, 1e-300)
    ok = np.cumprod(resid <= 0.10).astype(bool)
    S = float(radii[ok][-1]) if ok.any() else float(radii[0])
    inner = dist <= S * (1 + 1e-12)
    L_G = float(ratio2[inner & valid].min())
    outer = dist > S * (1 + 1e-12)
    L_Gp = float(ratio1[outer].min()) if outer.any() else L_G * S
    return GeometryEstimate(NON_POLYHEDRAL, L_G=L_G, L_G_prime=L_Gp, S=S, sample_count=count,
                            local_exponent=slope, radii=radii, envelope=envelope)

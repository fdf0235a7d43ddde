"""Per-slot subproblems: linear minimization over a finite set and the y-step over Y."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import StochasticProblem

CLOSED_FORM = "closed-form"
PROJECTED_GRADIENT = "projected-gradient"

PG_TOL = 1e-12
PG_MAX_ITER = 100_000


@dataclass(frozen=True)
class XStepResult:
    point: np.ndarray
    index: int
    objective_value: float


@dataclass(frozen=True)
class YStepResult:
    point: np.ndarray
    objective_value: float
    method: str
    iterations: int = 0


def x_step(decision_set, Z) -> XStepResult:
    """Minimize ``Z @ x`` over the rows of ``decision_set``; ties go to the lowest index."""
    pts = np.asarray(decision_set, dtype=float)
    if pts.size == 0:
        raise ValueError("empty decision set")
    vals = pts @ np.asarray(Z, dtype=float)
    k = int(np.argmin(vals))  # argmin returns the first minimizer
    return XStepResult(pts[k].copy(), k, float(vals[k]))


def y_coefficients(problem: StochasticProblem, V: float, W, Z) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate quadratic and linear coefficients of V f(y) + W'g(y) - Z'y."""
    p = problem.packed()
    W = np.asarray(W, dtype=float)
    quad = V * p["fq"] + W @ p["gq"]
    lin = V * p["fl"] + W @ p["gl"] - np.asarray(Z, dtype=float)
    return quad, lin


def y_objective(problem: StochasticProblem, V: float, W, Z, y):
    y = np.asarray(y, dtype=float)
    W = np.asarray(W, dtype=float)
    out = V * problem.f(y) - y @ np.asarray(Z, dtype=float)
    if problem.J:
        out = out + problem.g(y) @ W
    return out


def _check_multiplier(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if np.any(W < 0):
        raise ValueError("invalid multiplier: W must be nonnegative")
    return W


def separable_argmin(quad, lin, lower, upper) -> np.ndarray:
    """Coordinate-wise minimizer of quad*y^2 + lin*y over [lower, upper].

    Zero curvature picks a box face by the sign of ``lin``; a zero linear
    coefficient then selects the lower bound.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.clip(-lin / (2.0 * quad), lower, upper)
    face = np.where(lin < 0, upper, lower)
    return np.where(quad > 0, stat, face)


def y_step(problem: StochasticProblem, V: float, W, Z, method: str = CLOSED_FORM) -> YStepResult:
    """Minimize ``V f(y) + W'g(y) - Z'y`` over the box Y."""
    W = _check_multiplier(W)
    box = problem.extended_set
    if method == CLOSED_FORM:
        quad, lin = y_coefficients(problem, V, W, Z)
        y = separable_argmin(quad, lin, box.lower, box.upper)
        return YStepResult(y, float(y_objective(problem, V, W, Z, y)), CLOSED_FORM, 0)
    if method == PROJECTED_GRADIENT:
        return _projected_gradient(problem, V, W, Z)
    raise ValueError(f"unknown y-step method {method!r}")


def _projected_gradient(problem, V, W, Z, tol=PG_TOL, max_iter=PG_MAX_ITER) -> YStepResult:
    box = problem.extended_set
    Z = np.asarray(Z, dtype=float)
    quad, _ = y_coefficients(problem, V, W, Z)
    curvature = 2.0 * float(quad.max(initial=0.0))

    def grad(y):
        g = V * problem.objective.gradient(y) - Z
        for wj, c in zip(W, problem.constraints):
            g = g + wj * c.gradient(y)
        return g

    y = 0.5 * (box.lower + box.upper)
    obj = y_objective(problem, V, W, Z, y)
    if curvature == 0.0:
        # linear objective: one long projected step lands on the optimal face
        step = float(np.max(box.upper - box.lower)) / max(float(np.abs(grad(y)).max()), 1e-300)
    else:
        step = 1.0 / curvature
    it = 0
    for it in range(1, max_iter + 1):
        y_new = np.clip(y - step * grad(y), box.lower, box.upper)
        obj_new = y_objective(problem, V, W, Z, y_new)
        improvement = obj - obj_new
        y, obj = y_new, obj_new
        if improvement < tol:
            break
    return YStepResult(y, float(obj), PROJECTED_GRADIENT, it)

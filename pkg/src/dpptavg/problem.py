"""Problem instances: random states, finite decision sets, convex functions, box Y."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

AFFINE = "affine"
QUADRATIC = "quadratic"

PROB_SUM_TOL = 1e-12
CONTAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ConvexFn:
    """Separable convex function ``sum_i quad_i x_i^2 + linear_i x_i + offset``.

    Affine functions carry an all-zero ``quad``.
    """

    kind: str
    linear: np.ndarray
    quad: np.ndarray
    offset: float = 0.0
    lipschitz_bound: float | None = None

    @classmethod
    def affine(cls, a: Sequence[float], b: float = 0.0) -> "ConvexFn":
        a = np.asarray(a, dtype=float)
        return cls(AFFINE, a, np.zeros_like(a), float(b))

    @classmethod
    def quadratic(cls, q: Sequence[float], c: Sequence[float] | None = None, b: float = 0.0) -> "ConvexFn":
        q = np.asarray(q, dtype=float)
        c = np.zeros_like(q) if c is None else np.asarray(c, dtype=float)
        return cls(QUADRATIC, c, q, float(b))

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return (x * x) @ self.quad + x @ self.linear + self.offset

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * self.quad * x + self.linear

    subgradient = gradient

    def to_dict(self) -> dict[str, Any]:
        if self.kind == AFFINE:
            return {"kind": AFFINE, "a": self.linear.tolist(), "b": self.offset}
        return {"kind": QUADRATIC, "q": self.quad.tolist(), "c": self.linear.tolist(), "b": self.offset}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConvexFn":
        kind = d.get("kind", AFFINE)
        sense = d.get("sense", "<=")
        if kind == AFFINE:
            fn = cls.affine(d["a"], d.get("b", 0.0))
        elif kind == QUADRATIC:
            fn = cls.quadratic(d["q"], d.get("c"), d.get("b", 0.0))
        else:
            raise ValueError(f"unknown function kind {kind!r}")
        if sense == ">=":
            # h(x) >= 0 is stored as g(x) = -h(x) <= 0; only affine h keeps g convex.
            if kind != AFFINE:
                raise ValueError("'>=' constraints must be affine")
            fn = cls.affine(-fn.linear, -fn.offset)
        elif sense != "<=":
            raise ValueError(f"unknown constraint sense {sense!r}")
        return fn


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def contains(self, points, tol: float = CONTAIN_TOL) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lower - tol) & (p <= self.upper + tol), axis=1)

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def scaled(self, factor: float) -> "Box":
        mid = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * factor
        return Box(mid - half, mid + half)


def bounding_box(point_sets: Sequence[np.ndarray]) -> Box:
    pts = np.vstack([np.asarray(p, dtype=float) for p in point_sets if len(p)])
    return Box(pts.min(axis=0), pts.max(axis=0))


@dataclass(frozen=True, eq=False)
class StochasticProblem:
    """An instance: states with probabilities, per-state vertex sets, f, g_1..g_J and Y."""

    state_ids: tuple
    probs: np.ndarray
    decision_sets: tuple
    objective: ConvexFn
    constraints: tuple = ()
    extended_set: Box | None = None
    name: str = ""
    _packed: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "state_ids", tuple(self.state_ids))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        sets = tuple(np.asarray(s, dtype=float).reshape(-1, self.objective.dim) for s in self.decision_sets)
        object.__setattr__(self, "decision_sets", sets)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if len(sets) != len(self.state_ids) or self.probs.shape != (len(self.state_ids),):
            raise ValueError("state ids, probabilities and decision sets must align")
        if self.extended_set is None:
            object.__setattr__(self, "extended_set", bounding_box(sets))

    @property
    def I(self) -> int:  # noqa: E743
        return self.objective.dim

    @property
    def J(self) -> int:
        return len(self.constraints)

    @property
    def n_states(self) -> int:
        return len(self.state_ids)

    def state_index(self, state_id) -> int:
        try:
            return self.state_ids.index(state_id)
        except ValueError:
            raise KeyError(f"unknown state id {state_id!r}") from None

    def all_points(self) -> np.ndarray:
        return np.vstack(self.decision_sets)

    def f(self, x):
        return self.objective.value(x)

    def g(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.constraints:
            return np.zeros(x.shape[:-1] + (0,))
        return np.stack([c.value(x) for c in self.constraints], axis=-1)

    @property
    def lipschitz_f(self) -> float:
        return self.objective.lipschitz_bound or lipschitz_estimate(self.objective, self.extended_set)

    @property
    def lipschitz_g(self) -> np.ndarray:
        return np.array([c.lipschitz_bound or lipschitz_estimate(c, self.extended_set) for c in self.constraints])

    def packed(self) -> dict[str, np.ndarray]:
        """Flat arrays consumed by the compiled kernels (cached)."""
        if not self._packed:
            I, J = self.I, self.J
            sizes = [len(s) for s in self.decision_sets]
            gq = np.array([c.quad for c in self.constraints]).reshape(J, I)
            gl = np.array([c.linear for c in self.constraints]).reshape(J, I)
            self._packed.update(
                points=np.ascontiguousarray(self.all_points()),
                offsets=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
                fq=self.objective.quad.copy(),
                fl=self.objective.linear.copy(),
                f0=float(self.objective.offset),
                gq=np.ascontiguousarray(gq),
                gl=np.ascontiguousarray(gl),
                g0=np.array([c.offset for c in self.constraints], dtype=float),
                lower=self.extended_set.lower.copy(),
                upper=self.extended_set.upper.copy(),
            )
        return self._packed

    def with_extended_set(self, box: Box) -> "StochasticProblem":
        return StochasticProblem(self.state_ids, self.probs, self.decision_sets, self.objective,
                                 self.constraints, box, self.name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "states": [
                {"id": sid, "prob": float(p), "points": pts.tolist()}
                for sid, p, pts in zip(self.state_ids, self.probs, self.decision_sets)
            ],
            "objective": self.objective.to_dict(),
            "constraints": [c.to_dict() for c in self.constraints],
            "extended_set": {
                "lower": self.extended_set.lower.tolist(),
                "upper": self.extended_set.upper.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StochasticProblem":
        objective = ConvexFn.from_dict(d["objective"])
        states = d["states"]
        box = d.get("extended_set")
        return cls(
            state_ids=[s["id"] for s in states],
            probs=[s["prob"] for s in states],
            decision_sets=[np.asarray(s["points"], dtype=float).reshape(-1, objective.dim) for s in states],
            objective=objective,
            constraints=[ConvexFn.from_dict(c) for c in d.get("constraints", [])],
            extended_set=Box(box["lower"], box["upper"]) if box else None,
            name=d.get("name", ""),
        )


def problem_to_json(problem: StochasticProblem) -> str:
    return json.dumps(problem.to_dict(), indent=2) + "\n"


def load_problem(path: str | Path) -> StochasticProblem:
    with open(path) as fh:
        return StochasticProblem.from_dict(json.load(fh))


def save_problem(problem: StochasticProblem, path: str | Path) -> None:
    Path(path).write_text(problem_to_json(problem))


def _fmt(v) -> str:
    return "(" + ", ".join(f"{x:g}" for x in np.atleast_1d(v)) + ")"


def validate(problem: StochasticProblem) -> list[str]:
    """Every checkable precondition violation, as human-readable strings."""
    issues = []
    I = problem.I
    if I < 1:
        issues.append("decision dimension I must be >= 1")
    total = float(np.sum(problem.probs))
    if abs(total - 1.0) > PROB_SUM_TOL:
        issues.append(f"probabilities sum to {total:g}")
    for sid, p in zip(problem.state_ids, problem.probs):
        if p < 0:
            issues.append(f"probability of state {sid} is negative ({p:g})")
    box = problem.extended_set
    if box.dim != I:
        issues.append(f"extended set has dimension {box.dim}, expected {I}")
        return issues
    if np.any(box.lower > box.upper):
        issues.append("extended set lower bound exceeds upper bound")
    for fn, label in [(problem.objective, "objective")] + [(c, f"constraint {j + 1}") for j, c in enumerate(problem.constraints)]:
        if fn.dim != I:
            issues.append(f"{label} has dimension {fn.dim}, expected {I}")
        elif np.any(fn.quad < 0):
            issues.append(f"{label} has a negative quadratic coefficient (not convex)")
    for sid, pts in zip(problem.state_ids, problem.decision_sets):
        if len(pts) == 0:
            issues.append(f"decision set of state {sid} is empty")
            continue
        for pt in pts[~box.contains(pts)]:
            issues.append(f"point outside Y: {_fmt(pt)} in state {sid}")
    return issues


def lipschitz_estimate(fn: ConvexFn, box: Box) -> float:
    """Upper bound on the Lipschitz constant of ``fn`` over ``box``.

    The gradient is separable, so the largest gradient norm over the box is
    reached by taking each coordinate's worst endpoint independently.
    """
    lo = np.abs(2.0 * fn.quad * box.lower + fn.linear)
    hi = np.abs(2.0 * fn.quad * box.upper + fn.linear)
    return float(np.linalg.norm(np.maximum(lo, hi)))


def _separable_range(fn: ConvexFn, box: Box) -> tuple[float, float]:
    """(min, max) of a separable convex function over a box."""
    lo_v = fn.quad * box.lower**2 + fn.linear * box.lower
    hi_v = fn.quad * box.upper**2 + fn.linear * box.upper
    fmax = np.maximum(lo_v, hi_v)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(fn.quad > 0, -fn.linear / (2.0 * fn.quad), box.lower)
    stat = np.clip(stat, box.lower, box.upper)
    st_v = fn.quad * stat**2 + fn.linear * stat
    fmin = np.minimum(np.minimum(lo_v, hi_v), st_v)
    return float(fmin.sum() + fn.offset), float(fmax.sum() + fn.offset)


def compute_C(problem: StochasticProblem) -> float:
    """Upper bound on sup over x in conv(all points), y in Y of (|g(y)|^2 + |x - y|^2) / 2.

    Both terms are convex, so for affine g the joint supremum sits on a
    (vertex, corner) pair and enumeration is exact. With quadratic g the
    squared-constraint term is bounded per component instead.
    """
    pts = problem.all_points()
    corners = problem.extended_set.corners()
    # max over vertices of |x - y|^2 for each corner y
    dist2 = ((corners[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2).max(axis=1)
    if all(c.kind == AFFINE for c in problem.constraints):
        g2 = (problem.g(corners) ** 2).sum(axis=1)
        return float(0.5 * np.max(g2 + dist2))
    g2_bound = 0.0
    for c in problem.constraints:
        lo, hi = _separable_range(c, problem.extended_set)
        g2_bound += max(lo * lo, hi * hi)
    return float(0.5 * (g2_bound + dist2.max()))

"""Builtin instances of the three-state two-dimensional simulation problem.

Constraints ``2 x1 + x2 >= 1.5`` and ``x1 + 2 x2 >= 1.5`` are stored in
canonical form ``g(x) = 1.5 - 2 x1 - x2 <= 0``; the non-unique variants add
``g3(x) = 1 - x1 - x2 <= 0``.

State 1 chooses x1 from {-5, 0} and x2 from {0, 10}; state 2 chooses x1 from
{0, 5} and x2 from {-10, 0}. Each decision set is therefore the four corner
points of those per-coordinate choices. The ``-pointwise`` builtin keeps only
the two listed points per state; its average set degenerates to a segment
and its optimum moves away from (0.5, 0.5).
"""
from __future__ import annotations

import itertools
from importlib import resources

from .problem import Box, ConvexFn, StochasticProblem, problem_to_json, load_problem

PROBS = (0.1, 0.6, 0.3)
Y_BOX = Box([-5.0, -10.0], [5.0, 10.0])

LINEAR_OBJECTIVE = ConvexFn.affine([1.5, 1.0])
QUADRATIC_OBJECTIVE = ConvexFn.quadratic([1.0, 1.0], [0.0, 0.0])
BASE_CONSTRAINTS = (ConvexFn.affine([-2.0, -1.0], 1.5), ConvexFn.affine([-1.0, -2.0], 1.5))
EXTRA_CONSTRAINT = ConvexFn.affine([-1.0, -1.0], 1.0)

BUILTIN_OPTIMA = {
    "sim-linear": 1.25,
    "sim-quadratic": 0.5,
    "sim-linear-nonunique": 1.25,
    "sim-quadratic-nonunique": 0.5,
    "sim-linear-pointwise": 1.6875,
}


def _corner_sets():
    return [
        [(0.0, 0.0)],
        list(itertools.product((-5.0, 0.0), (0.0, 10.0))),
        list(itertools.product((0.0, 5.0), (-10.0, 0.0))),
    ]


def _pointwise_sets():
    return [[(0.0, 0.0)], [(-5.0, 0.0), (0.0, 10.0)], [(0.0, -10.0), (5.0, 0.0)]]


def make_sim_problem(objective: str = "linear", nonunique: bool = False, pointwise: bool = False) -> StochasticProblem:
    f = LINEAR_OBJECTIVE if objective == "linear" else QUADRATIC_OBJECTIVE
    constraints = BASE_CONSTRAINTS + ((EXTRA_CONSTRAINT,) if nonunique else ())
    name = f"sim-{objective}" + ("-nonunique" if nonunique else "") + ("-pointwise" if pointwise else "")
    sets = _pointwise_sets() if pointwise else _corner_sets()
    return StochasticProblem((0, 1, 2), PROBS, sets, f, constraints, Y_BOX, name)


def _builders():
    return {
        "sim-linear": lambda: make_sim_problem("linear"),
        "sim-quadratic": lambda: make_sim_problem("quadratic"),
        "sim-linear-nonunique": lambda: make_sim_problem("linear", nonunique=True),
        "sim-quadratic-nonunique": lambda: make_sim_problem("quadratic", nonunique=True),
        "sim-linear-pointwise": lambda: make_sim_problem("linear", pointwise=True),
    }


BUILTINS = tuple(_builders())


def builtin_path(name: str):
    return resources.files("dpptavg") / "data" / f"{name}.json"


def load_builtin(name: str) -> StochasticProblem:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")
    return load_problem(builtin_path(name))


def resolve_problem(name_or_path: str) -> StochasticProblem:
    """A builtin name or a path to a problem JSON file."""
    if name_or_path in BUILTINS:
        return load_builtin(name_or_path)
    return load_problem(name_or_path)


def regenerate(directory=None) -> None:
    """Rewrite the checked-in JSON definitions from the builders."""
    from pathlib import Path

    out = Path(directory) if directory else Path(str(resources.files("dpptavg") / "data"))
    for name, build in _builders().items():
        (out / f"{name}.json").write_text(problem_to_json(build()))


def builder(name: str):
    return _builders()[name]

"""Running time averages of x(t) and y(t), and geometric restart (staggered) schedules."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import StochasticProblem


@dataclass
class AverageWindow:
    t0: int
    T: int = 0
    sum_x: np.ndarray | None = None
    sum_y: np.ndarray | None = None

    @property
    def x_mean(self) -> np.ndarray:
        return self.sum_x / self.T

    @property
    def y_mean(self) -> np.ndarray:
        return self.sum_y / self.T


def accumulate(window: AverageWindow, x, y) -> AverageWindow:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if window.sum_x is None:
        window.sum_x = np.zeros_like(x)
        window.sum_y = np.zeros_like(y)
    window.sum_x = window.sum_x + x
    window.sum_y = window.sum_y + y
    window.T += 1
    return window


@dataclass(frozen=True)
class Evaluation:
    f_xbar: float
    g_xbar: np.ndarray
    f_ybar: float
    g_ybar: np.ndarray

    @property
    def max_violation(self) -> float:
        return float(self.g_xbar.max()) if self.g_xbar.size else -math.inf


def evaluate(window: AverageWindow, problem: StochasticProblem) -> Evaluation:
    if window.T < 1:
        raise ValueError("cannot evaluate an empty window")
    xb, yb = window.x_mean, window.y_mean
    return Evaluation(float(problem.f(xb)), problem.g(xb), float(problem.f(yb)), problem.g(yb))


@dataclass
class StaggerSchedule:
    """Restart slots ceil(base**k), k = 0, 1, 2, ... (duplicates dropped)."""

    base: float = 2.0
    restarts: tuple | None = field(default=None)

    def __post_init__(self):
        if self.restarts is None and not self.base > 1:
            raise ValueError("stagger base must exceed 1")

    def restart_slots(self, horizon: int) -> list[int]:
        if self.restarts is not None:
            return sorted({int(t) for t in self.restarts if 0 < t < horizon})
        out = []
        k = 0
        while True:
            t = math.ceil(self.base**k)
            if t >= horizon:
                return out
            if not out or t > out[-1]:
                out.append(t)
            k += 1

    def frames(self, horizon: int) -> list[tuple[int, int]]:
        """(t0, T) pairs partitioning slots 0..horizon-1."""
        edges = [0] + self.restart_slots(horizon) + [horizon]
        return [(a, b - a) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    @classmethod
    def none(cls) -> "StaggerSchedule":
        return cls(restarts=())


@dataclass(frozen=True)
class FrameResult:
    index: int
    window: AverageWindow
    evaluation: Evaluation


def staggered_run(trace, schedule: StaggerSchedule) -> list[FrameResult]:
    """Per-frame averages of a completed run, restarting at the schedule's slots."""
    problem = trace.problem
    out = []
    cx, cy = trace.prefix_sums()
    for k, (t0, T) in enumerate(schedule.frames(len(trace))):
        w = AverageWindow(t0, T, cx[t0 + T] - cx[t0], cy[t0 + T] - cy[t0])
        out.append(FrameResult(k, w, evaluate(w, problem)))
    return out


def running_evaluation(problem: StochasticProblem, x, start: int = 0):
    """f and max_j g_j of the running average of ``x[start:]`` at every length.

    Returns arrays indexed by the window length T-1 (T = 1..len-start).
    """
    xs = np.asarray(x[start:], dtype=float)
    T = np.arange(1, xs.shape[0] + 1)[:, None]
    xbar = np.cumsum(xs, axis=0) / T
    f = problem.f(xbar)
    g = problem.g(xbar)
    gmax = g.max(axis=1) if g.shape[1] else np.full(len(f), -np.inf)
    return f, gmax


def frames_to_csv(frames: list[FrameResult], J: int) -> str:
    buf = io.StringIO()
    buf.write(",".join(["frame_index", "t0", "T", "f_xbar"] + [f"g_{j + 1}_xbar" for j in range(J)] + ["f_ybar"]) + "\n")
    for fr in frames:
        ev = fr.evaluation
        vals = [ev.f_xbar, *ev.g_xbar.tolist(), ev.f_ybar]
        buf.write(f"{fr.index},{fr.window.t0},{fr.window.T}," + ",".join(f"{v:.17g}" for v in vals) + "\n")
    return buf.getvalue()


def write_frames_csv(frames: list[FrameResult], J: int, path: str | Path) -> None:
    Path(path).write_text(frames_to_csv(frames, J))


def read_frames_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header[:4] != ["frame_index", "t0", "T", "f_xbar"] or header[-1] != "f_ybar":
        raise ValueError(f"{path}: not a frame-summary CSV")
    if data.size == 0:
        data = np.empty((0, len(header)))
    return {h: data[:, i] for i, h in enumerate(header)}

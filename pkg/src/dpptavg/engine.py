"""Drift-plus-penalty engine: state sampling, slot updates, traces and trace CSV."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .problem import StochasticProblem, compute_C
from .solvers import x_step, y_step

RNG_NAME = "philox4x64-v1"

FULL = "full"
EVERY_K = "every-k"
CHECKPOINTS = "checkpoints"


@dataclass
class RunConfig:
    V: float
    horizon: int
    seed: int = 0
    initial_W: Sequence[float] | None = None
    initial_Z: Sequence[float] | None = None
    trace_granularity: str = FULL
    every: int = 1
    checkpoints: Sequence[int] = ()

    def __post_init__(self):
        if not self.V > 0:
            raise ValueError("V must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.trace_granularity not in (FULL, EVERY_K, CHECKPOINTS):
            raise ValueError(f"unknown trace granularity {self.trace_granularity!r}")
        if self.trace_granularity == EVERY_K and self.every < 1:
            raise ValueError("every-k granularity needs k >= 1")

    def initial_state(self, problem: StochasticProblem) -> "QueueState":
        W = np.zeros(problem.J) if self.initial_W is None else np.asarray(self.initial_W, dtype=float)
        Z = np.zeros(problem.I) if self.initial_Z is None else np.asarray(self.initial_Z, dtype=float)
        if W.shape != (problem.J,) or Z.shape != (problem.I,):
            raise ValueError("initial queue vectors have the wrong dimension")
        if np.any(W < 0):
            raise ValueError("initial W must be nonnegative")
        return QueueState(W, Z, 0)


@dataclass(frozen=True)
class QueueState:
    W: np.ndarray
    Z: np.ndarray
    t: int = 0

    @property
    def Q(self) -> np.ndarray:
        return np.concatenate([self.W, self.Z])

    def lyapunov(self) -> float:
        return 0.5 * float(self.W @ self.W + self.Z @ self.Z)


@dataclass(frozen=True)
class SlotRecord:
    t: int
    omega: object
    x: np.ndarray
    y: np.ndarray
    state: QueueState
    next_state: QueueState
    drift: float
    bound_rhs: float


def sample_states(problem: StochasticProblem, seed: int, horizon: int, start: int = 0) -> np.ndarray:
    """Indices of i.i.d. states for slots ``start .. start+horizon-1``.

    Uses a counter-based generator keyed by ``seed``, so the state at slot t
    depends only on (seed, t).
    """
    bitgen = np.random.Philox(key=seed)
    # one Philox counter step yields four 64-bit words, i.e. four doubles
    blocks, skip = divmod(start, 4)
    if blocks:
        bitgen.advance(blocks)
    u = np.random.Generator(bitgen).random(horizon + skip)[skip:]
    cdf = np.cumsum(problem.probs)
    idx = np.searchsorted(cdf, u, side="right")
    last = int(np.flatnonzero(problem.probs > 0)[-1])
    return np.minimum(idx, last).astype(np.int64)


def step(problem: StochasticProblem, config: RunConfig, state: QueueState, omega, C: float | None = None):
    """One slot of the algorithm for observed state ``omega`` (a state id)."""
    if np.any(state.W < 0):
        raise ValueError("invalid multiplier: W must be nonnegative")
    k = problem.state_index(omega)
    xr = x_step(problem.decision_sets[k], state.Z)
    yr = y_step(problem, config.V, state.W, state.Z)
    x, y = xr.point, yr.point
    g = problem.g(y)
    W_next = np.maximum(state.W + g, 0.0)
    Z_next = state.Z + (x - y)
    nxt = QueueState(W_next, Z_next, state.t + 1)
    drift = 0.5 * float((W_next - state.W) @ (W_next + state.W) + (Z_next - state.Z) @ (Z_next + state.Z))
    C = compute_C(problem) if C is None else C
    rhs = C + float(state.W @ g) + float(state.Z @ (x - y))
    return nxt, SlotRecord(state.t, omega, x, y, state, nxt, drift, rhs)


@dataclass
class Trace:
    """Full per-slot arrays of one run. ``W`` and ``Z`` hold Q(0)..Q(T)."""

    problem: StochasticProblem
    config: RunConfig
    omega: np.ndarray
    x: np.ndarray
    y: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    drift: np.ndarray
    bound_rhs: np.ndarray
    C: float
    rng: str = RNG_NAME
    _cx: np.ndarray | None = field(default=None, repr=False)
    _cy: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.omega.shape[0]

    @property
    def horizon(self) -> int:
        return len(self)

    @property
    def V(self) -> float:
        return self.config.V

    @property
    def Q(self) -> np.ndarray:
        return np.concatenate([self.W, self.Z], axis=1)

    def state_ids(self) -> list:
        return [self.problem.state_ids[k] for k in self.omega]

    def record(self, t: int) -> SlotRecord:
        s = QueueState(self.W[t].copy(), self.Z[t].copy(), t)
        n = QueueState(self.W[t + 1].copy(), self.Z[t + 1].copy(), t + 1)
        return SlotRecord(t, self.problem.state_ids[self.omega[t]], self.x[t].copy(), self.y[t].copy(),
                          s, n, float(self.drift[t]), float(self.bound_rhs[t]))

    def records(self):
        return [self.record(t) for t in self.recorded_slots()]

    def recorded_slots(self) -> np.ndarray:
        cfg = self.config
        T = len(self)
        if cfg.trace_granularity == EVERY_K:
            return np.arange(0, T, cfg.every)
        if cfg.trace_granularity == CHECKPOINTS:
            cp = np.unique(np.asarray(cfg.checkpoints, dtype=np.int64))
            return cp[(cp >= 0) & (cp < T)]
        return np.arange(T)

    def prefix_sums(self) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative sums S[t] = sum_{s<t} x(s) (and y), with S[0] = 0."""
        if self._cx is None:
            I = self.x.shape[1]
            self._cx = np.vstack([np.zeros(I), np.cumsum(self.x, axis=0)])
            self._cy = np.vstack([np.zeros(I), np.cumsum(self.y, axis=0)])
        return self._cx, self._cy

    def window_means(self, t0: int, T: int) -> tuple[np.ndarray, np.ndarray]:
        """(x̄(t0,T), ȳ(t0,T))."""
        cx, cy = self.prefix_sums()
        return (cx[t0 + T] - cx[t0]) / T, (cy[t0 + T] - cy[t0]) / T

    def K(self, lam_star, V: float | None = None) -> np.ndarray:
        """Distance |Q(t) - V lambda*| for t = 0..T."""
        V = self.V if V is None else V
        return np.linalg.norm(self.Q - V * np.asarray(lam_star, dtype=float), axis=1)


def run(problem: StochasticProblem, config: RunConfig, omega_stream=None, backend: str | None = None) -> Trace:
    """Run the algorithm for ``config.horizon`` slots.

    ``omega_stream`` optionally fixes the state sequence (as state ids);
    otherwise states are drawn from ``config.seed``.
    """
    state = config.initial_state(problem)
    if omega_stream is None:
        omega = sample_states(problem, config.seed, config.horizon)
    else:
        omega = np.array([problem.state_index(s) for s in omega_stream], dtype=np.int64)
    T = omega.shape[0]
    I, J = problem.I, problem.J
    p = problem.packed()
    C = compute_C(problem)
    xs = np.empty((T, I))
    ys = np.empty((T, I))
    Ws = np.empty((T + 1, J))
    Zs = np.empty((T + 1, I))
    drift = np.empty(T)
    rhs = np.empty(T)
    kernels.dpp_loop(p["points"], p["offsets"], omega, float(config.V), state.W, state.Z,
                     p["fq"], p["fl"], p["gq"], p["gl"], p["g0"], p["lower"], p["upper"], C,
                     xs, ys, Ws, Zs, drift, rhs, backend=backend)
    return Trace(problem, config, omega, xs, ys, Ws, Zs, drift, rhs, C)


# -- trace CSV -----------------------------------------------------------------

def trace_header(I: int, J: int) -> list[str]:
    return (["t", "omega"] + [f"x_{i + 1}" for i in range(I)] + [f"y_{i + 1}" for i in range(I)]
            + [f"W_{j + 1}" for j in range(J)] + [f"Z_{i + 1}" for i in range(I)] + ["drift", "bound_rhs"])


def _omega_column(trace: Trace, rows) -> np.ndarray:
    ids = trace.problem.state_ids
    if all(isinstance(s, (int, np.integer)) for s in ids):
        return np.asarray(ids, dtype=np.int64)[trace.omega[rows]]
    return trace.omega[rows]


def trace_to_csv(trace: Trace) -> str:
    rows = trace.recorded_slots()
    I, J = trace.problem.I, trace.problem.J
    body = np.column_stack([
        trace.x[rows], trace.y[rows], trace.W[rows], trace.Z[rows], trace.drift[rows], trace.bound_rhs[rows],
    ]) if len(rows) else np.empty((0, 3 * I + J + 2))
    buf = io.StringIO()
    buf.write(",".join(trace_header(I, J)) + "\n")
    omega = _omega_column(trace, rows)
    for t, w, vals in zip(rows, omega, body):
        buf.write(f"{t},{w}," + ",".join(f"{v:.17g}" for v in vals) + "\n")
    return buf.getvalue()


def write_trace_csv(trace: Trace, path: str | Path) -> None:
    Path(path).write_text(trace_to_csv(trace))


@dataclass
class TraceTable:
    """A trace read back from CSV (only the recorded rows)."""

    t: np.ndarray
    omega: np.ndarray
    x: np.ndarray
    y: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    drift: np.ndarray
    bound_rhs: np.ndarray

    @property
    def Q(self) -> np.ndarray:
        return np.concatenate([self.W, self.Z], axis=1)


def read_trace_csv(path: str | Path) -> TraceTable:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    I = sum(h.startswith("x_") for h in header)
    J = sum(h.startswith("W_") for h in header)
    if header != trace_header(I, J):
        raise ValueError(f"{path}: not a trace CSV (unexpected header)")
    if data.size == 0:
        data = np.empty((0, len(header)))
    c = 2
    x = data[:, c:c + I]; c += I
    y = data[:, c:c + I]; c += I
    W = data[:, c:c + J]; c += J
    Z = data[:, c:c + I]; c += I
    return TraceTable(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), x, y, W, Z, data[:, c], data[:, c + 1])

"""Analysis constants, transient detection around V*lambda*, concentration and rate checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .averaging import StaggerSchedule, running_evaluation, staggered_run
from .dual import NON_POLYHEDRAL, POLYHEDRAL, GeometryEstimate
from .problem import StochasticProblem, compute_C

PLAIN = "plain"
STAGGERED = "staggered"
ORACLE_START = "oracle-start"
MODES = (PLAIN, STAGGERED, ORACLE_START)


# -- constants ------------------------------------------------------------------

def theorem4(delta: float, beta: float, K: float) -> tuple[float, float, float]:
    """(r, rho, D) of the exponential concentration bound for a process with
    increments bounded by ``delta`` and drift ``-beta`` outside radius ``K``."""
    r = beta / (delta**2 + delta * beta / 3.0)
    rho = 1.0 - r * beta / 2.0
    D = (math.exp(r * delta) - rho) * math.exp(r * K) / (1.0 - rho)
    return r, rho, D


def _U(r: float, D: float, B: float) -> tuple[float, float]:
    m = D + math.exp(r * B)
    return math.log(m) / r, 2.0 * m / r**2


@dataclass(frozen=True)
class PhaseConstants:
    regime: str
    C: float
    V: float
    delta: float
    beta: float
    B: float
    r: float
    rho: float
    D: float
    U: float
    U_prime: float
    L_P: float | None = None
    L_G: float | None = None
    L_G_prime: float | None = None
    S: float | None = None
    B_prime: float | None = None
    preconditions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def B_P(L_P: float, C: float) -> float:
    return max(L_P / 2.0, 2.0 * C / L_P)


def B_G(V: float, L_G: float, C: float) -> float:
    return max(1.0 / math.sqrt(V), math.sqrt(V) * (1.0 + math.sqrt(1.0 + 4.0 * L_G * C)) / (2.0 * L_G))


def constants(problem: StochasticProblem | None, V: float, geometry: GeometryEstimate,
              C: float | None = None) -> PhaseConstants:
    """Substitute C, V and the geometry constants into the bound formulas.

    Polyhedral duals use beta = L_P/2 and radius B_P; non-polyhedral ones
    use beta = 1/sqrt(V) and radius B_G(V), with B_G' for the far field.
    """
    if C is None:
        C = compute_C(problem)
    if V <= 0:
        raise ValueError("V must be positive")
    delta = math.sqrt(2.0 * C)
    if geometry.kind == POLYHEDRAL:
        L = geometry.L_P
        B = B_P(L, C)
        beta = L / 2.0
        r, rho, D = theorem4(delta, beta, B)
        U, Up = _U(r, D, B)
        pre = {"beta_le_delta": beta <= delta}
        return PhaseConstants(POLYHEDRAL, C, V, delta, beta, B, r, rho, D, U, Up, L_P=L, preconditions=pre)
    if geometry.kind == NON_POLYHEDRAL:
        LG, LGp, S = geometry.L_G, geometry.L_G_prime, geometry.S
        B = B_G(V, LG, C)
        Bp = B_P(LGp, C)
        beta = 1.0 / math.sqrt(V)
        r, rho, D = theorem4(delta, beta, B)
        U, Up = _U(r, D, B)
        pre = {
            "B_G_lt_SV": B < S * V,
            "B_G_prime_le_SV": Bp <= S * V,
            "sqrtV_ge_2_over_L_G_prime": math.sqrt(V) >= 2.0 / LGp,
            "beta_le_delta": beta <= delta,
        }
        return PhaseConstants(NON_POLYHEDRAL, C, V, delta, beta, B, r, rho, D, U, Up,
                              L_G=LG, L_G_prime=LGp, S=S, B_prime=Bp, preconditions=pre)
    raise ValueError("geometry required: dual geometry is undetermined")


def transient_bound(lam_star, V: float, L_P: float, Q0=None) -> float:
    """Expected transient time bound 2|Q0 - V lambda*| / L_P for polyhedral duals."""
    lam_star = np.asarray(lam_star, dtype=float)
    Q0 = np.zeros_like(lam_star) if Q0 is None else np.asarray(Q0, dtype=float)
    return 2.0 * float(np.linalg.norm(Q0 - V * lam_star)) / L_P


def objective_bound(consts: PhaseConstants, T: int, M_f: float, lam_norm: float) -> float:
    """Steady-state objective gap bound 2 M_f U/T + (U' + 4 V U |lam*|)/(2 T V) + C/V."""
    V = consts.V
    return (2.0 * M_f * consts.U / T + (consts.U_prime + 4.0 * V * consts.U * lam_norm) / (2.0 * T * V)
            + consts.C / V)


# -- transient ------------------------------------------------------------------

@dataclass(frozen=True)
class TransientResult:
    T_hat: int
    reached: bool


def first_below(K, B: float) -> TransientResult:
    K = np.asarray(K, dtype=float)
    hits = np.flatnonzero(K < B)
    if hits.size:
        return TransientResult(int(hits[0]), True)
    return TransientResult(max(len(K) - 1, 0), False)


def transient_time(trace, lambda_star, V: float | None, B: float) -> TransientResult:
    """First slot t with |Q(t) - V lambda*| < B; the horizon with ``reached=False`` otherwise."""
    lam = getattr(lambda_star, "lam", lambda_star)
    K = trace.K(lam, V)
    return first_below(K, B)


@dataclass
class PhaseReport:
    K_series: np.ndarray
    T_hat: int
    reached: bool
    B: float
    regime: str
    steady_stats: dict

    def to_dict(self) -> dict:
        return {"T_hat": self.T_hat, "reached": self.reached, "B": self.B, "regime": self.regime,
                "steady_stats": self.steady_stats}


def phase_report(trace, lambda_star, consts: PhaseConstants, B: float | None = None) -> PhaseReport:
    lam = getattr(lambda_star, "lam", lambda_star)
    K = trace.K(lam, consts.V)
    B = consts.B if B is None else B
    tr = first_below(K, B)
    seg = K[tr.T_hat:] if tr.reached else K[:0]
    if seg.size:
        stats = {"mean_K": float(seg.mean()), "max_K": float(seg.max()), "mean_K2": float((seg**2).mean()),
                 "mean_exp_rK": float(np.exp(consts.r * seg).mean()), "slots": int(seg.size)}
    else:
        stats = {"mean_K": None, "max_K": None, "mean_K2": None, "mean_exp_rK": None, "slots": 0}
    return PhaseReport(K, tr.T_hat, tr.reached, B, consts.regime, stats)


# -- bound checks ---------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    name: str
    empirical: float
    bound: float
    stderr: float
    passed: bool


@dataclass
class CheckReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.__dict__ for c in self.checks]}


def _segments(K, T_hat):
    if isinstance(K, np.ndarray) and K.ndim == 1:
        return [K], [int(T_hat)]
    T_hat = [int(t) for t in (T_hat if np.ndim(T_hat) else [T_hat] * len(K))]
    return [np.asarray(k, dtype=float) for k in K], T_hat


def concentration_check(K, consts: PhaseConstants, T_hat, ms=None, mean_factor: float = 1.0,
                        tail_factor: float = 1.0, sigma: float = 3.0) -> CheckReport:
    """Compare steady-state K(t) with E[e^{rK}] <= D + e^{r k0} and its Chernoff tails.

    ``K`` is one series or a list of series (pooled); ``T_hat`` the matching
    steady-state starts. Each check passes when the empirical value minus
    ``sigma`` standard errors is within ``factor`` times the bound.
    """
    Ks, Ts = _segments(K, T_hat)
    segs = [k[t:] for k, t in zip(Ks, Ts) if t < len(k)]
    if not segs:
        raise ValueError("steady-state segment is empty")
    r, D = consts.r, consts.D
    # per-segment bound with its own k0, weighted by segment length
    lens = np.array([len(s) for s in segs], dtype=float)
    caps = np.array([D + math.exp(r * s[0]) for s in segs])
    cap = float((lens * caps).sum() / lens.sum())
    pooled = np.concatenate(segs)
    e = np.exp(r * pooled)
    checks = [BoundCheck("mean_exp_rK", float(e.mean()), mean_factor * cap, float(e.std() / math.sqrt(e.size)),
                         bool(e.mean() - sigma * e.std() / math.sqrt(e.size) <= mean_factor * cap))]
    ms = [consts.B, 2 * consts.B, 4 * consts.B] if ms is None else ms
    n = pooled.size
    for m in ms:
        frac = float((pooled >= m).mean())
        se = math.sqrt(max(frac * (1 - frac), 1.0 / n) / n)
        bound = tail_factor * cap * math.exp(-r * m)
        checks.append(BoundCheck(f"tail_ge_{m:.6g}", frac, bound, se, bool(frac - sigma * se <= bound)))
    return CheckReport(checks)


@dataclass(frozen=True)
class IncrementCheck:
    max_increment: float
    limit: float
    violations: np.ndarray

    @property
    def passed(self) -> bool:
        return self.violations.size == 0


def increment_check(K, C: float, atol: float = 1e-9) -> IncrementCheck:
    """|K(t+1) - K(t)| <= sqrt(2C) at every slot."""
    d = np.abs(np.diff(np.asarray(K, dtype=float)))
    lim = math.sqrt(2.0 * C)
    return IncrementCheck(float(d.max(initial=0.0)), lim, np.flatnonzero(d > lim + atol))


def negative_drift_check(K, T_hat: int, B: float, sigma: float = 3.0) -> BoundCheck:
    """Mean of K(t+1) - K(t) over steady slots with K(t) >= B should not be positive.

    Passes vacuously (with zero samples) when no such slot exists.
    """
    K = np.asarray(K, dtype=float)
    t = np.arange(T_hat, len(K) - 1)
    t = t[K[t] >= B]
    if t.size == 0:
        return BoundCheck("negative_drift", 0.0, 0.0, 0.0, True)
    d = K[t + 1] - K[t]
    se = float(d.std() / math.sqrt(d.size)) if d.size > 1 else math.inf
    return BoundCheck("negative_drift", float(d.mean()), 0.0, se, bool(d.mean() <= sigma * se))


def queue_norm_check(Q, lam_star, V: float, pairs: int = 1000, seed: int = 0, atol: float = 1e-6) -> bool:
    """|Q(t1)|^2 - |Q(t2)|^2 <= K(t1)^2 + 2|V lambda*|(K(t1) + K(t2)) on random slot pairs."""
    Q = np.asarray(Q, dtype=float)
    ref = V * np.asarray(getattr(lam_star, "lam", lam_star), dtype=float)
    rng = np.random.default_rng(seed)
    t1 = rng.integers(0, len(Q), pairs)
    t2 = rng.integers(0, len(Q), pairs)
    K1 = np.linalg.norm(Q[t1] - ref, axis=1)
    K2 = np.linalg.norm(Q[t2] - ref, axis=1)
    lhs = (Q[t1] ** 2).sum(axis=1) - (Q[t2] ** 2).sum(axis=1)
    rhs = K1**2 + 2.0 * np.linalg.norm(ref) * (K1 + K2)
    return bool(np.all(lhs <= rhs + atol))


# -- convergence ----------------------------------------------------------------

def _ok(f, gmax, f_opt, eps):
    return (np.abs(f - f_opt) <= eps) & (gmax <= eps)


def slots_to_eps(trace, f_opt: float, eps: float, mode: str = PLAIN, schedule: StaggerSchedule | None = None,
                 T_hat: int | None = None) -> float:
    """Slots until the averaged decision stays eps-accurate in objective and constraints.

    plain: running average from slot 0. oracle-start: running average from
    ``T_hat``. In both, the result is one past the last slot whose average
    misses eps. staggered: end slot of the first frame from which every
    frame-end average is eps-accurate. Returns ``inf`` if the horizon ends
    inaccurate.
    """
    problem = trace.problem
    if mode == STAGGERED:
        frames = staggered_run(trace, schedule or StaggerSchedule())
        good = np.array([_ok(fr.evaluation.f_xbar, fr.evaluation.max_violation, f_opt, eps) for fr in frames])
        if not good.size or not good[-1]:
            return math.inf
        bad = np.flatnonzero(~good)
        k = int(bad[-1]) + 1 if bad.size else 0
        w = frames[k].window
        return float(w.t0 + w.T)
    if mode not in (PLAIN, ORACLE_START):
        raise ValueError(f"unknown averaging mode {mode!r}")
    start = 0 if mode == PLAIN else int(T_hat)
    if start >= len(trace):
        return math.inf
    f, g = running_evaluation(problem, trace.x, start)
    good = _ok(f, g, f_opt, eps)
    if not good[-1]:
        return math.inf
    bad = np.flatnonzero(~good)
    return float(start + (bad[-1] + 1 if bad.size else 0) + 1)


def window_at(trace, T: int, mode: str, schedule: StaggerSchedule | None = None, T_hat: int = 0):
    """(t0, length) of the averaging window in force after T slots."""
    if mode == PLAIN:
        return 0, T
    if mode == ORACLE_START:
        return T_hat, T - T_hat
    if mode == STAGGERED:
        restarts = [0] + (schedule or StaggerSchedule()).restart_slots(T)
        return restarts[-1], T - restarts[-1]
    raise ValueError(f"unknown averaging mode {mode!r}")


@dataclass(frozen=True)
class CurveRow:
    V: float
    T: int
    err_mean: float
    err_se: float
    viol_mean: float
    viol_se: float
    n: int


def convergence_curve(traces, f_opt: float, mode: str = PLAIN, T_grid=None, schedule: StaggerSchedule | None = None,
                      T_hats=None) -> list[CurveRow]:
    """Rows of (V, T, mean |f(xbar) - f_opt|, mean max_j g_j(xbar)) with standard errors.

    Traces sharing a V are treated as replications. ``T_hats`` is needed for
    oracle-start and aligns with ``traces``.
    """
    if mode == ORACLE_START and T_hats is None:
        raise ValueError("oracle-start needs T_hats")
    groups: dict[float, list] = {}
    for k, tr in enumerate(traces):
        groups.setdefault(tr.V, []).append((tr, 0 if T_hats is None else int(T_hats[k])))
    rows = []
    for V, members in sorted(groups.items()):
        horizon = min(len(tr) for tr, _ in members)
        grid = T_grid if T_grid is not None else np.unique(np.geomspace(1, horizon, 40).astype(int))
        for T in grid:
            T = int(T)
            errs, viols = [], []
            for tr, th in members:
                t0, n = window_at(tr, T, mode, schedule, th)
                if n < 1 or t0 + n > len(tr):
                    continue
                xb, _ = tr.window_means(t0, n)
                errs.append(abs(float(tr.problem.f(xb)) - f_opt))
                g = tr.problem.g(xb)
                viols.append(float(g.max()) if g.size else 0.0)
            if not errs:
                continue
            e, v = np.array(errs), np.array(viols)
            se = lambda a: float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
            rows.append(CurveRow(V, T, float(e.mean()), se(e), float(v.mean()), se(v), len(errs)))
    return rows


def curve_to_csv(rows: list[CurveRow]) -> str:
    lines = ["V,T,err_mean,err_se,viol_mean,viol_se,n"]
    for r in rows:
        lines.append(f"{r.V:.17g},{r.T},{r.err_mean:.17g},{r.err_se:.17g},{r.viol_mean:.17g},{r.viol_se:.17g},{r.n}")
    return "\n".join(lines) + "\n"


def read_curve_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header != ["V", "T", "err_mean", "err_se", "viol_mean", "viol_se", "n"]:
        raise ValueError(f"{path}: not a convergence CSV")
    if data.size == 0:
        data = np.empty((0, len(header)))
    return {h: data[:, i] for i, h in enumerate(header)}


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    intercept: float
    r2: float


def fit_exponent(x, y) -> ExponentFit:
    """Least-squares slope of log y on log x, with R^2. Non-finite points make the fit NaN."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or not (np.all(np.isfinite(y)) and np.all(y > 0) and np.all(x > 0)):
        return ExponentFit(math.nan, math.nan, math.nan)
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return ExponentFit(float(slope), float(icpt), r2)


def empirical_radius(K_series, tail_fraction: float = 0.5) -> float:
    """Pooled mean of K(t) over the final ``tail_fraction`` of each series.

    A data-driven ball radius for transient detection when the analytic
    radius exceeds every observed K (so the analytic T_hat would be 0).
    """
    tails = [np.asarray(k, dtype=float)[int(len(k) * (1 - tail_fraction)):] for k in K_series]
    return float(np.concatenate(tails).mean())

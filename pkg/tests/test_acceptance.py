"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or as a script:
``python3 tests/test_acceptance.py``.
"""
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dpptavg.averaging import StaggerSchedule, staggered_run  # noqa: E402
from dpptavg.cli import main as cli_main  # noqa: E402
from dpptavg.dual import primal_grid_opt, probe_geometry, solve_dual  # noqa: E402
from dpptavg.engine import RunConfig, run  # noqa: E402
from dpptavg.instances import BUILTINS, load_builtin  # noqa: E402
from dpptavg.phase import (ORACLE_START, PLAIN, STAGGERED, concentration_check, constants,  # noqa: E402
                           empirical_radius, first_below, fit_exponent, slots_to_eps)

from random_instances import audit  # noqa: E402

EPS = (0.04, 0.02, 0.01)
OPT = {"sim-linear": 1.25, "sim-quadratic": 0.5, "sim-linear-nonunique": 1.25, "sim-quadratic-nonunique": 0.5}


def emit(n: int, ok: bool, detail: str, capsys=None) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)


# -- 1 ------------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    worst_id, worst_drift, minW, runs = 0.0, -math.inf, math.inf, 0
    schedule = StaggerSchedule(2.0)
    for name in BUILTINS:
        p = load_builtin(name)
        for V in (50.0, 100.0):
            for seed in range(3):
                tr = run(p, RunConfig(V, 100_000, seed=seed))
                for fr in staggered_run(tr, schedule):
                    w = fr.window
                    lhs = w.x_mean - w.y_mean
                    rhs = (tr.Z[w.t0 + w.T] - tr.Z[w.t0]) / w.T
                    worst_id = max(worst_id, float(np.abs(lhs - rhs).max()))
                minW = min(minW, float(tr.W.min(initial=0.0)))
                worst_drift = max(worst_drift, float((tr.drift - tr.bound_rhs).max()))
                runs += 1
    dt = time.perf_counter() - t0
    ok = worst_id <= 1e-9 and minW >= 0 and worst_drift <= 1e-9 and dt < 120
    return ok, (f"{runs} runs; max frame identity error {worst_id:.2e}; min W {minW:.3g}; "
                f"max drift - bound {worst_drift:.3g}; {dt:.1f}s")


# -- 2 ------------------------------------------------------------------------

def criterion_2(tmp: Path):
    parts, ok = [], True
    for name, target in (("sim-linear", 1.25), ("sim-quadratic", 0.5)):
        if cli_main(["dual", "--problem", name, "--out", str(tmp)]) != 0:
            return False, f"dual command failed on {name}"
        rep = json.loads((tmp / f"{name}_dual.json").read_text())
        grid = primal_grid_opt(load_builtin(name), 200)
        good = abs(rep["f_opt"] - target) <= 1e-3 and abs(grid - rep["f_opt"]) <= 0.01
        ok &= good
        parts.append(f"{name} f_opt={rep['f_opt']:.6f} grid={grid:.6f}")
    return ok, "; ".join(parts)


# -- 3 ------------------------------------------------------------------------

def criterion_3():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, target in (("sim-linear", 1.25), ("sim-quadratic", 0.5)):
        p = load_builtin(name)
        errs, viols = [], []
        for seed in range(10):
            last = staggered_run(run(p, RunConfig(100.0, 200_000, seed=seed)), StaggerSchedule(2.0))[-1]
            errs.append(abs(last.evaluation.f_xbar - target))
            viols.append(last.evaluation.max_violation)
        e, v = float(np.mean(errs)), float(np.mean(viols))
        ok &= e <= 0.05 and v <= 0.02
        parts.append(f"{name} |f-opt|={e:.4f} max g={v:.4f}")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    return ok, "; ".join(parts) + f"; {dt:.1f}s"


# -- 4 ------------------------------------------------------------------------

def criterion_4():
    p = load_builtin("sim-linear")
    sol = solve_dual(p)
    geo = probe_geometry(p, sol)
    V = 100.0
    c = constants(p, V, geo)
    Ks, T_hats = [], []
    for seed in range(10):
        K = run(p, RunConfig(V, 100_000, seed=seed)).K(sol.lambda_star.lam)
        Ks.append(K)
        T_hats.append(first_below(K, c.B).T_hat)
    rep = concentration_check(Ks, c, T_hats, ms=[c.B, 2 * c.B, 4 * c.B], mean_factor=1.1, tail_factor=1.5,
                              sigma=0.0)
    mean = rep.checks[0]
    tails = ", ".join(f"P[K>={ch.name.split('_')[-1]}]={ch.empirical:.3g}<={ch.bound:.3g}" for ch in rep.checks[1:])
    return rep.passed, (f"L_P={c.L_P:.4f} r_P={c.r:.3e} B_P={c.B:.1f}; E[e^(rK)]={mean.empirical:.4f} <= "
                        f"{mean.bound:.4g}; {tails}")


# -- 5 ------------------------------------------------------------------------

def criterion_5():
    p = load_builtin("sim-linear")
    lam = solve_dual(p).lambda_star.lam
    Ks = {V: [run(p, RunConfig(V, 20_000, seed=s)).K(lam) for s in range(20)] for V in (100.0, 200.0)}
    B = empirical_radius(Ks[100.0] + Ks[200.0])
    hits = {V: [first_below(K, B) for K in Ks[V]] for V in Ks}
    reached = all(h.reached for hs in hits.values() for h in hs)
    mean = {V: float(np.mean([h.T_hat for h in hs])) for V, hs in hits.items()}
    ratio = mean[200.0] / mean[100.0]
    ok = reached and 1.3 <= ratio <= 3.0
    return ok, (f"B={B:.2f} (pooled steady mean K); T_hat(100)={mean[100.0]:.0f} T_hat(200)={mean[200.0]:.0f} "
                f"ratio={ratio:.3f}" + ("" if reached else "; ball not reached on some run"))


# -- 6 and 7 --------------------------------------------------------------------

def slots_table(name: str, modes, seeds: int, kappa: float = 1.0) -> dict:
    """Mean slots-to-eps per mode over eps in EPS, with V = kappa/eps."""
    p = load_builtin(name)
    lam = solve_dual(p).lambda_star.lam if ORACLE_START in modes else None
    out = {m: [] for m in modes}
    for eps in EPS:
        V = kappa / eps
        traces = [run(p, RunConfig(V, int(4000 / eps), seed=s)) for s in range(seeds)]
        T_hats = None
        if lam is not None:
            Ks = [tr.K(lam) for tr in traces]
            B = empirical_radius(Ks)
            T_hats = [first_below(K, B).T_hat for K in Ks]
        for m in modes:
            vals = []
            for k, tr in enumerate(traces):
                kw = {"schedule": StaggerSchedule(2.0)} if m == STAGGERED else {}
                if m == ORACLE_START:
                    kw["T_hat"] = T_hats[k]
                vals.append(slots_to_eps(tr, OPT[name], eps, m, **kw))
            out[m].append(float(np.mean(vals)))
    return out


def exponents(name: str, modes, seeds: int = 20, kappa: float = 1.0, max_seeds: int = 80):
    """Fit per mode; reruns with doubled seeds while a finite fit has R^2 < 0.9."""
    while True:
        table = slots_table(name, modes, seeds, kappa)
        fits = {m: fit_exponent([1 / e for e in EPS], table[m]) for m in modes}
        weak = [m for m, f in fits.items() if math.isfinite(f.r2) and f.r2 < 0.9]
        if not weak or seeds >= max_seeds:
            return fits, table, seeds
        seeds *= 2


def _fmt_fit(f, slots):
    s = "/".join("inf" if math.isinf(v) else f"{v:.0f}" for v in slots)
    if not math.isfinite(f.exponent):
        return f"slots {s} (no finite fit)"
    return f"exp {f.exponent:.3f} R2 {f.r2:.3f} (slots {s})"


_RATE_CACHE: dict = {}


def rate_fits(name, modes):
    key = (name, tuple(modes))
    if key not in _RATE_CACHE:
        _RATE_CACHE[key] = exponents(name, modes)
    return _RATE_CACHE[key]


def _counts(f, upper=None, lower=None):
    if not (math.isfinite(f.exponent) and f.r2 >= 0.9):
        return False
    if upper is not None and f.exponent > upper:
        return False
    if lower is not None and f.exponent < lower:
        return False
    return True


def criterion_6():
    lin, lt, ls = rate_fits("sim-linear", (STAGGERED, ORACLE_START, PLAIN))
    quad, qt, qs = rate_fits("sim-quadratic", (STAGGERED,))
    ok = (_counts(lin[STAGGERED], upper=1.4) and _counts(lin[ORACLE_START], upper=1.4)
          and _counts(lin[PLAIN], lower=1.6) and _counts(quad[STAGGERED], upper=1.8))
    detail = (f"sim-linear staggered {_fmt_fit(lin[STAGGERED], lt[STAGGERED])}; "
              f"oracle-start {_fmt_fit(lin[ORACLE_START], lt[ORACLE_START])}; "
              f"plain {_fmt_fit(lin[PLAIN], lt[PLAIN])}; "
              f"sim-quadratic staggered {_fmt_fit(quad[STAGGERED], qt[STAGGERED])}; seeds {ls}/{qs}")
    return ok, detail


def criterion_6_diagnostic():
    """Same measurement on sim-linear with V = 4/eps (informational, not a criterion)."""
    fits, table, _ = exponents("sim-linear", (STAGGERED, ORACLE_START, PLAIN), seeds=10, kappa=4.0)
    return "; ".join(f"{m} {_fmt_fit(fits[m], table[m])}" for m in (STAGGERED, ORACLE_START, PLAIN))


def criterion_7():
    parts, ok = [], True
    for base in ("sim-linear", "sim-quadratic"):
        modes = (STAGGERED, ORACLE_START, PLAIN) if base == "sim-linear" else (STAGGERED,)
        u = rate_fits(base, modes)[0][STAGGERED]
        n, nt, _ = rate_fits(base + "-nonunique", (STAGGERED,))
        n = n[STAGGERED]
        good = _counts(u) and _counts(n) and abs(u.exponent - n.exponent) <= 0.3
        ok &= good
        parts.append(f"{base} unique {u.exponent:.3f} vs nonunique {_fmt_fit(n, nt[STAGGERED])}")
    return ok, "; ".join(parts)


# -- 8 ------------------------------------------------------------------------

def criterion_8():
    failed = {}
    for seed in range(200):
        bad = audit(seed)
        if bad:
            failed[seed] = bad
    return not failed, f"200 random instances; failures: {failed if failed else 'none'}"


# -- pytest wrappers ----------------------------------------------------------

def test_criterion_1_exact_identities(capsys):
    ok, detail = criterion_1()
    emit(1, ok, detail, capsys)
    assert ok, detail


def test_criterion_2_optimal_cost(capsys, tmp_path):
    ok, detail = criterion_2(tmp_path)
    emit(2, ok, detail, capsys)
    assert ok, detail


def test_criterion_3_steady_state_accuracy(capsys):
    ok, detail = criterion_3()
    emit(3, ok, detail, capsys)
    assert ok, detail


def test_criterion_4_concentration(capsys):
    ok, detail = criterion_4()
    emit(4, ok, detail, capsys)
    assert ok, detail


def test_criterion_5_transient_scaling(capsys):
    ok, detail = criterion_5()
    emit(5, ok, detail, capsys)
    assert ok, detail


def test_criterion_6_rate_separation(capsys):
    ok, detail = criterion_6()
    emit(6, ok, detail, capsys)
    with capsys.disabled():
        print(f"[INFO] criterion 6 diagnostic, sim-linear with V = 4/eps: {criterion_6_diagnostic()}")
    assert ok, detail


def test_criterion_7_nonunique_robustness(capsys):
    ok, detail = criterion_7()
    emit(7, ok, detail, capsys)
    assert ok, detail


def test_criterion_8_property_suite(capsys):
    ok, detail = criterion_8()
    emit(8, ok, detail, capsys)
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    results = []
    for n, fn in enumerate((criterion_1, None, criterion_3, criterion_4, criterion_5, criterion_6,
                            criterion_7, criterion_8), start=1):
        if n == 2:
            with tempfile.TemporaryDirectory() as d:
                ok, detail = criterion_2(Path(d))
        else:
            ok, detail = fn()
        emit(n, ok, detail)
        results.append(ok)
    print(f"[INFO] criterion 6 diagnostic, sim-linear with V = 4/eps: {criterion_6_diagnostic()}")
    sys.exit(0 if all(results) else 1)

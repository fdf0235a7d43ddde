"""Hot loops: the drift-plus-penalty slot recursion and batched dual evaluation.

Each kernel has a scalar-loop form compiled by numba and a vectorized numpy
form. ``dpp_loop`` and ``dual_batch`` dispatch on the active backend.
"""
import numpy as np

from ._backend import HAS_NUMBA, maybe_njit


@maybe_njit
def _dpp_loop_jit(points, offsets, omega, V, W0, Z0, fq, fl, gq, gl, g0, lower, upper, C,
                  xs, ys, Ws, Zs, drift, rhs):
    T = omega.shape[0]
    I = Z0.shape[0]
    J = W0.shape[0]
    W = W0.copy()
    Z = Z0.copy()
    for j in range(J):
        Ws[0, j] = W[j]
    for i in range(I):
        Zs[0, i] = Z[i]
    for t in range(T):
        k = omega[t]
        best = np.inf
        bi = offsets[k]
        for p in range(offsets[k], offsets[k + 1]):
            v = 0.0
            for i in range(I):
                v += Z[i] * points[p, i]
            if v < best:
                best = v
                bi = p
        for i in range(I):
            xs[t, i] = points[bi, i]
            qc = V * fq[i]
            lc = V * fl[i]
            for j in range(J):
                qc += W[j] * gq[j, i]
                lc += W[j] * gl[j, i]
            lc -= Z[i]
            if qc > 0.0:
                yi = -lc / (2.0 * qc)
                if yi < lower[i]:
                    yi = lower[i]
                elif yi > upper[i]:
                    yi = upper[i]
            elif lc < 0.0:
                yi = upper[i]
            else:
                yi = lower[i]
            ys[t, i] = yi
        bound = C
        d = 0.0
        for j in range(J):
            gj = g0[j]
            for i in range(I):
                gj += gq[j, i] * ys[t, i] * ys[t, i] + gl[j, i] * ys[t, i]
            bound += W[j] * gj
            wn = W[j] + gj
            if wn < 0.0:
                wn = 0.0
            d += 0.5 * (wn - W[j]) * (wn + W[j])
            W[j] = wn
            Ws[t + 1, j] = wn
        for i in range(I):
            diff = xs[t, i] - ys[t, i]
            bound += Z[i] * diff
            zn = Z[i] + diff
            d += 0.5 * (zn - Z[i]) * (zn + Z[i])
            Z[i] = zn
            Zs[t + 1, i] = zn
        drift[t] = d
        rhs[t] = bound


def _dpp_loop_numpy(points, offsets, omega, V, W0, Z0, fq, fl, gq, gl, g0, lower, upper, C,
                    xs, ys, Ws, Zs, drift, rhs):
    W = W0.copy()
    Z = Z0.copy()
    Ws[0] = W
    Zs[0] = Z
    for t, k in enumerate(omega):
        pts = points[offsets[k]:offsets[k + 1]]
        x = pts[np.argmin(pts @ Z)]
        qc = V * fq + W @ gq
        lc = V * fl + W @ gl - Z
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = np.clip(-lc / (2.0 * qc), lower, upper)
        y = np.where(qc > 0.0, stat, np.where(lc < 0.0, upper, lower))
        g = gq @ (y * y) + gl @ y + g0
        Wn = np.maximum(W + g, 0.0)
        Zn = Z + (x - y)
        xs[t] = x
        ys[t] = y
        rhs[t] = C + W @ g + Z @ (x - y)
        drift[t] = 0.5 * ((Wn - W) @ (Wn + W) + (Zn - Z) @ (Zn + Z))
        W, Z = Wn, Zn
        Ws[t + 1] = W
        Zs[t + 1] = Z


def dpp_loop(*args, backend=None):
    """Run the slot recursion in place; see ``engine.run`` for the argument layout."""
    use_jit = HAS_NUMBA if backend is None else backend == "numba"
    if use_jit and HAS_NUMBA:
        _dpp_loop_jit(*args)
    else:
        _dpp_loop_numpy(*args)


@maybe_njit
def _ascent_jit(points, offsets, probs, fq, fl, f0, gq, gl, g0, lower, upper,
                lam0, a, b, n_iter, target, polyak_iter, best_lam, best_val, hist):
    """Projected supergradient ascent on the dual, one start per row of ``lam0``.

    ``n_iter`` diminishing steps a/(1+k b), then ``polyak_iter`` Polyak steps
    towards ``target`` (skipped when target is NaN). ``hist`` records the
    best-so-far value per start after every iteration.
    """
    S = lam0.shape[0]
    J = gq.shape[0]
    I = fq.shape[0]
    n_states = probs.shape[0]
    lam = np.empty(J + I)
    h = np.empty(J + I)
    y = np.empty(I)
    total = n_iter + polyak_iter
    for s in range(S):
        for m in range(J + I):
            lam[m] = lam0[s, m]
        bv = -np.inf
        for k in range(total):
            # dual value and supergradient at lam
            val = f0
            for j in range(J):
                val += lam[j] * g0[j]
            for i in range(I):
                qc = fq[i]
                lc = fl[i] - lam[J + i]
                for j in range(J):
                    qc += lam[j] * gq[j, i]
                    lc += lam[j] * gl[j, i]
                if qc > 0.0:
                    yi = -lc / (2.0 * qc)
                    if yi < lower[i]:
                        yi = lower[i]
                    elif yi > upper[i]:
                        yi = upper[i]
                elif lc < 0.0:
                    yi = upper[i]
                else:
                    yi = lower[i]
                y[i] = yi
                val += qc * yi * yi + lc * yi
                h[J + i] = -yi
            for j in range(J):
                gj = g0[j]
                for i in range(I):
                    gj += gq[j, i] * y[i] * y[i] + gl[j, i] * y[i]
                h[j] = gj
            for w in range(n_states):
                best = np.inf
                bi = offsets[w]
                for p in range(offsets[w], offsets[w + 1]):
                    v = 0.0
                    for i in range(I):
                        v += lam[J + i] * points[p, i]
                    if v < best:
                        best = v
                        bi = p
                val += probs[w] * best
                for i in range(I):
                    h[J + i] += probs[w] * points[bi, i]
            if val > bv:
                bv = val
                for m in range(J + I):
                    best_lam[s, m] = lam[m]
            hist[s, k] = bv
            hn2 = 0.0
            for m in range(J + I):
                hn2 += h[m] * h[m]
            if hn2 == 0.0:
                # zero supergradient: lam is a maximizer
                for kk in range(k + 1, total):
                    hist[s, kk] = bv
                break
            if k < n_iter:
                step = a / (1.0 + k * b)
            else:
                if target != target:
                    for kk in range(k, total):
                        hist[s, kk] = bv
                    break
                step = max(target - val, 0.0) / hn2
            for m in range(J + I):
                lam[m] += step * h[m]
            for j in range(J):
                if lam[j] < 0.0:
                    lam[j] = 0.0
        best_val[s] = bv


def dual_batch(points, offsets, probs, fq, fl, f0, gq, gl, g0, lower, upper, lam):
    """Dual values, supergradients and minimizers for a batch of multipliers ``lam`` (S, J+I)."""
    J = gq.shape[0]
    w, z = lam[:, :J], lam[:, J:]
    qc = fq + w @ gq
    lc = fl + w @ gl - z
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.clip(-lc / (2.0 * qc), lower, upper)
    y = np.where(qc > 0.0, stat, np.where(lc < 0.0, upper, lower))
    val = f0 + w @ g0 + (qc * y * y + lc * y).sum(axis=1)
    g = (y * y) @ gq.T + y @ gl.T + g0
    xbar = np.zeros_like(z)
    xs = []
    for k in range(probs.shape[0]):
        pts = points[offsets[k]:offsets[k + 1]]
        scores = z @ pts.T
        idx = np.argmin(scores, axis=1)
        val = val + probs[k] * scores[np.arange(len(idx)), idx]
        xs.append(pts[idx])
        xbar = xbar + probs[k] * pts[idx]
    h = np.concatenate([g, xbar - y], axis=1)
    return val, h, xs, y


def _ascent_numpy(points, offsets, probs, fq, fl, f0, gq, gl, g0, lower, upper,
                  lam0, a, b, n_iter, target, polyak_iter, best_lam, best_val, hist):
    J = gq.shape[0]
    lam = lam0.copy()
    bv = np.full(lam.shape[0], -np.inf)
    done = np.zeros(lam.shape[0], dtype=bool)
    for k in range(n_iter + polyak_iter):
        val, h, _, _ = dual_batch(points, offsets, probs, fq, fl, f0, gq, gl, g0, lower, upper, lam)
        better = (val > bv) & ~done
        bv = np.where(better, val, bv)
        best_lam[better] = lam[better]
        hist[:, k] = bv
        hn2 = (h * h).sum(axis=1)
        done |= hn2 == 0.0
        if k < n_iter:
            step = np.full(lam.shape[0], a / (1.0 + k * b))
        elif target != target:
            hist[:, k:] = bv[:, None]
            break
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.maximum(target - val, 0.0) / hn2
        step = np.where(done, 0.0, step)
        lam = lam + step[:, None] * h
        lam[:, :J] = np.maximum(lam[:, :J], 0.0)
    best_val[:] = bv


def ascent(*args, backend=None):
    use_jit = HAS_NUMBA if backend is None else backend == "numba"
    if use_jit and HAS_NUMBA:
        _ascent_jit(*args)
    else:
        _ascent_numpy(*args)

"""Compiled inner loops.

Model, control and cost callables are numba-jitted functions with the
in-place signatures

    drift(x, u, params, out)         out[:] <- b(x, u)
    diffusion(x, params, out)        out[:, :] <- sigma(x)
    fill(x, params, acts, wts) -> k  first k rows of acts/wts <- v(x)
    cost(x, u, params) -> float

and are passed into the kernels below as first-class arguments, so each
(model, control) combination compiles once.

The Euler-Maruyama step is written out inside every kernel on purpose:
factoring it into a helper that takes the work arrays costs roughly twice
the step itself in reference-count traffic.  Each copy follows the same
order of random draws (action pick from the action stream if the mixture
has more than one atom, then d normals from the noise stream), so all
kernels see the same path for the same streams.
"""

import math

import numba as nb
import numpy as np

OK = 0
NONFINITE = 1
EXPLODED = 2
BAD_ACTION = 3

ACTION_TOL = 1e-12


@nb.njit(nogil=True, cache=True)
def mixture_fill(x, cp, acts, wts):
    # cp = [k, m, actions (k*m, row-major), weights (k)]
    k = int(cp[0])
    m = int(cp[1])
    for j in range(k):
        for i in range(m):
            acts[j, i] = cp[2 + j * m + i]
        wts[j] = cp[2 + k * m + j]
    return k


@nb.njit(nogil=True, cache=True)
def unit_cost(x, u, qp):
    return 1.0


@nb.njit(nogil=True)
def simulate_path(drift, diffusion, fill, mp, cp, lo, hi, x0, dt, n_steps,
                  noise, arng, kmax, bound, states, actions, dws):
    """Euler-Maruyama path; fills states[0..n], actions[0..n-1], dws[0..n-1].

    Returns (status, step index where the status was raised).
    """
    d = x0.shape[0]
    m = lo.shape[0]
    x = x0.copy()
    xn = np.empty(d)
    b = np.empty(d)
    S = np.empty((d, d))
    z = np.empty(d)
    acts = np.empty((kmax, m))
    wts = np.empty(kmax)
    u = np.empty(m)
    sq = math.sqrt(dt)
    bound2 = bound * bound
    states[0, :] = x
    for k in range(n_steps):
        # -- action
        nk = fill(x, cp, acts, wts)
        j = 0
        if nk > 1:
            tot = 0.0
            for jj in range(nk):
                tot += wts[jj]
            r = arng.random() * tot
            c = 0.0
            j = nk - 1
            for jj in range(nk):
                c += wts[jj]
                if r < c:
                    j = jj
                    break
        for i in range(m):
            u[i] = acts[j, i]
            if not (u[i] >= lo[i] - ACTION_TOL and u[i] <= hi[i] + ACTION_TOL):
                return BAD_ACTION, k
        # -- Euler-Maruyama step
        for i in range(d):
            z[i] = sq * noise.standard_normal()
        drift(x, u, mp, b)
        diffusion(x, mp, S)
        norm2 = 0.0
        for i in range(d):
            if not math.isfinite(b[i]):
                return NONFINITE, k
            acc = x[i] + b[i] * dt
            for jj in range(d):
                s = S[i, jj]
                if not math.isfinite(s):
                    return NONFINITE, k
                acc += s * z[jj]
            xn[i] = acc
            norm2 += acc * acc
        if not norm2 <= bound2:
            return EXPLODED, k + 1
        # --
        for i in range(d):
            x[i] = xn[i]
            states[k + 1, i] = xn[i]
            dws[k, i] = z[i]
        for i in range(m):
            actions[k, i] = u[i]
    return OK, n_steps


@nb.njit(nogil=True)
def record_path(drift, diffusion, fill, mp, cp, lo, hi, x0, dt, record_steps,
                noise, arng, kmax, bound, out):
    """Like simulate_path but keeps only the states at ``record_steps`` (sorted)."""
    d = x0.shape[0]
    m = lo.shape[0]
    x = x0.copy()
    xn = np.empty(d)
    b = np.empty(d)
    S = np.empty((d, d))
    z = np.empty(d)
    acts = np.empty((kmax, m))
    wts = np.empty(kmax)
    u = np.empty(m)
    sq = math.sqrt(dt)
    bound2 = bound * bound
    r = 0
    nrec = record_steps.shape[0]
    while r < nrec and record_steps[r] == 0:
        out[r, :] = x
        r += 1
    k = 0
    while r < nrec:
        nk = fill(x, cp, acts, wts)
        j = 0
        if nk > 1:
            tot = 0.0
            for jj in range(nk):
                tot += wts[jj]
            rr = arng.random() * tot
            c = 0.0
            j = nk - 1
            for jj in range(nk):
                c += wts[jj]
                if rr < c:
                    j = jj
                    break
        for i in range(m):
            u[i] = acts[j, i]
            if not (u[i] >= lo[i] - ACTION_TOL and u[i] <= hi[i] + ACTION_TOL):
                return BAD_ACTION, k
        for i in range(d):
            z[i] = sq * noise.standard_normal()
        drift(x, u, mp, b)
        diffusion(x, mp, S)
        norm2 = 0.0
        for i in range(d):
            if not math.isfinite(b[i]):
                return NONFINITE, k
            acc = x[i] + b[i] * dt
            for jj in range(d):
                s = S[i, jj]
                if not math.isfinite(s):
                    return NONFINITE, k
                acc += s * z[jj]
            xn[i] = acc
            norm2 += acc * acc
        if not norm2 <= bound2:
            return EXPLODED, k + 1
        for i in range(d):
            x[i] = xn[i]
        k += 1
        while r < nrec and record_steps[r] == k:
            out[r, :] = x
            r += 1
    return OK, k


@nb.njit(nogil=True)
def hit_path(drift, diffusion, fill, cost, mp, cp, qp, lo, hi, ugrid, x0, center, radius,
             dt, max_steps, noise, arng, brng, kmax, bound, use_bridge, with_cost):
    """First entrance into the closed ball B(center, radius).

    A step hits if its end point is in the ball, if the straight segment
    crosses the ball, or (``use_bridge``) with the Brownian-bridge crossing
    probability exp(-2 d0 d1 / (n'a n dt)) for the distances d0, d1 of the
    end points to the sphere, with n the outward normal and a = sigma sigma'
    at the left end point.  The bridge stream is consumed once per step.

    When ``with_cost`` the trapezoid integral of max_u |cost(X_t, u)| over
    the action mesh ``ugrid`` is accumulated up to the hitting step.

    Returns (status, steps, hit, integral).
    """
    d = x0.shape[0]
    m = lo.shape[0]
    dist0 = 0.0
    for i in range(d):
        dist0 += (x0[i] - center[i]) ** 2
    if math.sqrt(dist0) <= radius:
        return OK, 0, True, 0.0
    x = x0.copy()
    xn = np.empty(d)
    b = np.empty(d)
    S = np.empty((d, d))
    z = np.empty(d)
    acts = np.empty((kmax, m))
    wts = np.empty(kmax)
    u = np.empty(m)
    sq = math.sqrt(dt)
    bound2 = bound * bound
    integral = 0.0
    g0 = 0.0
    if with_cost:
        for jj in range(ugrid.shape[0]):
            v = abs(cost(x, ugrid[jj], qp))
            if v > g0:
                g0 = v
    for k in range(max_steps):
        nk = fill(x, cp, acts, wts)
        j = 0
        if nk > 1:
            tot = 0.0
            for jj in range(nk):
                tot += wts[jj]
            r = arng.random() * tot
            c = 0.0
            j = nk - 1
            for jj in range(nk):
                c += wts[jj]
                if r < c:
                    j = jj
                    break
        for i in range(m):
            u[i] = acts[j, i]
            if not (u[i] >= lo[i] - ACTION_TOL and u[i] <= hi[i] + ACTION_TOL):
                return BAD_ACTION, k, False, integral
        for i in range(d):
            z[i] = sq * noise.standard_normal()
        drift(x, u, mp, b)
        diffusion(x, mp, S)
        norm2 = 0.0
        for i in range(d):
            if not math.isfinite(b[i]):
                return NONFINITE, k, False, integral
            acc = x[i] + b[i] * dt
            for jj in range(d):
                s = S[i, jj]
                if not math.isfinite(s):
                    return NONFINITE, k, False, integral
                acc += s * z[jj]
            xn[i] = acc
            norm2 += acc * acc
        if not norm2 <= bound2:
            return EXPLODED, k + 1, False, integral
        if with_cost:
            g1 = 0.0
            for jj in range(ugrid.shape[0]):
                v = abs(cost(xn, ugrid[jj], qp))
                if v > g1:
                    g1 = v
            integral += 0.5 * (g0 + g1) * dt
            g0 = g1
        # closest point of the segment [x, xn] to the centre
        num = 0.0
        den = 0.0
        for i in range(d):
            dv = xn[i] - x[i]
            num -= (x[i] - center[i]) * dv
            den += dv * dv
        t = 0.0
        if den > 0.0:
            t = min(max(num / den, 0.0), 1.0)
        dseg = 0.0
        d0 = 0.0
        d1 = 0.0
        for i in range(d):
            p = x[i] - center[i] + t * (xn[i] - x[i])
            dseg += p * p
            d0 += (x[i] - center[i]) ** 2
            d1 += (xn[i] - center[i]) ** 2
        hit = math.sqrt(dseg) <= radius
        if use_bridge:
            w = brng.random()
            if not hit:
                d0 = math.sqrt(d0)
                d1 = math.sqrt(d1)
                var = 0.0
                for i in range(d):
                    si = 0.0
                    for jj in range(d):
                        si += S[jj, i] * (x[jj] - center[jj])
                    var += si * si
                var /= d0 * d0
                if var > 0.0:
                    hit = w < math.exp(-2.0 * (d0 - radius) * (d1 - radius) / (var * dt))
        for i in range(d):
            x[i] = xn[i]
        if hit:
            return OK, k + 1, True, integral
    return OK, max_steps, False, integral


@nb.njit(nogil=True)
def occupation_path(drift, diffusion, fill, cost, mp, cp, qp, lo, hi, x0, dt, check_steps,
                    noise, arng, kmax, bound, hist_lo, hist_width, nbins, aedges, radii,
                    hist, cost_int, outside, final):
    """Stream one path and accumulate occupation statistics at checkpoints.

    Left-point rule: step k contributes the state X_k with weight dt.
    Relaxed controls deposit weight w_j on each atom's action bin and
    contribute sum_j w_j c(X_k, a_j) to the cost integral.

    hist      (ncheck, (nbins+2)**d, n_abins) cumulative time per state x action bin
              (index 0 and nbins+1 on each axis are the overflow tails)
    cost_int  (ncheck,) cumulative cost integral
    outside   (ncheck, nradii) cumulative time spent with |X| > radius
    final     (d,) last state
    """
    d = x0.shape[0]
    m = lo.shape[0]
    x = x0.copy()
    xn = np.empty(d)
    b = np.empty(d)
    S = np.empty((d, d))
    z = np.empty(d)
    acts = np.empty((kmax, m))
    wts = np.empty(kmax)
    u = np.empty(m)
    sq = math.sqrt(dt)
    bound2 = bound * bound
    na = aedges.shape[0] - 1
    nr = radii.shape[0]
    run_hist = np.zeros((hist.shape[1], na))
    run_out = np.zeros(nr)
    run_cost = 0.0
    ncheck = check_steps.shape[0]
    r = 0
    while r < ncheck and check_steps[r] == 0:
        r += 1
    k = 0
    while r < ncheck:
        nk = fill(x, cp, acts, wts)
        # -- occupation of the current state
        sidx = 0
        stride = 1
        norm_x = 0.0
        for i in range(d):
            norm_x += x[i] * x[i]
            q = (x[i] - hist_lo[i]) / hist_width[i]
            if q < 0.0:
                bi = 0
            elif q >= nbins:
                bi = nbins + 1
            else:
                bi = int(q) + 1
            sidx += bi * stride
            stride *= nbins + 2
        norm_x = math.sqrt(norm_x)
        for ir in range(nr):
            if norm_x > radii[ir]:
                run_out[ir] += dt
        for jj in range(nk):
            a0 = acts[jj, 0]
            ai = 0
            while ai < na - 1 and a0 >= aedges[ai + 1]:
                ai += 1
            run_hist[sidx, ai] += wts[jj] * dt
            run_cost += wts[jj] * cost(x, acts[jj], qp) * dt
        # -- action
        j = 0
        if nk > 1:
            tot = 0.0
            for jj in range(nk):
                tot += wts[jj]
            rr = arng.random() * tot
            c = 0.0
            j = nk - 1
            for jj in range(nk):
                c += wts[jj]
                if rr < c:
                    j = jj
                    break
        for i in range(m):
            u[i] = acts[j, i]
            if not (u[i] >= lo[i] - ACTION_TOL and u[i] <= hi[i] + ACTION_TOL):
                return BAD_ACTION, k
        # -- Euler-Maruyama step
        for i in range(d):
            z[i] = sq * noise.standard_normal()
        drift(x, u, mp, b)
        diffusion(x, mp, S)
        norm2 = 0.0
        for i in range(d):
            if not math.isfinite(b[i]):
                return NONFINITE, k
            acc = x[i] + b[i] * dt
            for jj in range(d):
                s = S[i, jj]
                if not math.isfinite(s):
                    return NONFINITE, k
                acc += s * z[jj]
            xn[i] = acc
            norm2 += acc * acc
        if not norm2 <= bound2:
            return EXPLODED, k + 1
        for i in range(d):
            x[i] = xn[i]
        k += 1
        while r < ncheck and check_steps[r] == k:
            hist[r] = run_hist
            cost_int[r] = run_cost
            outside[r] = run_out
            r += 1
    final[:] = x
    return OK, k


@nb.njit(nogil=True)
def cycles_path(drift, diffusion, fill, ftest, mp, cp, fp, lo, hi, x0, dt, n_steps,
                noise, arng, kmax, bound, c_in, r_in, c_out, r_out, times, integrals):
    """Alternating exit/entry times for a ball B(c_in, r_in) inside B(c_out, r_out).

    times[0] = 0 and then, alternately, the first grid time after the last
    entry at which |X - c_out| > r_out (odd entries) and the first grid time
    after that at which |X - c_in| < r_in (even entries).  integrals[m] holds
    the left-point integral of ftest(X_t, U_t) between consecutive even
    times.  Returns (status, steps, number of stopping times recorded).
    """
    d = x0.shape[0]
    m = lo.shape[0]
    x = x0.copy()
    xn = np.empty(d)
    b = np.empty(d)
    S = np.empty((d, d))
    z = np.empty(d)
    acts = np.empty((kmax, m))
    wts = np.empty(kmax)
    u = np.empty(m)
    sq = math.sqrt(dt)
    bound2 = bound * bound
    cap = times.shape[0]
    times[0] = 0.0
    nt = 1
    run = 0.0
    for k in range(n_steps):
        nk = fill(x, cp, acts, wts)
        j = 0
        if nk > 1:
            tot = 0.0
            for jj in range(nk):
                tot += wts[jj]
            rr = arng.random() * tot
            c = 0.0
            j = nk - 1
            for jj in range(nk):
                c += wts[jj]
                if rr < c:
                    j = jj
                    break
        for i in range(m):
            u[i] = acts[j, i]
            if not (u[i] >= lo[i] - ACTION_TOL and u[i] <= hi[i] + ACTION_TOL):
                return BAD_ACTION, k, nt
        run += ftest(x, u, fp) * dt
        for i in range(d):
            z[i] = sq * noise.standard_normal()
        drift(x, u, mp, b)
        diffusion(x, mp, S)
        norm2 = 0.0
        for i in range(d):
            if not math.isfinite(b[i]):
                return NONFINITE, k, nt
            acc = x[i] + b[i] * dt
            for jj in range(d):
                s = S[i, jj]
                if not math.isfinite(s):
                    return NONFINITE, k, nt
                acc += s * z[jj]
            xn[i] = acc
            norm2 += acc * acc
        if not norm2 <= bound2:
            return EXPLODED, k + 1, nt
        dout = 0.0
        din = 0.0
        for i in range(d):
            x[i] = xn[i]
            dout += (xn[i] - c_out[i]) ** 2
            din += (xn[i] - c_in[i]) ** 2
        if nt % 2 == 1:
            # waiting for an exit from the outer ball
            if math.sqrt(dout) > r_out:
                if nt >= cap:
                    return OK, k + 1, nt
                times[nt] = (k + 1) * dt
                nt += 1
        elif math.sqrt(din) < r_in:
            if nt >= cap:
                return OK, k + 1, nt
            times[nt] = (k + 1) * dt
            integrals[nt // 2 - 1] = run
            run = 0.0
            nt += 1
    return OK, n_steps, nt


@nb.njit(nogil=True)
def batch_drift(drift, mp, X, U):
    n, d = X.shape
    k = U.shape[0]
    out = np.empty((n, k, d))
    b = np.empty(d)
    for i in range(n):
        for j in range(k):
            drift(X[i], U[j], mp, b)
            out[i, j, :] = b
    return out


@nb.njit(nogil=True)
def paired_drift(drift, mp, X, U):
    n, d = X.shape
    out = np.empty((n, d))
    b = np.empty(d)
    for i in range(n):
        drift(X[i], U[i], mp, b)
        out[i, :] = b
    return out


@nb.njit(nogil=True)
def batch_diffusion(diffusion, mp, X):
    n, d = X.shape
    out = np.empty((n, d, d))
    S = np.empty((d, d))
    for i in range(n):
        diffusion(X[i], mp, S)
        out[i] = S
    return out


@nb.njit(nogil=True)
def batch_cost(cost, qp, X, U):
    n = X.shape[0]
    k = U.shape[0]
    out = np.empty((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = cost(X[i], U[j], qp)
    return out


@nb.njit(nogil=True)
def paired_cost(cost, qp, X, U):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = cost(X[i], U[i], qp)
    return out


@nb.njit(nogil=True)
def batch_fill(fill, cp, X, kmax, m):
    n = X.shape[0]
    acts = np.zeros((n, kmax, m))
    wts = np.zeros((n, kmax))
    ks = np.empty(n, dtype=np.int64)
    a = np.empty((kmax, m))
    w = np.empty(kmax)
    for i in range(n):
        k = fill(X[i], cp, a, w)
        ks[i] = k
        for j in range(k):
            acts[i, j, :] = a[j]
            wts[i, j] = w[j]
    return acts, wts, ks


@nb.njit(nogil=True)
def relaxed_cost(cost, qp, X, acts, wts, ks):
    """sum_j w_j c(x_i, a_j) for each row of a stored mixture."""
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(ks[i]):
            s += wts[i, j] * cost(X[i], acts[i, j], qp)
        out[i] = s
    return out

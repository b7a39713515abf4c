"""Pure-numpy reference implementation of the numerical kernels.

Two kernels live here: the epidemic trajectory stepper and the adaptive
Gauss-Kronrod integration that marginalises the clinic-effect variance out of
the likelihood. This module defines the semantics; the Cython build in
``_speedups`` reimplements both with identical algorithms and constants, and
``epimeld._core`` picks whichever is available.

Results do not depend on ``n_threads`` in either backend: the compiled one
splits work into fixed-size chunks whose outputs land at fixed offsets, and
this one simply runs the chunks in order.
"""

import math

import numpy as np
from scipy.special import ndtri

from . import quadrule

# Prevalences are clamped into this open interval before probit transforms so
# degenerate trajectories (rho exactly 0 or 1) keep finite residuals.
RHO_CLAMP = 1e-12

# Fixed scan grid used to locate the integrand peak before subdividing:
# 80 log-spaced clinic-effect variances spanning far below the prior mode to
# far above any posterior mass.
_SIGMA2_GRID = np.exp(np.linspace(np.log(1e-7), np.log(1e3), 80))
_U_GRID = _SIGMA2_GRID / (1.0 + _SIGMA2_GRID)

_NODES, _WGK, _WG = quadrule.full_rule()
_EPS50 = 50.0 * np.finfo(float).eps
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _expit(s):
    if s >= 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


def simulate_steps(
    r,
    f0,
    t0,
    phi,
    mu,
    entry_rate,
    kappa,
    lambda0,
    death_masses,
    start_year,
    dt,
    n_steps,
):
    """Integrate one parameter draw, returning the full step-level series.

    Returns ``(x, z, y, incidence)``: compartment sizes at the n_steps + 1
    grid times, and per-step infection mass (new infections during each step,
    including the seed pulse at the step containing t0). The stepper is the
    explicit midpoint rule; entries and epidemic deaths are held constant
    within a step, so the per-step death mass is the discrete convolution of
    past infection masses with the survival kernel.
    """
    g = np.ascontiguousarray(death_masses, dtype=float)
    g_rev = g[::-1].copy()
    k_max = g.shape[0]
    x = np.empty(n_steps + 1)
    z = np.empty(n_steps + 1)
    y = np.empty(n_steps + 1)
    inc = np.zeros(n_steps)

    if f0 <= 0.0:
        lf0 = -math.inf
    elif f0 >= 1.0:
        lf0 = math.inf
    else:
        lf0 = math.log(f0 / (1.0 - f0))
    not_at_risk0 = 1.0 - f0

    x[0] = 1.0 - f0
    z[0] = f0
    y[0] = 0.0
    n15_initial = x[0] + z[0] + kappa * y[0]
    lookback = int(round(15.0 / dt))
    i_pulse = int(round((t0 - start_year) / dt))
    half = 0.5 * dt

    for i in range(n_steps):
        xi = x[i]
        zi = z[i]
        yi = y[i]
        pulse = 0.0
        if i == i_pulse:
            pulse = lambda0 * zi
            zi -= pulse
            yi += pulse

        if i >= lookback:
            j = i - lookback
            n15 = x[j] + z[j] + kappa * y[j]
        else:
            n15 = n15_initial
        e_rate = entry_rate * n15

        if i >= k_max:
            d_rate = float(np.dot(inc[i - k_max : i], g_rev)) / dt
        elif i > 0:
            d_rate = float(np.dot(inc[:i], g_rev[k_max - i :])) / dt
        else:
            d_rate = 0.0

        ni = xi + zi + yi
        if ni <= 0.0:
            x[i + 1] = xi
            z[i + 1] = zi
            y[i + 1] = yi
            inc[i] = pulse
            continue

        if math.isinf(lf0):
            f1 = 0.0 if lf0 < 0 else 1.0
        else:
            f1 = _expit(phi * (xi / ni - not_at_risk0) + lf0)
        inc1 = r * (yi / ni) * zi
        xh = xi + half * ((1.0 - f1) * e_rate - mu * xi)
        zh = zi + half * (f1 * e_rate - mu * zi - inc1)
        yh = yi + half * (inc1 - d_rate)
        if xh < 0.0:
            xh = 0.0
        if zh < 0.0:
            zh = 0.0
        if yh < 0.0:
            yh = 0.0

        nh = xh + zh + yh
        if nh <= 0.0:
            x[i + 1] = xi
            z[i + 1] = zi
            y[i + 1] = yi
            inc[i] = pulse
            continue

        if math.isinf(lf0):
            f2 = 0.0 if lf0 < 0 else 1.0
        else:
            f2 = _expit(phi * (xh / nh - not_at_risk0) + lf0)
        inc2 = r * (yh / nh) * zh
        xn = xi + dt * ((1.0 - f2) * e_rate - mu * xh)
        zn = zi + dt * (f2 * e_rate - mu * zh - inc2)
        yn = yi + dt * (inc2 - d_rate)
        x[i + 1] = xn if xn > 0.0 else 0.0
        z[i + 1] = zn if zn > 0.0 else 0.0
        y[i + 1] = yn if yn > 0.0 else 0.0
        inc[i] = inc2 * dt + pulse

    return x, z, y, inc


def simulate_batch(
    r,
    f0,
    t0,
    phi,
    mu,
    entry_rate,
    kappa,
    lambda0,
    death_masses,
    start_year,
    dt,
    n_steps,
    year_steps,
    n_threads=1,
):
    """Prevalence at the given step indices for every draw, shape (n, n_years)."""
    r = np.asarray(r, dtype=float)
    n = r.shape[0]
    year_steps = np.asarray(year_steps, dtype=np.intp)
    out = np.empty((n, year_steps.shape[0]))
    for i in range(n):
        x, z, y, _ = simulate_steps(
            r[i],
            f0[i],
            t0[i],
            phi[i],
            mu,
            entry_rate,
            kappa,
            lambda0,
            death_masses,
            start_year,
            dt,
            n_steps,
        )
        ys = y[year_steps]
        tot = x[year_steps] + z[year_steps] + ys
        np.divide(ys, tot, out=out[i], where=tot > 0.0)
        out[i][tot <= 0.0] = 0.0
    return out


def _qk15(fvals, a, b):
    """One Gauss-Kronrod 7/15 panel with the QUADPACK error estimate."""
    h = 0.5 * (b - a)
    resk = float(np.dot(_WGK, fvals))
    resg = float(np.dot(_WG, fvals))
    resabs = float(np.dot(_WGK, np.abs(fvals))) * abs(h)
    resasc = float(np.dot(_WGK, np.abs(fvals - 0.5 * resk))) * abs(h)
    result = resk * h
    err = abs((resk - resg) * h)
    if resasc != 0.0 and err != 0.0:
        err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
    if resabs > np.finfo(float).tiny / _EPS50:
        err = max(err, _EPS50 * resabs)
    return result, err


def _panel_nodes(a, b):
    return 0.5 * (a + b) + 0.5 * (b - a) * _NODES


def _integrate_peaked(logh, u_peak, logh_peak, width, rel_tol, max_subdivisions):
    """Globally adaptive G7K15 on exp(logh(u) - logh_peak) over (0, 1).

    Initial breakpoints straddle the located peak at 1, 3 and 8 widths; the
    interval with the largest error estimate is bisected until the summed
    error estimate drops below rel_tol times the integral or the interval
    budget runs out. Returns (log_integral, achieved_rel_err, status) with
    status 0 on convergence, 1 when the tolerance was not reached.
    """
    pts = [0.0, 1.0]
    for c in (-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0):
        pts.append(min(max(u_peak + c * width, 0.0), 1.0))
    pts.sort()
    edges = [pts[0]]
    for p in pts[1:]:
        if p - edges[-1] > 1e-15:
            edges.append(p)

    lo = []
    hi = []
    vals = []
    errs = []

    def _panel(a, b):
        fv = np.exp(logh(_panel_nodes(a, b)) - logh_peak)
        return _qk15(fv, a, b)

    for a, b in zip(edges[:-1], edges[1:]):
        v, e = _panel(a, b)
        lo.append(a)
        hi.append(b)
        vals.append(v)
        errs.append(e)

    status = 0
    while True:
        total = sum(vals)
        total_err = sum(errs)
        if total <= 0.0:
            return -math.inf, math.inf, 2
        if total_err <= rel_tol * abs(total):
            break
        if len(vals) >= max_subdivisions:
            status = 1
            break
        k = int(np.argmax(errs))
        a, b = lo[k], hi[k]
        mid = 0.5 * (a + b)
        if not (a < mid < b):
            status = 1
            break
        # replace the worst panel with its left half, append the right half;
        # the compiled backend keeps the same bookkeeping order
        vals[k], errs[k] = _panel(a, mid)
        hi[k] = mid
        v, e = _panel(mid, b)
        lo.append(mid)
        hi.append(b)
        vals.append(v)
        errs.append(e)

    total = sum(vals)
    total_err = sum(errs)
    if total <= 0.0:
        return -math.inf, math.inf, 2
    return math.log(total), total_err / total, status


def _locate_peak(logh):
    """Grid scan plus golden-section refinement of the integrand peak."""
    grid_vals = logh(_U_GRID)
    j = int(np.argmax(grid_vals))
    lo = _U_GRID[j - 1] if j > 0 else _U_GRID[0] * 1e-3
    hi = _U_GRID[j + 1] if j < _U_GRID.shape[0] - 1 else 0.5 * (_U_GRID[-1] + 1.0)

    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = float(logh(np.array([c]))[0])
    fd = float(logh(np.array([d]))[0])
    for _ in range(60):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = float(logh(np.array([c]))[0])
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = float(logh(np.array([d]))[0])
    u_peak = 0.5 * (a + b)
    logh_peak = float(logh(np.array([u_peak]))[0])
    if grid_vals[j] > logh_peak:
        u_peak = float(_U_GRID[j])
        logh_peak = float(grid_vals[j])

    delta = max(1e-10, 1e-3 * min(u_peak, 1.0 - u_peak))
    f0 = float(logh(np.array([u_peak]))[0])
    fp = float(logh(np.array([u_peak + delta]))[0])
    fm = float(logh(np.array([u_peak - delta]))[0])
    d2 = (fp - 2.0 * f0 + fm) / (delta * delta)
    if d2 < 0.0:
        width = 1.0 / math.sqrt(-d2)
    else:
        width = hi - lo
    width = min(max(width, 1e-12), 1.0)
    return u_peak, logh_peak, width


def _integrate_draw(bsum2, clinic_prec, beta1, beta2, rel_tol, max_subdivisions):
    """Marginalise sigma^2 for one draw given per-clinic residual summaries.

    bsum2[s] is (sum_t d_st / v_st)^2 and clinic_prec[s] is sum_t 1 / v_st.
    The variance is substituted as sigma^2 = u / (1 - u) so the domain is the
    unit interval; the returned log-integral excludes all sigma^2-independent
    terms (those are added back by the caller).
    """

    def logh(u):
        u = np.asarray(u, dtype=float)
        sig2 = u / (1.0 - u)
        t = sig2[:, None] * clinic_prec[None, :]
        val = np.sum(-0.5 * np.log1p(t) + 0.5 * sig2[:, None] * bsum2[None, :] / (1.0 + t), axis=1)
        return (
            val
            - (beta1 + 1.0) * np.log(sig2)
            - 1.0 / (beta2 * sig2)
            - 2.0 * np.log1p(-u)
        )

    u_peak, logh_peak, width = _locate_peak(logh)
    log_integral, rel_err, status = _integrate_peaked(
        logh, u_peak, logh_peak, width, rel_tol, max_subdivisions
    )
    return logh_peak + log_integral if status != 2 else -math.inf, rel_err, status


def integrated_loglik_batch(
    rho,
    obs_w,
    obs_v,
    obs_year_idx,
    clinic_offsets,
    const_total,
    beta1,
    beta2,
    rel_tol,
    max_subdivisions,
    n_threads=1,
):
    """Integrated log-likelihood of every trajectory row against the dataset.

    rho has one row per draw and one column per grid year; obs_* are flat
    per-observation arrays grouped by clinic with CSR-style clinic_offsets.
    const_total collects every term that does not depend on sigma^2 or the
    draw (Gaussian and prior normalising constants). Returns
    (loglik, rel_err, status) arrays; status 0 means the tolerance was met.
    """
    rho = np.asarray(rho, dtype=float)
    n = rho.shape[0]
    obs_w = np.asarray(obs_w, dtype=float)
    obs_v = np.asarray(obs_v, dtype=float)
    obs_year_idx = np.asarray(obs_year_idx, dtype=np.intp)
    clinic_offsets = np.asarray(clinic_offsets, dtype=np.intp)
    clinic_prec = np.add.reduceat(1.0 / obs_v, clinic_offsets[:-1])

    loglik = np.empty(n)
    rel_err = np.empty(n)
    status = np.empty(n, dtype=np.uint8)
    for i in range(n):
        omega = ndtri(np.clip(rho[i, obs_year_idx], RHO_CLAMP, 1.0 - RHO_CLAMP))
        d = obs_w - omega
        dv = d / obs_v
        a_total = float(np.dot(d, dv))
        bsum = np.add.reduceat(dv, clinic_offsets[:-1])
        log_integral, err, st = _integrate_draw(
            bsum * bsum, clinic_prec, beta1, beta2, rel_tol, max_subdivisions
        )
        loglik[i] = const_total - 0.5 * a_total + log_integral
        rel_err[i] = err
        status[i] = st
    return loglik, rel_err, status

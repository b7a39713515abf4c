# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels.

Semantics are defined by ``epimeld._core.fallback``; this module reproduces
them with C loops and releases the GIL so batch work can run on a thread
pool. Work is split into fixed-size chunks whose outputs land at fixed
offsets, so results are byte-identical for any thread count.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

cimport numpy as cnp
from libc.float cimport DBL_EPSILON, DBL_MIN
from libc.math cimport INFINITY, exp, fabs, log, log1p, pow, sqrt

from scipy.special.cython_special cimport ndtri

from . import fallback as _fallback
from . import quadrule as _quadrule

cnp.import_array()

# chunk of draws per task; fixed so outputs do not depend on thread count
_CHUNK = 256

cdef double RHO_CLAMP = _fallback.RHO_CLAMP
cdef double _INVPHI = (sqrt(5.0) - 1.0) / 2.0

cdef double _NODES_C[15]
cdef double _WGK_C[15]
cdef double _WG_C[15]
cdef Py_ssize_t _N_UGRID = 80
cdef double _UGRID_C[80]


def _init_tables():
    nodes, wgk, wg = _quadrule.full_rule()
    ugrid = _fallback._U_GRID
    if ugrid.shape[0] != _N_UGRID:
        raise RuntimeError("peak scan grid size mismatch with fallback")
    for i in range(15):
        _NODES_C[i] = nodes[i]
        _WGK_C[i] = wgk[i]
        _WG_C[i] = wg[i]
    for i in range(_N_UGRID):
        _UGRID_C[i] = ugrid[i]


_init_tables()


cdef inline double c_expit(double s) noexcept nogil:
    cdef double e
    if s >= 0.0:
        return 1.0 / (1.0 + exp(-s))
    e = exp(s)
    return e / (1.0 + e)


cdef void c_simulate(
    double r,
    double f0,
    double phi,
    double mu,
    double entry_rate,
    double kappa,
    double lambda0,
    const double* g_rev,
    Py_ssize_t k_max,
    double dt,
    Py_ssize_t n_steps,
    Py_ssize_t lookback,
    Py_ssize_t i_pulse,
    double* x,
    double* z,
    double* y,
    double* inc,
) noexcept nogil:
    cdef double lf0 = 0.0
    cdef int lf0_kind = 0
    cdef double not_at_risk0, n15_initial, half
    cdef Py_ssize_t i, j, m
    cdef double xi, zi, yi, pulse, n15, e_rate, d_rate, ni, f1, inc1
    cdef double xh, zh, yh, nh, f2, inc2, xn, zn, yn

    if f0 <= 0.0:
        lf0_kind = -1
    elif f0 >= 1.0:
        lf0_kind = 1
    else:
        lf0 = log(f0 / (1.0 - f0))
    not_at_risk0 = 1.0 - f0

    x[0] = 1.0 - f0
    z[0] = f0
    y[0] = 0.0
    n15_initial = x[0] + z[0] + kappa * y[0]
    half = 0.5 * dt

    for i in range(n_steps):
        xi = x[i]
        zi = z[i]
        yi = y[i]
        pulse = 0.0
        if i == i_pulse:
            pulse = lambda0 * zi
            zi = zi - pulse
            yi = yi + pulse

        if i >= lookback:
            j = i - lookback
            n15 = x[j] + z[j] + kappa * y[j]
        else:
            n15 = n15_initial
        e_rate = entry_rate * n15

        d_rate = 0.0
        if i >= k_max:
            for m in range(k_max):
                d_rate += inc[i - k_max + m] * g_rev[m]
            d_rate /= dt
        elif i > 0:
            for m in range(i):
                d_rate += inc[m] * g_rev[k_max - i + m]
            d_rate /= dt

        ni = xi + zi + yi
        if ni <= 0.0:
            x[i + 1] = xi
            z[i + 1] = zi
            y[i + 1] = yi
            inc[i] = pulse
            continue

        if lf0_kind != 0:
            f1 = 0.0 if lf0_kind < 0 else 1.0
        else:
            f1 = c_expit(phi * (xi / ni - not_at_risk0) + lf0)
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

        if lf0_kind != 0:
            f2 = 0.0 if lf0_kind < 0 else 1.0
        else:
            f2 = c_expit(phi * (xh / nh - not_at_risk0) + lf0)
        inc2 = r * (yh / nh) * zh
        xn = xi + dt * ((1.0 - f2) * e_rate - mu * xh)
        zn = zi + dt * (f2 * e_rate - mu * zh - inc2)
        yn = yi + dt * (inc2 - d_rate)
        x[i + 1] = xn if xn > 0.0 else 0.0
        z[i + 1] = zn if zn > 0.0 else 0.0
        y[i + 1] = yn if yn > 0.0 else 0.0
        inc[i] = inc2 * dt + pulse


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
    """Single-draw stepper; see fallback.simulate_steps for the contract."""
    cdef Py_ssize_t ns = int(n_steps)
    g = np.ascontiguousarray(death_masses, dtype=np.float64)
    g_rev = np.ascontiguousarray(g[::-1])
    x = np.empty(ns + 1)
    z = np.empty(ns + 1)
    y = np.empty(ns + 1)
    inc = np.zeros(ns)
    cdef double[::1] gv = g_rev
    cdef double[::1] xv = x
    cdef double[::1] zv = z
    cdef double[::1] yv = y
    cdef double[::1] iv = inc
    cdef Py_ssize_t lookback = int(round(15.0 / float(dt)))
    cdef Py_ssize_t i_pulse = int(round((float(t0) - float(start_year)) / float(dt)))
    cdef double c_r = r, c_f0 = f0, c_phi = phi, c_mu = mu
    cdef double c_entry = entry_rate, c_kappa = kappa, c_lambda0 = lambda0
    cdef double c_dt = dt
    with nogil:
        c_simulate(
            c_r, c_f0, c_phi, c_mu, c_entry, c_kappa, c_lambda0,
            &gv[0], gv.shape[0], c_dt, ns, lookback, i_pulse,
            &xv[0], &zv[0], &yv[0], &iv[0],
        )
    return x, z, y, inc


def _sim_chunk(
    double[::1] r,
    double[::1] f0,
    double[::1] phi,
    cnp.intp_t[::1] i_pulse,
    double mu,
    double entry_rate,
    double kappa,
    double lambda0,
    double[::1] g_rev,
    double dt,
    Py_ssize_t n_steps,
    Py_ssize_t lookback,
    cnp.intp_t[::1] year_steps,
    double[:, ::1] out,
    Py_ssize_t i0,
    Py_ssize_t i1,
):
    cdef Py_ssize_t ns1 = n_steps + 1
    ws = np.empty(3 * ns1 + n_steps)
    cdef double[::1] wsv = ws
    cdef double* xp = &wsv[0]
    cdef double* zp = xp + ns1
    cdef double* yp = zp + ns1
    cdef double* incp = yp + ns1
    cdef Py_ssize_t i, k, idx, nyears = year_steps.shape[0]
    cdef double tot
    with nogil:
        for i in range(i0, i1):
            for k in range(n_steps):
                incp[k] = 0.0
            c_simulate(
                r[i], f0[i], phi[i], mu, entry_rate, kappa, lambda0,
                &g_rev[0], g_rev.shape[0], dt, n_steps, lookback, i_pulse[i],
                xp, zp, yp, incp,
            )
            for k in range(nyears):
                idx = year_steps[k]
                tot = xp[idx] + zp[idx] + yp[idx]
                out[i, k] = yp[idx] / tot if tot > 0.0 else 0.0


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
    """Batch stepper; see fallback.simulate_batch for the contract."""
    r_a = np.ascontiguousarray(r, dtype=np.float64)
    f0_a = np.ascontiguousarray(f0, dtype=np.float64)
    t0_a = np.ascontiguousarray(t0, dtype=np.float64)
    phi_a = np.ascontiguousarray(phi, dtype=np.float64)
    g = np.ascontiguousarray(death_masses, dtype=np.float64)
    g_rev = np.ascontiguousarray(g[::-1])
    ys = np.ascontiguousarray(year_steps, dtype=np.intp)
    n = r_a.shape[0]
    out = np.empty((n, ys.shape[0]))
    lookback = int(round(15.0 / float(dt)))
    # np.rint rounds half to even, matching Python round() in the fallback
    i_pulse = np.rint((t0_a - float(start_year)) / float(dt)).astype(np.intp)
    tasks = [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    args = (
        r_a, f0_a, phi_a, i_pulse,
        float(mu), float(entry_rate), float(kappa), float(lambda0),
        g_rev, float(dt), int(n_steps), lookback, ys, out,
    )
    if int(n_threads) > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=int(n_threads)) as ex:
            futures = [ex.submit(_sim_chunk, *args, s, e) for s, e in tasks]
            for fut in futures:
                fut.result()
    else:
        for s, e in tasks:
            _sim_chunk(*args, s, e)
    return out


cdef double c_logh(
    double u,
    const double* b2,
    const double* prec,
    Py_ssize_t n_clinics,
    double beta1,
    double beta2,
) noexcept nogil:
    cdef double sig2 = u / (1.0 - u)
    cdef double val = 0.0
    cdef double t
    cdef Py_ssize_t s
    for s in range(n_clinics):
        t = sig2 * prec[s]
        val += -0.5 * log1p(t) + 0.5 * sig2 * b2[s] / (1.0 + t)
    return (
        val
        - (beta1 + 1.0) * log(sig2)
        - 1.0 / (beta2 * sig2)
        - 2.0 * log1p(-u)
    )


cdef void c_locate_peak(
    const double* b2,
    const double* prec,
    Py_ssize_t n_clinics,
    double beta1,
    double beta2,
    double* u_peak_out,
    double* logh_peak_out,
    double* width_out,
) noexcept nogil:
    cdef Py_ssize_t j = 0, k
    cdef double best = -INFINITY, vv
    cdef double lo, hi, a, b, c, d, fc, fd
    cdef double u_peak, logh_peak, delta, f0v, fp, fm, d2, width
    cdef int it

    for k in range(_N_UGRID):
        vv = c_logh(_UGRID_C[k], b2, prec, n_clinics, beta1, beta2)
        if vv > best:
            best = vv
            j = k
    lo = _UGRID_C[j - 1] if j > 0 else _UGRID_C[0] * 1e-3
    hi = _UGRID_C[j + 1] if j < _N_UGRID - 1 else 0.5 * (_UGRID_C[_N_UGRID - 1] + 1.0)

    a = lo
    b = hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = c_logh(c, b2, prec, n_clinics, beta1, beta2)
    fd = c_logh(d, b2, prec, n_clinics, beta1, beta2)
    for it in range(60):
        if fc >= fd:
            b = d
            d = c
            fd = fc
            c = b - _INVPHI * (b - a)
            fc = c_logh(c, b2, prec, n_clinics, beta1, beta2)
        else:
            a = c
            c = d
            fc = fd
            d = a + _INVPHI * (b - a)
            fd = c_logh(d, b2, prec, n_clinics, beta1, beta2)
    u_peak = 0.5 * (a + b)
    logh_peak = c_logh(u_peak, b2, prec, n_clinics, beta1, beta2)
    if best > logh_peak:
        u_peak = _UGRID_C[j]
        logh_peak = best

    delta = u_peak if u_peak < 1.0 - u_peak else 1.0 - u_peak
    delta = 1e-3 * delta
    if delta < 1e-10:
        delta = 1e-10
    f0v = c_logh(u_peak, b2, prec, n_clinics, beta1, beta2)
    fp = c_logh(u_peak + delta, b2, prec, n_clinics, beta1, beta2)
    fm = c_logh(u_peak - delta, b2, prec, n_clinics, beta1, beta2)
    d2 = (fp - 2.0 * f0v + fm) / (delta * delta)
    if d2 < 0.0:
        width = 1.0 / sqrt(-d2)
    else:
        width = hi - lo
    if width < 1e-12:
        width = 1e-12
    if width > 1.0:
        width = 1.0

    u_peak_out[0] = u_peak
    logh_peak_out[0] = logh_peak
    width_out[0] = width


cdef void c_qk15_panel(
    double a,
    double b,
    double logh_peak,
    const double* b2,
    const double* prec,
    Py_ssize_t n_clinics,
    double beta1,
    double beta2,
    double* result,
    double* abserr,
) noexcept nogil:
    cdef double cmid = 0.5 * (a + b)
    cdef double h = 0.5 * (b - a)
    cdef double fv[15]
    cdef Py_ssize_t k
    cdef double resk = 0.0, resg = 0.0, resabs = 0.0, resasc = 0.0
    cdef double reskh, err, t

    for k in range(15):
        fv[k] = exp(
            c_logh(cmid + h * _NODES_C[k], b2, prec, n_clinics, beta1, beta2)
            - logh_peak
        )
    for k in range(15):
        resk += _WGK_C[k] * fv[k]
        resg += _WG_C[k] * fv[k]
        resabs += _WGK_C[k] * fabs(fv[k])
    reskh = 0.5 * resk
    for k in range(15):
        resasc += _WGK_C[k] * fabs(fv[k] - reskh)
    resabs *= fabs(h)
    resasc *= fabs(h)
    err = fabs((resk - resg) * h)
    if resasc != 0.0 and err != 0.0:
        t = pow(200.0 * err / resasc, 1.5)
        if t > 1.0:
            t = 1.0
        err = resasc * t
    if resabs > DBL_MIN / (50.0 * DBL_EPSILON):
        t = 50.0 * DBL_EPSILON * resabs
        if t > err:
            err = t
    result[0] = resk * h
    abserr[0] = err


cdef int c_integrate_draw(
    const double* b2,
    const double* prec,
    Py_ssize_t n_clinics,
    double beta1,
    double beta2,
    double rel_tol,
    Py_ssize_t max_subdivisions,
    Py_ssize_t capacity,
    double* ilo,
    double* ihi,
    double* ival,
    double* ierr,
    double* res_log,
    double* res_relerr,
) noexcept nogil:
    cdef double u_peak, logh_peak, width
    cdef double pts[9]
    cdef double tmp, mid, aa, bb
    cdef Py_ssize_t n_pts = 9, n_edges, n_int, k, kworst, m
    cdef double edges[9]
    cdef double total, total_err, worst
    cdef int status = 0

    c_locate_peak(b2, prec, n_clinics, beta1, beta2, &u_peak, &logh_peak, &width)

    pts[0] = 0.0
    pts[1] = 1.0
    pts[2] = u_peak - 8.0 * width
    pts[3] = u_peak - 3.0 * width
    pts[4] = u_peak - width
    pts[5] = u_peak
    pts[6] = u_peak + width
    pts[7] = u_peak + 3.0 * width
    pts[8] = u_peak + 8.0 * width
    for k in range(2, 9):
        if pts[k] < 0.0:
            pts[k] = 0.0
        if pts[k] > 1.0:
            pts[k] = 1.0
    # insertion sort, then dedup with the same gap rule as the fallback
    for k in range(1, n_pts):
        tmp = pts[k]
        m = k - 1
        while m >= 0 and pts[m] > tmp:
            pts[m + 1] = pts[m]
            m -= 1
        pts[m + 1] = tmp
    n_edges = 1
    edges[0] = pts[0]
    for k in range(1, n_pts):
        if pts[k] - edges[n_edges - 1] > 1e-15:
            edges[n_edges] = pts[k]
            n_edges += 1

    n_int = 0
    for k in range(n_edges - 1):
        ilo[n_int] = edges[k]
        ihi[n_int] = edges[k + 1]
        c_qk15_panel(
            edges[k], edges[k + 1], logh_peak, b2, prec, n_clinics,
            beta1, beta2, &ival[n_int], &ierr[n_int],
        )
        n_int += 1

    while True:
        total = 0.0
        total_err = 0.0
        for k in range(n_int):
            total += ival[k]
            total_err += ierr[k]
        if total <= 0.0:
            res_log[0] = -INFINITY
            res_relerr[0] = INFINITY
            return 2
        if total_err <= rel_tol * fabs(total):
            break
        if n_int >= max_subdivisions or n_int + 1 > capacity:
            status = 1
            break
        kworst = 0
        worst = ierr[0]
        for k in range(1, n_int):
            if ierr[k] > worst:
                worst = ierr[k]
                kworst = k
        aa = ilo[kworst]
        bb = ihi[kworst]
        mid = 0.5 * (aa + bb)
        if not (aa < mid and mid < bb):
            status = 1
            break
        ihi[kworst] = mid
        c_qk15_panel(
            aa, mid, logh_peak, b2, prec, n_clinics, beta1, beta2,
            &ival[kworst], &ierr[kworst],
        )
        ilo[n_int] = mid
        ihi[n_int] = bb
        c_qk15_panel(
            mid, bb, logh_peak, b2, prec, n_clinics, beta1, beta2,
            &ival[n_int], &ierr[n_int],
        )
        n_int += 1

    total = 0.0
    total_err = 0.0
    for k in range(n_int):
        total += ival[k]
        total_err += ierr[k]
    if total <= 0.0:
        res_log[0] = -INFINITY
        res_relerr[0] = INFINITY
        return 2
    res_log[0] = logh_peak + log(total)
    res_relerr[0] = total_err / total
    return status


def _lik_chunk(
    double[:, ::1] rho,
    double[::1] w,
    double[::1] v,
    cnp.intp_t[::1] year_idx,
    cnp.intp_t[::1] offsets,
    double[::1] prec,
    double const_total,
    double beta1,
    double beta2,
    double rel_tol,
    Py_ssize_t max_subdivisions,
    double[::1] loglik,
    double[::1] rel_err,
    unsigned char[::1] status,
    Py_ssize_t i0,
    Py_ssize_t i1,
):
    cdef Py_ssize_t n_clinics = prec.shape[0]
    cdef Py_ssize_t capacity = max_subdivisions + 16
    ws = np.empty(n_clinics + 4 * capacity)
    cdef double[::1] wsv = ws
    cdef double* b2 = &wsv[0]
    cdef double* ilo = b2 + n_clinics
    cdef double* ihi = ilo + capacity
    cdef double* ival = ihi + capacity
    cdef double* ierr = ival + capacity
    cdef Py_ssize_t i, s, t
    cdef double a_total, bsum, rr, om, d, dv, res_log, res_relerr, hi_clamp
    cdef int st
    hi_clamp = 1.0 - RHO_CLAMP
    with nogil:
        for i in range(i0, i1):
            a_total = 0.0
            for s in range(n_clinics):
                bsum = 0.0
                for t in range(offsets[s], offsets[s + 1]):
                    rr = rho[i, year_idx[t]]
                    if rr < RHO_CLAMP:
                        rr = RHO_CLAMP
                    elif rr > hi_clamp:
                        rr = hi_clamp
                    om = ndtri(rr)
                    d = w[t] - om
                    dv = d / v[t]
                    a_total += d * dv
                    bsum += dv
                b2[s] = bsum * bsum
            st = c_integrate_draw(
                b2, &prec[0], n_clinics, beta1, beta2, rel_tol,
                max_subdivisions, capacity, ilo, ihi, ival, ierr,
                &res_log, &res_relerr,
            )
            loglik[i] = const_total - 0.5 * a_total + res_log
            rel_err[i] = res_relerr
            status[i] = <unsigned char>st


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
    """Batch integrated log-likelihood; see the fallback for the contract."""
    rho_a = np.ascontiguousarray(rho, dtype=np.float64)
    w_a = np.ascontiguousarray(obs_w, dtype=np.float64)
    v_a = np.ascontiguousarray(obs_v, dtype=np.float64)
    yidx = np.ascontiguousarray(obs_year_idx, dtype=np.intp)
    offs = np.ascontiguousarray(clinic_offsets, dtype=np.intp)
    prec = np.add.reduceat(1.0 / v_a, offs[:-1])
    prec = np.ascontiguousarray(prec, dtype=np.float64)
    n = rho_a.shape[0]
    loglik = np.empty(n)
    rel_err = np.empty(n)
    status = np.empty(n, dtype=np.uint8)
    tasks = [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    args = (
        rho_a, w_a, v_a, yidx, offs, prec,
        float(const_total), float(beta1), float(beta2),
        float(rel_tol), int(max_subdivisions),
        loglik, rel_err, status,
    )
    if int(n_threads) > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=int(n_threads)) as ex:
            futures = [ex.submit(_lik_chunk, *args, s, e) for s, e in tasks]
            for fut in futures:
                fut.result()
    else:
        for s, e in tasks:
            _lik_chunk(*args, s, e)
    return loglik, rel_err, status

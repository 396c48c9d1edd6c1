# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled time-stepping and transform loops.

Mirrors ``_kernels_py`` call for call; see that module for the scheme.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport expm1, exp, fabs, isfinite

cnp.import_array()


cdef inline double _bern(double x) noexcept nogil:
    if fabs(x) < 1e-12:
        return 1.0
    if x > 700.0:
        return 0.0
    return x / expm1(x)


def bernoulli(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.ascontiguousarray(np.atleast_1d(x), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(xa)
    cdef Py_ssize_t i
    for i in range(xa.shape[0]):
        out[i] = _bern(xa[i])
    return out


cdef void _coeffs(const double[:] v, double c, double dv, double[:] a, double[:] beta) noexcept nogil:
    cdef Py_ssize_t j, M = a.shape[0]
    cdef double x, Bx, inv = 1.0 / (dv * dv)
    for j in range(M):
        x = (c - (v[j] + 0.5 * dv)) * dv
        Bx = _bern(x)
        a[j] = (Bx + x) * inv
        beta[j] = Bx * inv


def sg_coeffs(v, double c, double dv):
    cdef const double[:] vv = np.ascontiguousarray(v, dtype=np.float64)
    M = vv.shape[0] - 1
    a = np.empty(M)
    beta = np.empty(M)
    _coeffs(vv, c, dv, a, beta)
    return a, beta


cdef void _factor(const double[:] a, const double[:] beta, double dt,
                  double[:] cp, double[:] invden) noexcept nogil:
    # Thomas factorisation of rows: lower_j = -dt a_{j-1},
    # diag_j = 1 + dt (a_j + beta_{j-1}), upper_j = -dt beta_j
    cdef Py_ssize_t j, M = a.shape[0]
    cdef double diag, den
    diag = 1.0 + dt * a[0]
    invden[0] = 1.0 / diag
    cp[0] = -dt * beta[0] * invden[0]
    for j in range(1, M):
        diag = 1.0 + dt * (a[j] + beta[j - 1])
        den = diag - (-dt * a[j - 1]) * cp[j - 1]
        invden[j] = 1.0 / den
        cp[j] = -dt * beta[j] * invden[j]


cdef void _solve(const double[:] a, double dt, const double[:] cp, const double[:] invden,
                 double[:] x) noexcept nogil:
    # in place: x holds the rhs on entry
    cdef Py_ssize_t j, M = a.shape[0]
    x[0] = x[0] * invden[0]
    for j in range(1, M):
        x[j] = (x[j] + dt * a[j - 1] * x[j - 1]) * invden[j]
    for j in range(M - 2, -1, -1):
        x[j] = x[j] - cp[j] * x[j + 1]


def run_fixed_drift(u0, v, double c, double dt, Py_ssize_t n_steps, Py_ssize_t i_R,
                    bint reinject=True, double fb_coef=0.0, fb_profile=None,
                    double fb_half=0.0, Py_ssize_t delay_steps=0, history=None):
    cdef double[:] u = np.array(u0, dtype=np.float64)
    cdef const double[:] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t M = u.shape[0] - 1
    cdef double dv = vv[1] - vv[0]
    cdef double[:] a = np.empty(M)
    cdef double[:] beta = np.empty(M)
    cdef double[:] cp = np.empty(M)
    cdef double[:] invden = np.empty(M)
    cdef double[:] y = np.zeros(M)
    _coeffs(vv, c, dv, a, beta)
    _factor(a, beta, dt, cp, invden)
    y[i_R] = 1.0
    _solve(a, dt, cp, invden, y)
    cdef double gamma = dt * a[M - 1] if reinject else 0.0
    cdef double denom = 1.0 - gamma * y[M - 1]

    cdef Py_ssize_t lag = delay_steps if delay_steps > 1 else 1
    hist = np.zeros(lag) if history is None else np.asarray(history, dtype=np.float64)
    if hist.shape[0] != lag:
        raise ValueError(f"history needs {lag} samples, got {hist.shape[0]}")
    cdef double[:] N_all = np.concatenate([hist, np.zeros(n_steps)])
    cdef bint use_fb = fb_coef != 0.0 and fb_profile is not None
    cdef const double[:] prof = np.ascontiguousarray(fb_profile if use_fb else np.zeros(M + 1), dtype=np.float64)

    N_out = np.empty(n_steps)
    mass_out = np.empty(n_steps)
    cdef double[:] N = N_out
    cdef double[:] mass = mass_out
    cdef double[:] x = np.empty(M)
    cdef Py_ssize_t n, j
    cdef double s, fired, corr, tot
    with nogil:
        for n in range(n_steps):
            fired = 0.0
            if use_fb:
                s = fb_coef * N_all[n]
                for j in range(M):
                    x[j] = u[j] + dt * s * prof[j]
                fired = s * fb_half
                x[i_R] += dt * fired / dv
            else:
                for j in range(M):
                    x[j] = u[j]
            _solve(a, dt, cp, invden, x)
            if gamma != 0.0:
                corr = gamma * x[M - 1] / denom
                for j in range(M):
                    x[j] += y[j] * corr
            tot = 0.0
            for j in range(M):
                u[j] = x[j]
                tot += x[j]
            u[M] = 0.0
            N[n] = dv * a[M - 1] * x[M - 1] + fired
            N_all[n + lag] = N[n]
            mass[n] = dv * tot
    return np.asarray(u), N_out, mass_out


def run_nonlinear(u0, v, double b, double dt, Py_ssize_t n_steps, Py_ssize_t i_R,
                  Py_ssize_t delay_steps, history, double N_cap=1e3,
                  double doubling_floor=10.0, target=None):
    cdef double[:] u = np.array(u0, dtype=np.float64)
    cdef const double[:] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t M = u.shape[0] - 1
    cdef double dv = vv[1] - vv[0]
    cdef Py_ssize_t lag = delay_steps if delay_steps > 1 else 1
    hist = np.asarray(history, dtype=np.float64)
    if hist.shape[0] != lag:
        raise ValueError(f"history needs {lag} samples, got {hist.shape[0]}")
    cdef double[:] N_all = np.concatenate([hist, np.zeros(n_steps)])
    cdef bint has_target = target is not None
    cdef const double[:] p_t = np.ascontiguousarray(target if has_target else np.zeros(M + 1), dtype=np.float64)

    N_out = np.zeros(n_steps)
    mass_out = np.zeros(n_steps)
    umin_out = np.zeros(n_steps)
    ent_out = np.full(n_steps, np.nan)
    cdef double[:] N = N_out
    cdef double[:] mass = mass_out
    cdef double[:] umin = umin_out
    cdef double[:] ent = ent_out
    cdef double[:] a = np.empty(M)
    cdef double[:] beta = np.empty(M)
    cdef double[:] cp = np.empty(M)
    cdef double[:] invden = np.empty(M)
    cdef double[:] x = np.empty(M)
    cdef double[:] y = np.empty(M)
    cdef Py_ssize_t n, j, n_done = n_steps
    cdef bint blown = False
    cdef double c, gamma, corr, tot, mn, e, d
    with nogil:
        for n in range(n_steps):
            c = b * N_all[n]
            _coeffs(vv, c, dv, a, beta)
            _factor(a, beta, dt, cp, invden)
            for j in range(M):
                x[j] = u[j]
                y[j] = 0.0
            y[i_R] = 1.0
            _solve(a, dt, cp, invden, x)
            _solve(a, dt, cp, invden, y)
            gamma = dt * a[M - 1]
            corr = gamma * x[M - 1] / (1.0 - gamma * y[M - 1])
            tot = 0.0
            mn = 1e300
            e = 0.0
            for j in range(M):
                x[j] += y[j] * corr
                u[j] = x[j]
                tot += x[j]
                if x[j] < mn:
                    mn = x[j]
                if has_target and p_t[j] > 0.0:
                    d = x[j] - p_t[j]
                    e += (0.5 if j == 0 else 1.0) * d * d / p_t[j]
            u[M] = 0.0
            N[n] = dv * a[M - 1] * x[M - 1]
            N_all[n + lag] = N[n]
            mass[n] = dv * tot
            umin[n] = mn
            if has_target:
                ent[n] = dv * e
            if not isfinite(N[n]) or N[n] > N_cap:
                blown = True
            elif n >= 10 and N[n - 10] >= doubling_floor:
                if N[n] >= 2.0 * N[n - 5] and N[n - 5] >= 2.0 * N[n - 10]:
                    blown = True
            if blown:
                n_done = n + 1
                break
    return (np.asarray(u), N_out[:n_done], mass_out[:n_done], umin_out[:n_done],
            ent_out[:n_done], n_done, bool(blown))


def laplace_cells(values, double dt, xi):
    cdef const double[:] cv = np.ascontiguousarray(values, dtype=np.float64)
    xa = np.ascontiguousarray(np.atleast_1d(xi), dtype=np.complex128)
    cdef const double complex[:] xs = xa
    cdef Py_ssize_t nx = xs.shape[0], nk = cv.shape[0], i, k
    F_out = np.empty(nx, dtype=np.complex128)
    dF_out = np.empty(nx, dtype=np.complex128)
    cdef double complex[:] F = F_out
    cdef double complex[:] dF = dF_out
    zs = np.exp(-xa * dt)
    cdef const double complex[:] zz = zs
    cdef double complex z, P, dP
    with nogil:
        for i in range(nx):
            z = zz[i]
            P = 0.0
            dP = 0.0
            for k in range(nk - 1, -1, -1):
                dP = dP * z + P
                P = P * z + cv[k]
            F[i] = P
            dF[i] = dP
    from ._kernels_py import _cell_weight
    w, dw = _cell_weight(xa, dt)
    return w * F_out, dw * F_out - w * dF_out * dt * zs

"""Pure numpy/scipy implementation of the hot loops.

Same call signatures as the compiled ``_kernels`` module; used when the
extension is not built or when ``NNLIF_BACKEND=python``.

Spatial scheme (shared with the extension): node-centred control volumes
of width ``dv`` on nodes ``0..M-1``, node ``M`` is the Dirichlet node.
Drift-diffusion fluxes use exponential fitting (Scharfetter-Gummel /
Chang-Cooper),

    J_{j+1/2} = dv * (a_j u_j - beta_j u_{j+1}),
    a_j = B(-x_j) / dv^2,  beta_j = B(x_j) / dv^2,  x_j = (c - v_{j+1/2}) dv,

with ``B(x) = x / (e^x - 1)``. Time stepping is backward Euler. The flux
leaving through the last face is re-injected implicitly at the reset
node, which adds one off-band entry handled by Sherman-Morrison.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import diags
from scipy.sparse.linalg import splu


def bernoulli(x):
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = np.abs(x) > 1e-12
    with np.errstate(over="ignore"):
        out[big] = x[big] / np.expm1(x[big])
    return out


def sg_coeffs(v, c, dv):
    """Flux coefficients on the ``M`` faces ``v_j + dv/2``, ``j < M``."""
    x = (c - (v[:-1] + 0.5 * dv)) * dv
    Bx = bernoulli(x)
    return (Bx + x) / dv ** 2, Bx / dv ** 2


def _bands(a, beta, dt):
    M = a.size
    diag = 1.0 + dt * a
    diag[1:] += dt * beta[:-1]
    upper = -dt * beta[:-1]          # couples u_j to u_{j+1}
    lower = -dt * a[:-1]             # couples u_{j+1} to u_j
    return lower, diag, upper, M


def _banded(lower, diag, upper):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return ab


def run_fixed_drift(u0, v, c, dt, n_steps, i_R, reinject=True,
                    fb_coef=0.0, fb_profile=None, fb_half=0.0,
                    delay_steps=0, history=None):
    """Backward-Euler evolution with a frozen drift centre ``c``.

    Optional feedback source ``fb_coef * N(t - d) * fb_profile`` models the
    linearized equation; ``fb_half`` is the mass of ``fb_profile`` in the
    boundary half cell, fired and re-injected at once.

    Returns ``(u, N, mass)`` where ``N[n]`` is the flux over step ``n`` and
    ``mass[n]`` the control-volume mass after it.
    """
    u = np.array(u0, dtype=float)
    M = u.size - 1
    dv = v[1] - v[0]
    a, beta = sg_coeffs(v, c, dv)
    lower, diag, upper, _ = _bands(a, beta, dt)
    T = diags([lower, diag, upper], [-1, 0, 1], format="csc")
    lu = splu(T)
    gamma = dt * a[M - 1] if reinject else 0.0
    e_r = np.zeros(M)
    e_r[i_R] = 1.0
    y = lu.solve(e_r)
    denom = 1.0 - gamma * y[M - 1]

    lag = max(delay_steps, 1)
    hist = np.zeros(lag) if history is None else np.asarray(history, dtype=float)
    if hist.size != lag:
        raise ValueError(f"history needs {lag} samples, got {hist.size}")
    N_all = np.concatenate([hist, np.zeros(n_steps)])
    use_fb = fb_coef != 0.0 and fb_profile is not None
    prof = None if not use_fb else np.asarray(fb_profile, dtype=float)[:M]

    N = np.empty(n_steps)
    mass = np.empty(n_steps)
    rhs = np.empty(M)
    for n in range(n_steps):
        rhs[:] = u[:M]
        fired = 0.0
        if use_fb:
            s = fb_coef * N_all[n]     # index n <-> cell n + 1 - lag
            rhs += dt * s * prof
            fired = s * fb_half
            rhs[i_R] += dt * fired / dv
        z = lu.solve(rhs)
        if gamma:
            z += y * (gamma * z[M - 1] / denom)
        u[:M] = z
        u[M] = 0.0
        N[n] = dv * a[M - 1] * z[M - 1] + fired
        N_all[n + lag] = N[n]
        mass[n] = dv * z.sum()
    return u, N, mass


def run_nonlinear(u0, v, b, dt, n_steps, i_R, delay_steps, history,
                  N_cap=1e3, doubling_floor=10.0, target=None):
    """Delayed nonlinear NNLIF evolution; drift centre ``b * N(t - d)``.

    For ``delay_steps == 0`` the drift uses the previous step's rate.
    Stops early on blow-up (rate above ``N_cap`` or two consecutive
    doublings over 5 steps once above ``doubling_floor``).

    Returns ``(u, N, mass, umin, entropy, n_done, blown)``.
    """
    u = np.array(u0, dtype=float)
    M = u.size - 1
    dv = v[1] - v[0]
    lag = max(delay_steps, 1)
    hist = np.asarray(history, dtype=float)
    if hist.size != lag:
        raise ValueError(f"history needs {lag} samples, got {hist.size}")
    N_all = np.concatenate([hist, np.zeros(n_steps)])
    if target is not None:
        p_t = np.asarray(target, dtype=float)[:M]
        w = np.full(M, dv)
        w[0] = 0.5 * dv
        inv_p = np.where(p_t > 0, 1.0 / np.where(p_t > 0, p_t, 1.0), 0.0)

    N = np.zeros(n_steps)
    mass = np.zeros(n_steps)
    umin = np.zeros(n_steps)
    ent = np.full(n_steps, np.nan)
    e_r = np.zeros(M)
    e_r[i_R] = 1.0
    blown = False
    n_done = n_steps
    for n in range(n_steps):
        c = b * N_all[n]            # index n <-> cell n + 1 - lag
        a, beta = sg_coeffs(v, c, dv)
        lower, diag, upper, _ = _bands(a, beta, dt)
        ab = _banded(lower, diag, upper)
        sol = solve_banded((1, 1), ab, np.column_stack([u[:M], e_r]),
                           overwrite_ab=True, check_finite=False)
        z, y = sol[:, 0], sol[:, 1]
        gamma = dt * a[M - 1]
        z = z + y * (gamma * z[M - 1] / (1.0 - gamma * y[M - 1]))
        u[:M] = z
        u[M] = 0.0
        N[n] = dv * a[M - 1] * z[M - 1]
        N_all[n + lag] = N[n]
        mass[n] = dv * z.sum()
        umin[n] = z.min()
        if target is not None:
            ent[n] = np.sum(w * (z - p_t) ** 2 * inv_p)
        if _blowup(N, n, N_cap, doubling_floor):
            blown = True
            n_done = n + 1
            break
    return u, N[:n_done], mass[:n_done], umin[:n_done], ent[:n_done], n_done, blown


def _blowup(N, n, N_cap, floor):
    if not np.isfinite(N[n]) or N[n] > N_cap:
        return True
    if n >= 10 and N[n - 10] >= floor:
        return N[n] >= 2.0 * N[n - 5] and N[n - 5] >= 2.0 * N[n - 10]
    return False


def laplace_cells(values, dt, xi):
    """Transform of a piecewise-constant signal and of ``t`` times it.

    ``values[k]`` is the mean over ``[k dt, (k+1) dt]``. Returns
    ``(F(xi), F'(xi))`` with ``F(xi) = int e^{-xi t} f(t) dt`` over the
    sampled window.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    z = np.exp(-xi * dt)
    P = np.zeros_like(xi)
    dP = np.zeros_like(xi)
    for coef in values[::-1]:
        dP = dP * z + P
        P = P * z + coef
    w, dw = _cell_weight(xi, dt)
    # d/dxi [w P(z)] with dz/dxi = -dt z
    return w * P, dw * P - w * dP * dt * z


def _cell_weight(xi, dt):
    """``w = (1 - e^{-xi dt}) / xi`` and ``dw/dxi``, series near zero."""
    h = xi * dt
    small = np.abs(h) < 1e-4
    w = np.empty_like(xi)
    dw = np.empty_like(xi)
    hs = h[small]
    w[small] = dt * (1 - hs / 2 + hs ** 2 / 6 - hs ** 3 / 24)
    dw[small] = dt * dt * (-0.5 + hs / 3 - hs ** 2 / 8)
    xb, hb = xi[~small], h[~small]
    em = -np.expm1(-hb)
    w[~small] = em / xb
    dw[~small] = (dt * np.exp(-hb) * xb - em) / xb ** 2
    return w, dw

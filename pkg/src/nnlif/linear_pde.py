"""Linear Fokker-Planck equation with reset, and the response trace N_q.

    d_t u = d_v^2 u + d_v((v - bN) u) + delta_{V_R} N_u(t),   u(V_F, t) = 0,

with ``N_u = -d_v u(V_F)``. The analytic method-of-images kernel for the
pure Fokker-Planck part (drift centred at the boundary, no reset) is kept
here as the verification oracle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .equilibria import ModelParams, SteadyState, _profile_shape
from .grid import Grid

log = logging.getLogger(__name__)


class TailFitError(RuntimeError):
    """Exponential tail of a firing trace could not be fitted reliably."""


# --- analytic oracle -----------------------------------------------------

def kernel_phi(t, v, w):
    """Fundamental solution of ``d_t u = d_v^2 u + d_v(v u)`` on the line."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("kernel needs t > 0")
    s2 = -np.expm1(-2.0 * t)
    return np.exp(-(v - np.exp(-t) * w) ** 2 / (2.0 * s2)) / np.sqrt(2.0 * np.pi * s2)


def kernel_psi(t, v, w):
    """Dirichlet kernel on ``v <= 0`` by the image at ``-w``."""
    return kernel_phi(t, v, w) - kernel_phi(t, v, -w)


def kernel_solution(u0: np.ndarray, grid: Grid, t: float) -> "LinearField":
    """``u(v, t) = int u0(w) Psi_t(v - V_F, w - V_F) dw`` by the trapezoid rule."""
    v = grid.v - grid.V_F
    K = kernel_psi(t, v[:, None], v[None, :])
    u = K @ (np.asarray(u0) * _trap_weights(grid))
    u[-1] = 0.0
    return LinearField(grid, u, t)


def _trap_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.M + 1, grid.dv)
    w[0] = w[-1] = 0.5 * grid.dv
    return w


# --- fields and traces ---------------------------------------------------

@dataclass
class LinearField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0
    flux: float = float("nan")     # flux absorbed during the last step

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.M + 1,):
            raise ValueError("field size does not match grid")
        self.values[-1] = 0.0

    @property
    def mass(self) -> float:
        return self.grid.mass(self.values)


@dataclass
class FiringTrace:
    """Firing rate as cell averages: ``samples[k]`` is the mean over ``[k dt, (k+1) dt]``."""

    dt: float
    samples: np.ndarray
    tail_A: float = 0.0
    tail_lam: float = 0.0
    fit_residual: float = float("inf")
    fit_valid: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return (np.arange(self.samples.size) + 0.5) * self.dt

    @property
    def T(self) -> float:
        return self.samples.size * self.dt

    @property
    def tail_fit(self):
        return self.tail_A, self.tail_lam

    def sign_changes(self, rel_floor: float = 1e-8) -> int:
        s = self.samples
        s = s[np.abs(s) > rel_floor * np.max(np.abs(s))]
        return int(np.count_nonzero(np.diff(np.sign(s))))

    def integral(self, absolute: bool = False) -> float:
        """``int_0^inf N dt``: cell sum plus the fitted exponential tail."""
        s = np.abs(self.samples) if absolute else self.samples
        A = abs(self.tail_A) if absolute else self.tail_A
        tail = A * math.exp(-self.tail_lam * self.T) / self.tail_lam if self.fit_valid else 0.0
        return float(self.dt * np.sum(s) + tail)


def fit_tail(trace: FiringTrace, start_frac: float = 2.0 / 3.0, max_residual: float = 0.1,
             floor: float = 1e-10) -> FiringTrace:
    """Fit ``N(t) ~ A exp(-lam t)`` on the trailing part of the window (in place)."""
    t = trace.t
    s = trace.samples
    sel = (t >= start_frac * trace.T) & (np.abs(s) > floor * np.max(np.abs(s)))
    if np.count_nonzero(sel) < 10 or len(set(np.sign(s[sel]))) > 1:
        trace.fit_valid = False
        trace.fit_residual = float("inf")
        return trace
    slope, icpt = np.polyfit(t[sel], np.log(np.abs(s[sel])), 1)
    sign = np.sign(s[sel][0])
    model = sign * np.exp(icpt + slope * t[sel])
    resid = float(np.sqrt(np.mean(((s[sel] - model) / model) ** 2)))
    trace.tail_A = float(sign * math.exp(icpt))
    trace.tail_lam = float(-slope)
    trace.fit_residual = resid
    trace.fit_valid = bool(resid <= max_residual and trace.tail_lam > 0)
    return trace


# --- solver --------------------------------------------------------------

def firing_rate(field: LinearField) -> float:
    """Second-order one-sided ``-d_v u(V_F)`` with ``u(V_F) = 0``."""
    u = field.values
    return float((4.0 * u[-2] - u[-3]) / (2.0 * field.grid.dv))


def step(field: LinearField, params: ModelParams, N_fixed: float, dt: float,
         N_drive: float | None = None, reinject: bool = True) -> LinearField:
    """One backward-Euler step of the linear operator ``L_{N_fixed}``.

    With ``N_drive=None`` the flux leaving at ``V_F`` is re-injected at
    ``V_R`` implicitly, which conserves the discrete mass exactly. A number
    re-injects ``N_drive * dt`` instead; ``reinject=False`` disables the
    source.
    """
    g = field.grid
    u0 = field.values.copy()
    implicit = reinject and N_drive is None
    if reinject and N_drive is not None:
        u0[g.i_R] += dt * N_drive / g.dv
    u, N, _ = kernels.run_fixed_drift(u0, g.v, params.b * N_fixed, dt, 1, g.i_R, reinject=implicit)
    return LinearField(g, u, field.time + dt, float(N[0]))


def evolve(field: LinearField, params: ModelParams, N_fixed: float, dt: float, n_steps: int,
           reinject: bool = True):
    """Many steps of :func:`step` with implicit re-injection; returns ``(field, flux, mass)``."""
    g = field.grid
    u, N, mass = kernels.run_fixed_drift(field.values, g.v, params.b * N_fixed, dt, n_steps,
                                         g.i_R, reinject=reinject)
    return LinearField(g, u, field.time + n_steps * dt, float(N[-1])), N, mass


def derivative_cells(state: SteadyState, grid: Grid):
    """Control-volume averages of ``d_v p_inf`` and the boundary half-cell mass.

    Cell averages are exact differences of the closed-form profile, so the
    reset kink needs no special treatment. The half cell next to ``V_F``
    belongs to the Dirichlet node; its content (``-p_inf(V_F - dv/2)``) is
    fired at once. Returns ``(q, m_half)`` with ``dv * sum(q[:-1]) + m_half``
    equal to zero up to the truncated left tail.
    """
    params = state.params
    h = grid.dv
    edges = np.append(grid.v[:-1] - 0.5 * h, grid.V_F - 0.5 * h)
    p_e = state.N_inf * _profile_shape(edges, params.b * state.N_inf, params)
    q = np.zeros(grid.M + 1)
    q[:-1] = np.diff(p_e) / h
    m_half = -p_e[-1]
    total = h * q[:-1].sum() + m_half
    if abs(total) > 1e-10:
        neg = q < 0
        neg_mass = h * q[neg].sum() + m_half
        scale = (neg_mass - total) / neg_mass
        q[neg] *= scale
        m_half *= scale
        log.info("rescaled negative part of d_v p_inf by %.3e", scale - 1.0)
    return q, m_half


@dataclass
class NqResult:
    trace: FiringTrace
    grid: Grid
    state: SteadyState
    q0: np.ndarray
    m_half: float
    final: LinearField


def compute_Nq(state: SteadyState, grid: Grid | None = None, dt: float | None = None,
               T_end: float = 20.0, dv: float = 1e-3, strict: bool = False) -> NqResult:
    """Firing response ``N_q(t)`` of the linear flow started from ``d_v p_inf``."""
    if grid is None:
        grid = Grid.for_model(state.params, state.N_inf, dv)
    if dt is None:
        dt = grid.dv
    n = int(round(T_end / dt))
    q0, m_half = derivative_cells(state, grid)
    u0 = q0.copy()
    u0[grid.i_R] += m_half / grid.dv
    u, N, mass = kernels.run_fixed_drift(u0, grid.v, state.params.b * state.N_inf, dt, n,
                                         grid.i_R, reinject=True)
    N = N.copy()
    N[0] += m_half / dt
    trace = fit_tail(FiringTrace(dt, N, meta=dict(b=state.b, N_inf=state.N_inf, dv=grid.dv)))
    if not trace.fit_valid:
        msg = (f"tail fit invalid for b={state.b:g}: residual={trace.fit_residual:.3g}, "
               f"lambda={trace.tail_lam:.3g}")
        if strict:
            raise TailFitError(msg)
        log.warning(msg)
    return NqResult(trace, grid, state, q0, m_half, LinearField(grid, u, n * dt))


def simulate_linearized(res: NqResult, u0: np.ndarray, d: float, T: float, dt: float | None = None,
                        history: np.ndarray | None = None):
    """Direct solve of ``d_t u = L_inf u - b N_u(t - d) d_v p_inf``.

    ``history`` holds ``N_u`` on ``[-d, 0]`` as cell averages (default zero).
    Returns ``(trace, final_field)``.
    """
    g = res.grid
    if dt is None:
        dt = res.trace.dt
    D = int(round(d / dt))
    lag = max(D, 1)
    if history is None:
        history = np.zeros(lag)
    st = res.state
    u, N, _ = kernels.run_fixed_drift(u0, g.v, st.b * st.N_inf, dt, int(round(T / dt)), g.i_R,
                                      reinject=True, fb_coef=-st.b, fb_profile=res.q0,
                                      fb_half=res.m_half, delay_steps=D, history=history)
    return FiringTrace(dt, N, meta=dict(d=D * dt)), LinearField(g, u, T)


def x_norm(u: np.ndarray, grid: Grid, c: float) -> float:
    """Discrete ``||u||_inf + ||u'||_inf + ||u||_{L2(phi)} + ||u'||_{L2(phi)}``, ``phi = exp((v-c)^2/2)``."""
    v = grid.v
    du = np.diff(u) / grid.dv
    vm = 0.5 * (v[1:] + v[:-1])
    phi = np.exp(0.5 * (v - c) ** 2)
    phim = np.exp(0.5 * (vm - c) ** 2)
    return float(np.max(np.abs(u)) + np.max(np.abs(du))
                 + math.sqrt(np.trapezoid(u ** 2 * phi, dx=grid.dv))
                 + math.sqrt(grid.dv * np.sum(du ** 2 * phim)))


def evolve_flux(res: NqResult, u0: np.ndarray, T: float, dt: float | None = None) -> np.ndarray:
    """Cell-averaged ``N(exp(t L_inf) u0)`` on the grid of ``res`` (no feedback)."""
    g = res.grid
    dt = res.trace.dt if dt is None else dt
    u0 = np.array(u0, dtype=float)
    u0[-1] = 0.0
    st = res.state
    _, N, _ = kernels.run_fixed_drift(u0, g.v, st.b * st.N_inf, dt, int(round(T / dt)), g.i_R,
                                      reinject=True)
    return N

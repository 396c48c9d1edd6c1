"""Stationary states of the NNLIF model.

Stationary firing rates are the solutions of ``N * I(N) = 1`` where

    I(N) = int_{-inf}^{V_F} exp(-(v - bN)^2 / 2)
           int_{max(v, V_R)}^{V_F} exp((w - bN)^2 / 2) dw dv.

Swapping the order of integration leaves a single integral over
``[V_R, V_F]`` of ``R(w - bN)`` with ``R(x) = sqrt(2 pi) exp(x^2/2) Phi(x)``,
``Phi`` the standard normal CDF. ``R`` is evaluated in log form so that
strongly inhibitory networks (``bN -> -inf``) do not overflow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .grid import Grid

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)
_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-13, limit=200)

CRITICAL_TOL = 1e-6


class EvaluationError(ArithmeticError):
    """Quadrature produced a non-finite value."""


class GridTooShortError(ValueError):
    """The truncated mesh cuts off a non-negligible part of the profile."""


@dataclass(frozen=True)
class ModelParams:
    b: float
    V_R: float = 1.0
    V_F: float = 2.0

    def __post_init__(self):
        if not self.V_R < self.V_F:
            raise ValueError(f"need V_R < V_F, got V_R={self.V_R}, V_F={self.V_F}")

    def with_b(self, b: float) -> "ModelParams":
        return ModelParams(b, self.V_R, self.V_F)


def log_R(x):
    """``log(sqrt(2 pi) exp(x^2/2) Phi(x))``, finite for all real ``x``."""
    x = np.asarray(x, dtype=float)
    neg = x < 0
    out = np.empty_like(x)
    # erfcx keeps the left tail exact; log_ndtr is safe on the right
    out[neg] = np.log(_SQRT_HALF_PI * special.erfcx(-x[neg] / math.sqrt(2.0)))
    xp = x[~neg]
    out[~neg] = _LOG_SQRT_2PI + 0.5 * xp * xp + special.log_ndtr(xp)
    return out if out.ndim else float(out)


def _scaled_integrals(N: float, params: ModelParams, derivative: bool):
    c = params.b * N
    # R is increasing, so its largest value sits at w = V_F
    L = max(0.0, log_R(params.V_F - c))

    def f0(w):
        return math.exp(log_R(w - c) - L)

    def f1(w):
        x = w - c
        return math.exp(-L) + x * math.exp(log_R(x) - L)

    f = f1 if derivative else f0
    val, _ = integrate.quad(f, params.V_R, params.V_F, **_QUAD_OPTS)
    return L, val


def log_I(N: float, params: ModelParams) -> float:
    if N < 0:
        raise ValueError(f"firing rate must be >= 0, got {N}")
    L, J = _scaled_integrals(N, params, derivative=False)
    if not (np.isfinite(J) and J > 0):
        raise EvaluationError(f"I(N) quadrature failed at N={N}, bN={params.b * N}")
    return L + math.log(J)


def eval_I(N: float, params: ModelParams) -> float:
    """``I(N)`` by the reordered one-dimensional quadrature."""
    lI = log_I(N, params)
    if lI > 709.0:
        raise EvaluationError(f"I(N) overflows at N={N}, bN={params.b * N}")
    return math.exp(lI)


def eval_dIdN(N: float, params: ModelParams) -> float:
    """``I'(N) = -b int_{V_R}^{V_F} (1 + x R(x)) dw`` with ``x = w - bN``."""
    if N < 0:
        raise ValueError(f"firing rate must be >= 0, got {N}")
    if params.b == 0.0:
        return 0.0
    L, J = _scaled_integrals(N, params, derivative=True)
    if L > 709.0 or not np.isfinite(J):
        raise EvaluationError(f"I'(N) overflows at N={N}, bN={params.b * N}")
    return -params.b * math.exp(L) * J


def one_over_I(N: float, params: ModelParams) -> float:
    return math.exp(-log_I(N, params))


@dataclass
class SteadyState:
    params: ModelParams
    N_inf: float
    slope_S: float
    branch: str
    residual: float = 0.0
    _profiles: dict = field(default_factory=dict, repr=False, compare=False)

    def profile(self, grid: Grid) -> np.ndarray:
        key = (grid.V_min, grid.V_F, grid.M)
        if key not in self._profiles:
            self._profiles[key] = steady_profile(self.N_inf, self.params, grid)
        return self._profiles[key]

    @property
    def b(self) -> float:
        return self.params.b


def slope_S(state: SteadyState) -> float:
    """Slope of ``1/I`` at the equilibrium, ``-I'(N) N^2``."""
    return -eval_dIdN(state.N_inf, state.params) * state.N_inf ** 2


def _G(N, params):
    # same sign and roots as N I(N) - 1, but never overflows
    return math.log(N) + log_I(N, params)


def scan_nodes(N_max: float, N_min: float = 1e-4, per_octave: int = 12) -> np.ndarray:
    """Geometric octaves from ``N_min`` to ``N_max``, each split uniformly."""
    n_oct = max(1, int(math.ceil(math.log2(N_max / N_min))))
    edges = N_min * 2.0 ** np.arange(n_oct + 1)
    edges[-1] = N_max
    pts = [np.linspace(a, b, per_octave, endpoint=False) for a, b in zip(edges[:-1], edges[1:])]
    return np.unique(np.append(np.concatenate(pts), N_max))


def _polish(N0: float, params: ModelParams, lo: float, hi: float) -> float:
    N = optimize.brentq(_G, lo, hi, args=(params,), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    for _ in range(3):
        I = eval_I(N, params)
        g = N * I - 1.0
        if abs(g) <= 1e-14:
            break
        dg = I + N * eval_dIdN(N, params)
        step = g / dg
        if not (lo <= N - step <= hi):
            break
        N -= step
    return N


def find_equilibria(params: ModelParams, N_max: float = 20.0, per_octave: int = 12) -> list[SteadyState]:
    """All stationary states with firing rate in ``(0, N_max]``, sorted by rate."""
    if N_max <= 0:
        raise ValueError("N_max must be positive")
    nodes = scan_nodes(N_max, per_octave=per_octave)
    G = np.array([_G(N, params) for N in nodes])
    roots = []
    for i in range(len(nodes) - 1):
        g0, g1 = G[i], G[i + 1]
        if g0 == 0.0:
            roots.append(nodes[i])
        elif g0 * g1 < 0:
            roots.append(_polish(0.5 * (nodes[i] + nodes[i + 1]), params, nodes[i], nodes[i + 1]))
        elif 0 < i < len(nodes) - 2:
            roots += _check_hidden_pair(nodes, G, i, params)
    if G[-1] == 0.0:
        roots.append(nodes[-1])

    states = []
    for N in sorted(roots):
        S = -eval_dIdN(N, params) * N * N
        states.append(SteadyState(params, N, S, "", abs(N * eval_I(N, params) - 1.0)))
    _tag_branches(states)
    return states


def _check_hidden_pair(nodes, G, i, params):
    # a cell at a local extremum of G near zero may hide two roots; look
    # at the extremum itself and, if it changes sign, recover both roots
    s_left = (G[i] - G[i - 1]) / (nodes[i] - nodes[i - 1])
    s_right = (G[i + 2] - G[i + 1]) / (nodes[i + 2] - nodes[i + 1])
    if s_left * s_right >= 0:
        return []
    sgn = 1.0 if G[i] > 0 else -1.0
    res = optimize.minimize_scalar(lambda N: sgn * _G(N, params), bounds=(nodes[i], nodes[i + 1]),
                                   method="bounded", options=dict(xatol=1e-14))
    mid = float(res.x)
    if _G(mid, params) * G[i] >= 0:
        return []
    log.warning("scan resolution: two sign changes inside cell [%g, %g] (b=%g)",
                nodes[i], nodes[i + 1], params.b)
    return [_polish(mid, params, nodes[i], mid), _polish(mid, params, mid, nodes[i + 1])]


def _tag_branches(states: list[SteadyState]) -> None:
    for st in states:
        # G'(N) = (1 - S)/N at a root; tangency means S == 1
        if abs((1.0 - st.slope_S) / st.N_inf) < CRITICAL_TOL:
            st.branch = "critical"
    names = {1: ["unique"], 2: ["lower", "higher"]}.get(len(states))
    for k, st in enumerate(states):
        if st.branch:
            continue
        st.branch = names[k] if names else f"root{k}"


def lower_equilibrium(params: ModelParams, N_max: float = 20.0) -> SteadyState | None:
    states = find_equilibria(params, N_max)
    return states[0] if states else None


def root_count(b: float, V_R: float = 1.0, V_F: float = 2.0, N_max: float = 20.0) -> int:
    return len(find_equilibria(ModelParams(b, V_R, V_F), N_max))


def locate_b_e(b_lo: float = 1.0, b_hi: float = 5.0, tol: float = 1e-3,
               V_R: float = 1.0, V_F: float = 2.0, N_max: float = 20.0) -> float:
    """Bisect on ``b`` for the largest connectivity that still admits an equilibrium."""
    if root_count(b_lo, V_R, V_F, N_max) == 0:
        raise ValueError(f"no equilibrium at b_lo={b_lo}")
    while root_count(b_hi, V_R, V_F, N_max) != 0:
        b_lo, b_hi = b_hi, 2 * b_hi
    while b_hi - b_lo > tol:
        mid = 0.5 * (b_lo + b_hi)
        if root_count(mid, V_R, V_F, N_max):
            b_lo = mid
        else:
            b_hi = mid
    return 0.5 * (b_lo + b_hi)


# --- profiles -----------------------------------------------------------

def _tail_integral(u, u_top):
    """``exp(-u^2/2) int_u^{u_top} exp(s^2/2) ds`` written with Dawson's function."""
    r2 = math.sqrt(2.0)
    return r2 * (np.exp(0.5 * (u_top ** 2 - u ** 2)) * special.dawsn(u_top / r2)
                 - special.dawsn(u / r2))


def _profile_shape(v, c, params):
    """``exp(-(v-c)^2/2) int_{max(v,V_R)}^{V_F} exp((w-c)^2/2) dw``."""
    u = v - c
    uF, uR = params.V_F - c, params.V_R - c
    r2 = math.sqrt(2.0)
    above = v >= params.V_R
    out = np.empty_like(u)
    out[above] = _tail_integral(u[above], uF)
    ub = u[~above]
    out[~above] = r2 * (np.exp(0.5 * (uF ** 2 - ub ** 2)) * special.dawsn(uF / r2)
                        - np.exp(0.5 * (uR ** 2 - ub ** 2)) * special.dawsn(uR / r2))
    return out


def steady_profile(N_inf: float, params: ModelParams, grid: Grid, check: bool = True) -> np.ndarray:
    """Closed-form ``p_inf`` sampled on ``grid``, exactly zero at ``V_F``."""
    if N_inf <= 0:
        raise ValueError("stationary firing rate must be positive")
    p = N_inf * _profile_shape(grid.v, params.b * N_inf, params)
    p[-1] = 0.0
    np.maximum(p, 0.0, out=p)
    if check and p[0] > 1e-12:
        raise GridTooShortError(f"p_inf(V_min={grid.V_min:g}) = {p[0]:.3e} > 1e-12")
    return p


def steady_profile_derivative(N_inf: float, params: ModelParams, grid: Grid) -> np.ndarray:
    """``d p_inf / dv = -(v - bN) p_inf - N H(v - V_R)``, with ``H(0) = 1/2``.

    The value at the reset node is the cell average across the kink.
    """
    v = grid.v
    p = steady_profile(N_inf, params, grid, check=False)
    H = np.where(v > params.V_R, 1.0, 0.0)
    if 0 <= grid.i_R <= grid.M and abs(v[grid.i_R] - params.V_R) < 1e-12:
        H[grid.i_R] = 0.5
    return -(v - params.b * N_inf) * p - N_inf * H


def normalized_profile(N_fixed: float, params: ModelParams, grid: Grid) -> np.ndarray:
    """Unit-mass stationary state of the linear operator with drift rate ``N_fixed``."""
    shape = np.maximum(_profile_shape(grid.v, params.b * N_fixed, params), 0.0)
    shape[-1] = 0.0
    return shape / grid.trapezoid(shape)

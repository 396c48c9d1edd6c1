"""Delayed nonlinear NNLIF equation

    d_t p + d_v[(-v + b N(t - d)) p] - d_v^2 p = delta_{V_R} N(t),
    p(V_F, t) = 0,   N(t) = -d_v p(V_F, t),

with regime detection (convergence, blow-up, periodic oscillation).
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .equilibria import ModelParams, SteadyState, find_equilibria
from .grid import Grid
from .linear_pde import FiringTrace, LinearField, firing_rate

log = logging.getLogger(__name__)

N_CAP = 1e3
DOUBLING_FLOOR = 10.0


class HistoryBuffer:
    """Ring of firing-rate samples covering ``[t - d, t]``.

    Holds ``round(d/dt) + 1`` samples; :meth:`read` returns the oldest
    one, i.e. the rate at lag ``d``.
    """

    def __init__(self, d: float, dt: float, fill: float | np.ndarray = 0.0):
        self.dt = dt
        self.steps = int(round(d / dt))
        n = self.steps + 1
        vals = np.broadcast_to(np.asarray(fill, dtype=float), (n,)) if np.ndim(fill) == 0 \
            else np.asarray(fill, dtype=float)
        if vals.size != n:
            raise ValueError(f"history needs {n} samples, got {vals.size}")
        self._q = deque(vals.tolist(), maxlen=n)

    def __len__(self):
        return len(self._q)

    @property
    def d(self) -> float:
        return self.steps * self.dt

    def read(self) -> float:
        return self._q[0]

    def push(self, value: float) -> None:
        self._q.append(float(value))

    def values(self) -> np.ndarray:
        return np.array(self._q)

    def lagged(self) -> np.ndarray:
        """Samples the stepping kernel reads before any new rate is produced.

        The kernel lags by ``max(round(d/dt), 1)`` steps and needs that
        many past values, oldest first.
        """
        lag = max(self.steps, 1)
        return self.values()[-lag:]


def gaussian_profile(grid: Grid, mean: float, sd: float) -> np.ndarray:
    """Normal bump minus its mirror image about ``V_F``, unit control-volume mass.

    The image term makes the profile vanish at ``V_F`` so the initial
    firing rate is finite and does not depend on the mesh.
    """
    v = grid.v
    u = np.exp(-0.5 * ((v - mean) / sd) ** 2) - np.exp(-0.5 * ((v - (2 * grid.V_F - mean)) / sd) ** 2)
    u = np.maximum(u, 0.0)
    u[-1] = 0.0
    return u / grid.mass(u)


@dataclass
class SimConfig:
    params: ModelParams
    d: float = 0.0
    dt: float | None = None          # default dv
    T_end: float = 20.0
    dv: float = 1e-3
    grid: Grid | None = None
    V_min: float | None = None
    initial: str | np.ndarray = "gaussian"   # gaussian | concentrated | array on the grid
    history: float | np.ndarray | None = None   # default: boundary flux of the initial field
    target: SteadyState | None = None        # default: an equilibrium of params, if any
    N_cap: float = N_CAP
    doubling_floor: float = DOUBLING_FLOOR

    def resolve_grid(self) -> Grid:
        if self.grid is not None:
            return self.grid
        p = self.params
        if self.V_min is not None:
            return Grid.aligned(self.V_min, p.V_R, p.V_F, self.dv)
        # rates of order one are routine in transients and oscillations
        N_ref = 1.0 if self.target is None else max(1.0, self.target.N_inf)
        return Grid.for_model(p, N_ref, self.dv)

    @property
    def step(self) -> float:
        return self.dv if self.dt is None else self.dt


@dataclass
class RegimeReport:
    outcome: str                      # converged | blow_up | periodic | undecided
    l1_distance: float = float("nan")
    entropy: float = float("nan")
    blow_up_time: float | None = None
    period: float | None = None
    notes: dict = field(default_factory=dict)


@dataclass
class SimResult:
    trace: FiringTrace
    field: LinearField
    report: RegimeReport
    mass: np.ndarray
    umin: np.ndarray
    entropy: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self):
        t = (np.arange(self.trace.samples.size) + 1) * self.trace.dt
        return zip(t, self.trace.samples, self.mass, self.entropy)


def initial_field(cfg: SimConfig, grid: Grid) -> np.ndarray:
    p = cfg.params
    if isinstance(cfg.initial, str):
        if cfg.initial == "gaussian":
            return gaussian_profile(grid, 0.5 * (p.V_R + p.V_F), 0.25)
        if cfg.initial == "concentrated":
            return gaussian_profile(grid, p.V_F - 0.1, 0.05)
        raise ValueError(f"unknown initial profile {cfg.initial!r}")
    u = np.array(cfg.initial, dtype=float)
    if u.shape != (grid.M + 1,):
        raise ValueError("initial profile does not match grid")
    if np.any(u < 0):
        raise ValueError("initial profile must be nonnegative")
    return u


def relative_entropy(field: LinearField | np.ndarray, target: SteadyState | np.ndarray,
                     grid: Grid | None = None) -> float:
    """Trapezoid of ``(p - p_inf)^2 / p_inf`` over ``[V_min, V_F)``."""
    if isinstance(field, LinearField):
        grid, u = field.grid, field.values
    else:
        u = np.asarray(field, dtype=float)
    p_t = target.profile(grid) if isinstance(target, SteadyState) else np.asarray(target)
    w = np.full(u.size, grid.dv)
    w[0] *= 0.5
    ok = p_t > 0
    ok[-1] = False
    return float(np.sum(w[ok] * (u[ok] - p_t[ok]) ** 2 / p_t[ok]))


def detect_blow_up(trace: FiringTrace | np.ndarray, dt: float | None = None,
                   N_cap: float = N_CAP, doubling_floor: float = DOUBLING_FLOOR) -> float | None:
    """First time the rate exceeds ``N_cap`` or doubles twice in a row over 5 steps.

    The doubling test only applies once the rate is above ``doubling_floor``.
    """
    if isinstance(trace, FiringTrace):
        N, dt = trace.samples, trace.dt
    else:
        N = np.asarray(trace, dtype=float)
    for n in range(N.size):
        x = N[n]
        if not math.isfinite(x) or x > N_cap:
            return (n + 1) * dt
        if n >= 10 and N[n - 10] >= doubling_floor and x >= 2 * N[n - 5] and N[n - 5] >= 2 * N[n - 10]:
            return (n + 1) * dt
    return None


def _pearson_by_lag(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Correlation of ``x[:-k]`` with ``x[k:]`` for ``k = 0..max_lag``."""
    n = x.size
    m = 1 << int(math.ceil(math.log2(2 * n)))
    X = np.fft.rfft(x, m)
    S = np.fft.irfft(X * np.conj(X), m)[:max_lag + 1]
    c1 = np.concatenate([[0.0], np.cumsum(x)])
    c2 = np.concatenate([[0.0], np.cumsum(x * x)])
    k = np.arange(max_lag + 1)
    L = n - k
    sa, sb = c1[L], c1[n] - c1[k]
    qa, qb = c2[L], c2[n] - c2[k]
    cov = S - sa * sb / L
    va = qa - sa ** 2 / L
    vb = qb - sb ** 2 / L
    with np.errstate(invalid="ignore", divide="ignore"):
        r = cov / np.sqrt(va * vb)
    return np.where(np.isfinite(r), r, 0.0)


def detect_period(trace: FiringTrace | np.ndarray, window: float | None = None,
                  dt: float | None = None, threshold: float = 0.95) -> float | None:
    """Lag of the first autocorrelation peak above ``threshold`` after ``4 dt``.

    Works on the trailing ``window`` of the trace (all of it by default);
    the peak is refined by a parabola through its neighbours.
    """
    if isinstance(trace, FiringTrace):
        x, dt = trace.samples, trace.dt
    else:
        x = np.asarray(trace, dtype=float)
    if window is not None:
        x = x[-max(int(round(window / dt)), 8):]
    x = x - x.mean()
    if np.std(x) <= 1e-12 * max(1.0, np.max(np.abs(x))):
        return None
    max_lag = x.size // 2
    r = _pearson_by_lag(x, max_lag)
    for k in range(5, max_lag):
        if r[k] > threshold and r[k] >= r[k - 1] and r[k] >= r[k + 1]:
            den = r[k - 1] - 2 * r[k] + r[k + 1]
            off = 0.5 * (r[k - 1] - r[k + 1]) / den if den < 0 else 0.0
            return float((k + off) * dt)
    return None


def classify_regime(N: np.ndarray, dt: float, u: np.ndarray, grid: Grid, blown: bool,
                    target: SteadyState | None, ent: float) -> RegimeReport:
    rep = RegimeReport("undecided", entropy=ent)
    if target is not None:
        rep.l1_distance = float(grid.dv * np.sum(np.abs(u - target.profile(grid))[:-1]))
    if blown:
        rep.outcome = "blow_up"
        rep.blow_up_time = N.size * dt
        return rep
    tail = N[N.size // 2:]
    spread = float(np.ptp(tail)) / max(abs(float(np.mean(tail))), 1e-12)
    rep.notes["relative_spread"] = spread
    per = detect_period(tail, dt=dt) if spread > 1e-3 else None
    if per is not None:
        q = tail.size // 2
        a0, a1 = np.ptp(tail[:q]), np.ptp(tail[q:])
        rep.notes["amplitude_ratio"] = float(a1 / a0) if a0 > 0 else float("inf")
        if tail.size * dt >= 3 * per and a1 >= 0.9 * a0:
            rep.outcome, rep.period = "periodic", per
            return rep
    last = N[-max(int(round(1.0 / dt)), 2):]
    drift = float(np.ptp(last)) / max(abs(float(np.mean(last))), 1e-12)
    rep.notes["final_drift"] = drift
    if drift < 1e-4 and (target is None or rep.l1_distance < 1e-2):
        rep.outcome = "converged"
    return rep


def simulate(cfg: SimConfig) -> SimResult:
    """Run the delayed nonlinear equation and classify the outcome."""
    p = cfg.params
    if cfg.target is None:
        eqs = find_equilibria(p)
        cfg.target = eqs[0] if eqs else None
    grid = cfg.resolve_grid()
    dt = cfg.step
    u0 = initial_field(cfg, grid)
    D = int(round(cfg.d / dt))
    if cfg.history is None:
        h0 = firing_rate(LinearField(grid, u0))
        hist = HistoryBuffer(cfg.d, dt, h0)
    else:
        hist = HistoryBuffer(cfg.d, dt, cfg.history)
    n = int(round(cfg.T_end / dt))
    target = cfg.target.profile(grid) if cfg.target is not None else None
    u, N, mass, umin, ent, n_done, blown = kernels.run_nonlinear(
        u0, grid.v, p.b, dt, n, grid.i_R, D, hist.lagged(), cfg.N_cap, cfg.doubling_floor,
        target)
    for x in N[-len(hist):]:
        hist.push(x)
    e_last = float(ent[-1]) if ent.size and np.isfinite(ent[-1]) else float("nan")
    rep = classify_regime(N, dt, u, grid, blown, cfg.target, e_last)
    meta = dict(b=p.b, V_R=p.V_R, V_F=p.V_F, d_requested=cfg.d, d_actual=D * dt, dt=dt,
                dv=grid.dv, V_min=grid.V_min, one_step_lag=D == 0, steps=int(n_done),
                backend=kernels.BACKEND)
    trace = FiringTrace(dt, N, meta=meta)
    field_ = LinearField(grid, u, n_done * dt)
    return SimResult(trace, field_, rep, mass, umin, ent, meta)


def entropy_decay_rate(res: SimResult, start_frac: float = 0.25, floor: float = 1e-24) -> float:
    """Least-squares slope of ``-log(entropy)`` over the later part of the run."""
    e = res.entropy
    t = (np.arange(e.size) + 1) * res.trace.dt
    sel = (t >= start_frac * t[-1]) & np.isfinite(e) & (e > floor)
    if np.count_nonzero(sel) < 10:
        return float("nan")
    return float(-np.polyfit(t[sel], np.log(e[sel]), 1)[0])


def zero_mass_bump(grid: Grid, center: float, width: float = 0.1) -> np.ndarray:
    """Odd Gaussian-derivative bump with zero control-volume mass and sup norm 1."""
    env = np.exp(-((grid.v - center) / width) ** 2)
    env[-1] = 0.0
    u = env * (grid.v - center)
    u -= grid.mass(u) / grid.mass(env) * env
    return u / np.max(np.abs(u))


def perturbed_equilibrium(state: SteadyState, grid: Grid, u0: np.ndarray, eps: float) -> np.ndarray:
    """``p_inf + eps u0`` on the grid (``u0`` should have zero mass)."""
    return state.profile(grid) + eps * np.asarray(u0, dtype=float)

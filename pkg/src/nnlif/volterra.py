"""Volterra convolution equations of the second kind,

    f(t) = g(t) + int_0^t f(s - d) h(t - s) ds,

with a prehistory for ``f`` on ``[-d, 0]``. The marching scheme treats
``f`` as piecewise constant (left endpoint) and integrates the kernel
exactly on each cell, which handles integrable singularities such as
``t^{-3/4}`` without special casing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import kernels
from .contour import ContourError, Rect, count_zeros, find_zeros

log = logging.getLogger(__name__)

GROWTH_LIMIT = 1e12


# --- kernels -------------------------------------------------------------

class Kernel:
    """Interface: cell integrals, and the Laplace transform when known."""

    def cell_integrals(self, dt: float, n: int) -> np.ndarray:
        """``W[k-1] = int_{(k-1) dt}^{k dt} h`` for ``k = 1..n``."""
        raise NotImplementedError

    def laplace(self, s):
        return None

    def laplace_prime(self, s):
        return None

    decay: float = 0.0            # h = O(exp(-decay t))


@dataclass
class PowerExpKernel(Kernel):
    """``h(t) = c t^{-alpha} exp(-lam t)`` with ``0 <= alpha < 1``."""

    c: float
    alpha: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("need 0 <= alpha < 1 for an integrable kernel")
        self.decay = self.lam

    def _primitive(self, t):
        a1 = 1.0 - self.alpha
        if self.lam == 0.0:
            return t ** a1 / a1
        return self.lam ** (-a1) * special.gamma(a1) * special.gammainc(a1, self.lam * t)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.c * t ** (-self.alpha) * np.exp(-self.lam * t)

    def cell_integrals(self, dt, n):
        P = self._primitive(np.arange(n + 1) * dt)
        return self.c * np.diff(P)

    def laplace(self, s):
        s = np.asarray(s, dtype=complex)
        a1 = 1.0 - self.alpha
        return self.c * special.gamma(a1) * (s + self.lam) ** (-a1)

    def laplace_prime(self, s):
        s = np.asarray(s, dtype=complex)
        a1 = 1.0 - self.alpha
        return -a1 * self.c * special.gamma(a1) * (s + self.lam) ** (-a1 - 1.0)


def exp_kernel(c: float, lam: float) -> PowerExpKernel:
    """``h(t) = c exp(-lam t)``."""
    return PowerExpKernel(c, 0.0, lam)


@dataclass
class SampledKernel(Kernel):
    """Kernel known through cell averages on a grid of step ``dt``.

    An optional exponential tail ``A exp(-lam t)`` extends it beyond the
    sampled window in the transform.
    """

    dt: float
    samples: np.ndarray
    tail_A: float = 0.0
    tail_lam: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.decay = self.tail_lam

    def cell_integrals(self, dt, n):
        if abs(dt - self.dt) > 1e-12 * self.dt:
            raise ValueError("sampled kernel needs the solver step to equal its own step")
        W = np.zeros(n)
        m = min(n, self.samples.size)
        W[:m] = dt * self.samples[:m]
        if n > m and self.tail_lam > 0:
            t = np.arange(m, n + 1) * dt
            W[m:] = -np.diff(self.tail_A * np.exp(-self.tail_lam * t)) / self.tail_lam
        return W

    def _both(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        F, dF = kernels.laplace_cells(self.samples, self.dt, s)
        if self.tail_lam > 0:
            T = self.samples.size * self.dt
            z = s + self.tail_lam
            e = self.tail_A * np.exp(-z * T)
            F = F + e / z
            dF = dF - e * (T * z + 1.0) / z ** 2
        return F, dF

    def laplace(self, s):
        return self._both(s)[0]

    def laplace_prime(self, s):
        return self._both(s)[1]


@dataclass
class CallableKernel(Kernel):
    """Arbitrary ``h(t)``, integrated cell by cell with Gauss-Legendre nodes.

    The first cell uses adaptive quadrature so that integrable
    singularities at 0 are captured.
    """

    func: object
    order: int = 8

    def cell_integrals(self, dt, n):
        x, w = np.polynomial.legendre.leggauss(self.order)
        a = np.arange(n) * dt
        t = a[:, None] + 0.5 * dt * (x[None, :] + 1.0)
        W = 0.5 * dt * (np.asarray(self.func(t)) @ w)
        first, _ = integrate.quad(lambda s: float(self.func(np.array([s]))[0]), 0.0, dt,
                                  limit=200, epsabs=0.0, epsrel=1e-10)
        W[0] = first
        return W


# --- problem and solver --------------------------------------------------

def _sample(obj, t):
    if callable(obj):
        return np.asarray(obj(t), dtype=float) * np.ones_like(t)
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 0:
        return np.full_like(t, float(arr))
    if arr.size < t.size:
        raise ValueError(f"sampled forcing has {arr.size} values, need {t.size}")
    return arr[:t.size]


@dataclass
class RenewalProblem:
    g: object                      # callable, constant or samples on the solver grid
    h: Kernel
    d: float = 0.0
    prehistory: object = 0.0       # f on [-d, 0): callable, constant or samples
    g_hat: object = None           # optional transform of g
    g_poles: tuple = ()            # known poles of g_hat (for asymptotics)


@dataclass
class RenewalSolution:
    t: np.ndarray
    f: np.ndarray
    growth: bool = False
    delay_steps: int = 0
    meta: dict = field(default_factory=dict)


def solve(p: RenewalProblem, dt: float, T: float) -> RenewalSolution:
    """March ``f_n = g_n + sum_{m<n} f(t_m - d) W_{n-m}`` on ``t_n = n dt``.

    ``W_k`` is the exact integral of ``h`` over ``[(k-1) dt, k dt]``. Stops
    with ``growth=True`` once ``|f|`` exceeds ``1e12``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(T / dt))
    t = np.arange(n + 1) * dt
    g = _sample(p.g, t)
    W = p.h.cell_integrals(dt, n)
    D = int(round(p.d / dt))
    pre = _sample(p.prehistory, -dt * np.arange(D, 0, -1)) if D else np.zeros(0)
    # F[j] = f(t_{j - D}); the first D entries are the prehistory
    F = np.concatenate([pre, np.zeros(n + 1)])
    Wr = W[::-1]
    growth = False
    last = n
    for k in range(n + 1):
        # f_k = g_k + sum_{m<k} F[m] W_{k-m}; Wr[n-k:] = W_k..W_1
        F[D + k] = g[k] + (np.dot(F[:k], Wr[n - k:]) if k else 0.0)
        if abs(F[D + k]) > GROWTH_LIMIT or not math.isfinite(F[D + k]):
            growth = True
            last = k
            break
    f = F[D:D + last + 1]
    return RenewalSolution(t[:last + 1], f.copy(), growth, D)


def convolve_delayed(f_all: np.ndarray, W: np.ndarray, D: int, n: int) -> np.ndarray:
    """``sum_{m<k} f(t_m - d) W_{k-m}`` for ``k = 0..n``; ``f_all`` includes the prehistory."""
    out = np.zeros(n + 1)
    Wr = W[::-1]
    N = W.size
    for k in range(1, n + 1):
        out[k] = np.dot(f_all[:k], Wr[N - k:])
    return out


# --- comparison ----------------------------------------------------------

@dataclass
class ComparisonReport:
    ok: bool
    sub_ok: bool
    super_ok: bool
    first_violation: float | None = None     # time of first f1 > f2 + slack
    max_violation: float = 0.0


def check_comparison(f1, f2, g, h: Kernel, dt: float, d: float = 0.0,
                     pre1=None, pre2=None, slack: float = 1e-10) -> ComparisonReport:
    """Check the sub/supersolution hypotheses and the ordering ``f1 <= f2``.

    ``f1, f2, g`` are samples on ``t_n = n dt``; ``pre1, pre2`` are the
    prehistories on the ``round(d/dt)`` points before 0. Violations are
    reported, not raised. Traces of different length (a solve stopped by
    the growth guard) are compared on their common part.
    """
    m = min(len(f1), len(f2))
    f1 = np.asarray(f1, float)[:m]
    f2 = np.asarray(f2, float)[:m]
    n = f1.size - 1
    t = np.arange(n + 1) * dt
    g = _sample(g, t)
    W = h.cell_integrals(dt, n) if n else np.zeros(0)
    if np.any(W < -1e-15):
        log.warning("comparison kernel is not nonnegative")
    D = int(round(d / dt))
    p1 = np.zeros(D) if pre1 is None else _sample(pre1, -dt * np.arange(D, 0, -1))
    p2 = np.zeros(D) if pre2 is None else _sample(pre2, -dt * np.arange(D, 0, -1))
    a1 = np.concatenate([p1, f1])
    a2 = np.concatenate([p2, f2])
    scale = slack * max(1.0, np.max(np.abs(f2)))
    sub_ok = bool(np.all(f1 <= g + convolve_delayed(a1, W, D, n) + scale))
    super_ok = bool(np.all(f2 >= g + convolve_delayed(a2, W, D, n) - scale))
    pre_ok = bool(np.all(p1 <= p2 + scale))
    viol = f1 - f2 - scale
    bad = np.nonzero(viol > 0)[0]
    first = float(t[bad[0]]) if bad.size else None
    return ComparisonReport(bool(sub_ok and super_ok and pre_ok and bad.size == 0),
                            sub_ok, super_ok and pre_ok, first,
                            float(max(0.0, np.max(f1 - f2))))


def gronwall_supersolution(A: float, B: float, alpha: float):
    """``F(t) = 2 A exp(B^{1/(1-alpha)} mu t)`` with ``mu = (2 Gamma(1-alpha))^{1/(1-alpha)}``."""
    mu = (2.0 * special.gamma(1.0 - alpha)) ** (1.0 / (1.0 - alpha))
    rate = B ** (1.0 / (1.0 - alpha)) * mu
    return lambda t: 2.0 * A * np.exp(rate * np.asarray(t, dtype=float))


# --- asymptotics ---------------------------------------------------------

@dataclass
class AsymptoticsReport:
    kind: str                       # decay | growth | indeterminate
    alpha: float
    poles: list = field(default_factory=list)
    dominant: complex | None = None
    degree: int = 0                 # polynomial factor t^degree of the dominant term
    rate: float | None = None       # real part of dominant pole, or tested decay bound
    message: str = ""


def _char(p: RenewalProblem):
    hh, dh = p.h.laplace, p.h.laplace_prime
    d = p.d

    def f(s):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        return 1.0 - hh(s) * np.exp(-s * d)

    def df(s):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        e = np.exp(-s * d)
        return -(dh(s) - d * hh(s)) * e

    return f, df


def _extent(p: RenewalProblem, alpha: float, level: float = 0.5):
    """Box ``[alpha, X] x [-Y, Y]`` outside which ``|h_hat| < level``."""
    hh = p.h.laplace
    X = max(alpha + 1.0, 1.0)
    for _ in range(60):
        if abs(hh(np.array([X + 0j]))[0]) < level * 0.5:
            break
        X *= 1.5
    Y = 1.0
    ys = np.geomspace(1.0, 1e5, 300)
    for x in (alpha, 0.5 * (alpha + X), X):
        mag = np.abs(hh(x + 1j * ys))
        above = np.nonzero(mag >= level)[0]
        if above.size:
            Y = max(Y, 1.5 * ys[min(above[-1] + 1, ys.size - 1)])
    return X, Y


def classify_asymptotics(p: RenewalProblem, alpha: float = 0.0, tol: float = 1e-6) -> AsymptoticsReport:
    """Poles of ``g_hat / (1 - h_hat e^{-sd})`` with real part above ``alpha``.

    Zeros of the denominator are counted with the argument principle and
    located by box subdivision and Newton; known poles of ``g_hat`` are
    added. The dominant pole's multiplicity minus one is the degree of the
    polynomial factor in the growth. Without poles the solution decays
    like ``exp(beta t)`` for every ``beta > alpha`` tested.
    """
    if p.h.laplace(np.array([alpha + 1.0 + 0j])) is None:
        raise ValueError("kernel has no transform")
    if p.h.decay and alpha <= -p.h.decay:
        raise ValueError("abscissa left of the kernel's region of convergence")
    f, df = _char(p)
    X, Y = _extent(p, alpha)
    for shift in (0.0, 1e-3, -1e-3, 2.5e-3):
        r = Rect(alpha + shift, X, -Y, Y)
        try:
            n = count_zeros(f, r, 128, df=df)
            break
        except ContourError:
            continue
    else:
        return AsymptoticsReport("indeterminate", alpha, message="pole on the test line")
    zeros = find_zeros(f, df, r, n, min_size=0.02) if n else []
    poles = [complex(z) for z in zeros] + [complex(q) for q in p.g_poles if complex(q).real > alpha]
    if not poles:
        return AsymptoticsReport("decay", alpha, [], None, 0, alpha)
    poles.sort(key=lambda z: (-z.real, -abs(z.imag)))
    top = poles[0]
    near = [z for z in poles if abs(z - top) < 1e-4 * max(1.0, abs(top))]
    if abs(top.real - alpha) < tol:
        return AsymptoticsReport("indeterminate", alpha, poles, top, len(near) - 1, top.real,
                                 "dominant pole on the test line")
    kind = "growth" if top.real >= 0 else "decay"
    return AsymptoticsReport(kind, alpha, poles, complex(top.real, abs(top.imag)),
                             len(near) - 1, top.real)


# --- linearized reduction ------------------------------------------------

def reduction_problem(nq, u0: np.ndarray, d: float, T: float) -> RenewalProblem:
    """Renewal problem for the linearized firing rate.

    ``h = -b N_q`` (cell averages, with tail) and
    ``g = N(exp(t L_inf) u0)`` from a feedback-free run on the same grid.
    """
    from .linear_pde import evolve_flux

    tr = nq.trace
    b = nq.state.b
    h = SampledKernel(tr.dt, -b * tr.samples, -b * tr.tail_A if tr.fit_valid else 0.0,
                      tr.tail_lam if tr.fit_valid else 0.0)
    g_cells = evolve_flux(nq, u0, T)
    return RenewalProblem(np.append(g_cells, g_cells[-1]), h, d)

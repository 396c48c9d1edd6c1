"""Linear stability of equilibria with delayed feedback.

An equilibrium is linearly stable for delay ``d`` when

    Phi_d(xi) = 1 + b Nq_hat(xi) exp(-xi d)

has no zeros with ``Re xi >= 0``; ``Nq_hat`` is the Laplace transform of
the firing response ``N_q`` computed in :mod:`nnlif.linear_pde`.

Two independent counters are provided. The crossing count follows the
curve ``alpha(k) = -b Nq_hat(ik) exp(-ikd)`` for ``k > 0`` and records its
signed crossings of the ray ``(1, inf)``; the number of zeros in the right
half-plane equals ``-2`` times the balance. The argument-principle counter
winds ``Phi_d`` around a rectangle in the right half-plane.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .contour import ContourError, Rect, count_zeros, find_zeros
from .equilibria import ModelParams, SteadyState, find_equilibria
from .io import write_csv, write_pgm
from .linear_pde import FiringTrace, NqResult, compute_Nq

log = logging.getLogger(__name__)

SLOPE_TOL = 1e-3


class AbscissaError(ValueError):
    """Transform requested left of its region of convergence."""


@dataclass
class LaplaceEvaluator:
    """``Nq_hat`` from cell averages plus the fitted exponential tail."""

    trace: FiringTrace
    margin: float = 0.5

    @property
    def abscissa(self) -> float:
        lam = self.trace.tail_lam if self.trace.fit_valid else 0.0
        return -lam * (1.0 - self.margin)

    def _check(self, xi):
        if np.any(xi.real < self.abscissa - 1e-12):
            raise AbscissaError(f"Re(xi) below abscissa {self.abscissa:.3g}")

    def _tail(self, xi):
        tr = self.trace
        if not tr.fit_valid:
            return 0.0, 0.0
        s = xi + tr.tail_lam
        e = tr.tail_A * np.exp(-s * tr.T)
        return e / s, -e * (tr.T * s + 1.0) / s ** 2

    def both(self, xi):
        """``(Nq_hat(xi), Nq_hat'(xi))``."""
        xi = np.atleast_1d(np.asarray(xi, dtype=complex))
        self._check(xi)
        F, dF = kernels.laplace_cells(self.trace.samples, self.trace.dt, xi)
        t, dt_ = self._tail(xi)
        return F + t, dF + dt_

    def __call__(self, xi):
        return self.both(xi)[0]

    def derivative(self, xi):
        return self.both(xi)[1]

    def abs_integral(self) -> float:
        return self.trace.integral(absolute=True)


def laplace_Nq(ev: LaplaceEvaluator, xi):
    """``int_0^inf exp(-xi t) N_q(t) dt``; scalar in, scalar out."""
    out = ev(xi)
    return complex(out[0]) if np.ndim(xi) == 0 else out


def phi_d(ev: LaplaceEvaluator, b: float, d: float, xi):
    """``1 + b Nq_hat(xi) exp(-xi d)``."""
    xi_a = np.atleast_1d(np.asarray(xi, dtype=complex))
    out = 1.0 + b * ev(xi_a) * np.exp(-xi_a * d)
    return complex(out[0]) if np.ndim(xi) == 0 else out


def phi_d_prime(ev: LaplaceEvaluator, b: float, d: float, xi):
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    F, dF = ev.both(xi)
    return b * np.exp(-xi * d) * (dF - d * F)


# --- crossing count ------------------------------------------------------

def choose_k_max(ev: LaplaceEvaluator, b: float, level: float = 0.5,
                 k_hi: float | None = None) -> float:
    """Smallest ``K`` with ``|b Nq_hat(ik)| < level`` on a log grid beyond it."""
    if b == 0.0:
        return 1.0
    if k_hi is None:
        k_hi = 0.3 / ev.trace.dt
    k = np.geomspace(1e-2, k_hi, 400)
    mag = np.abs(b * ev(1j * k))
    above = np.nonzero(mag >= level)[0]
    if above.size == 0:
        return 1.0
    if above[-1] == k.size - 1:
        log.warning("|b Nq_hat(ik)| still above %.2g at k=%.3g", level, k_hi)
        return float(k_hi)
    return float(max(1.0, 1.2 * k[above[-1] + 1]))


@dataclass
class CrossingResult:
    balance: int
    crossings: list = field(default_factory=list)   # (k, Re alpha, orientation)
    critical: bool = False
    k_max: float = 0.0


def _alpha(ev, b, d, k):
    return -b * ev(1j * k) * np.exp(-1j * k * d)


def crossing_count(ev: LaplaceEvaluator, b: float, d: float, k_max: float | None = None,
                   refinement: int = 10, tol: float = 1e-6) -> CrossingResult:
    """Signed crossings of ``alpha(k)`` through ``(1, inf)`` for ``k > 0``.

    Orientation is ``+1`` when ``Im alpha`` increases through the ray.
    A balance ``B`` corresponds to ``-2B`` zeros of ``Phi_d`` with positive
    real part, so a negative balance means instability.
    """
    if b == 0.0:
        return CrossingResult(0, [], False, 0.0)
    if k_max is None:
        k_max = choose_k_max(ev, b)
    h = 0.05 if d <= 0 else min(0.05, math.pi / (20.0 * d))
    n = max(int(math.ceil(k_max / h)), 2)
    k = np.linspace(0.0, k_max, n + 1)[1:]
    a = _alpha(ev, b, d, k)
    im = a.imag
    idx = np.nonzero(np.sign(im[1:]) != np.sign(im[:-1]))[0]
    out = []
    critical = False
    for i in idx:
        kk = np.linspace(k[i], k[i + 1], refinement + 1)
        aa = _alpha(ev, b, d, kk)
        j = np.nonzero(np.sign(aa.imag[1:]) != np.sign(aa.imag[:-1]))[0]
        for jj in j:
            # linear interpolation of the real part at the Im zero
            y0, y1 = aa.imag[jj], aa.imag[jj + 1]
            s = y0 / (y0 - y1) if y0 != y1 else 0.5
            re = aa.real[jj] + s * (aa.real[jj + 1] - aa.real[jj])
            if abs(re - 1.0) < max(tol, 1e-2 * abs(aa[jj + 1] - aa[jj])):
                critical = True
            if re > 1.0:
                out.append((float(kk[jj] + s * (kk[jj + 1] - kk[jj])), float(re),
                            1 if y1 > y0 else -1))
    return CrossingResult(int(sum(o[2] for o in out)), out, critical, float(k_max))


# --- argument principle --------------------------------------------------

def sigma_max(ev: LaplaceEvaluator, b: float, S: float, level: float = 0.5) -> float:
    """Real part beyond which ``|b Nq_hat| < level``, bounded via ``int |N_q| e^{-sigma t}``."""
    sig = 2.0 * max(1.0, S)
    tr = ev.trace
    absN = np.abs(tr.samples)
    tA = abs(tr.tail_A) if tr.fit_valid else 0.0
    for _ in range(60):
        w = (1.0 - math.exp(-sig * tr.dt)) / sig
        bound = w * np.sum(absN * np.exp(-sig * tr.dt * np.arange(absN.size)))
        bound += tA * math.exp(-(sig + tr.tail_lam) * tr.T) / (sig + tr.tail_lam)
        if abs(b) * bound < level:
            return sig
        sig *= 1.5
    return sig


@dataclass
class ZeroCount:
    count: int | None
    rect: Rect | None
    nudges: int = 0
    message: str = ""


def count_zeros_rhp(ev: LaplaceEvaluator, b: float, d: float, S: float | None = None,
                    k_max: float | None = None, n_side: int = 128) -> ZeroCount:
    """Zeros of ``Phi_d`` in ``[0, sigma_max] x [-K, K]`` by the argument principle.

    The left edge sits on the imaginary axis (zeros with small negative
    real part are legitimate stable modes and must not be counted). If
    the contour hits a zero the edges are nudged up to three times;
    after that the count is reported as indeterminate (``None``).
    """
    if b == 0.0:
        return ZeroCount(0, None)
    if S is None:
        S = float(-b * ev(0.0)[0].real)
    K = choose_k_max(ev, b) if k_max is None else k_max
    sig = sigma_max(ev, b, S)
    f = lambda z: phi_d(ev, b, d, z)
    df = lambda z: phi_d_prime(ev, b, d, z)
    nudge = [(0.0, 1.0), (1e-3, 1.05), (-1e-3, 1.1), (2.5e-3, 1.15)]
    msg = ""
    for i, (dx, kf) in enumerate(nudge):
        r = Rect(dx, sig, -K * kf, K * kf)
        try:
            return ZeroCount(count_zeros(f, r, n_side, df=df), r, i)
        except ContourError as exc:
            msg = str(exc)
    return ZeroCount(None, None, len(nudge), msg)


def dominant_zero(ev: LaplaceEvaluator, b: float, d: float, zc: ZeroCount) -> complex | None:
    """Right-most zero inside the counting rectangle (``Im >= 0`` representative)."""
    if not zc.count or zc.rect is None:
        return None
    f = lambda z: phi_d(ev, b, d, z)
    df = lambda z: phi_d_prime(ev, b, d, z)
    try:
        zs = find_zeros(f, df, zc.rect, zc.count, min_size=0.02, n_side=64)
    except ContourError:
        return None
    zs = sorted(zs, key=lambda z: (-round(z.real, 8), -z.imag))
    return complex(zs[0].real, abs(zs[0].imag))


# --- verdicts ------------------------------------------------------------

@dataclass
class StabilityVerdict:
    b: float
    d: float
    verdict: str                    # stable | unstable | critical | indeterminate | no-equilibrium
    rule_fired: str = ""            # thm14_pt1 | thm14_pt2 | Qk_crossings | argument_principle
    crossing_balance: int | None = None
    zero_count_rhp: int | None = None
    dominant_zero: complex | None = None
    slope_S: float = float("nan")
    evidence: dict = field(default_factory=dict)

    def row(self):
        z = self.dominant_zero
        return [self.b, self.d, self.verdict, self.rule_fired,
                "" if self.crossing_balance is None else self.crossing_balance,
                "" if self.zero_count_rhp is None else self.zero_count_rhp,
                "" if z is None else z.real, "" if z is None else z.imag]


MAP_HEADER = ["b", "d", "verdict", "rule_fired", "crossing_balance", "zero_count",
              "dominant_zero_re", "dominant_zero_im"]


@dataclass
class Analysis:
    """Per-equilibrium data shared by every delay."""

    state: SteadyState
    nq: NqResult
    ev: LaplaceEvaluator
    S: float
    abs_int: float
    k_max: float


def analyse(state: SteadyState, dv: float = 1e-3, T_end: float = 20.0) -> Analysis:
    nq = compute_Nq(state, dv=dv, T_end=T_end)
    ev = LaplaceEvaluator(nq.trace)
    k_max = choose_k_max(ev, state.b)
    return Analysis(state, nq, ev, state.slope_S, ev.abs_integral(), k_max)


def classify(state: SteadyState | Analysis, d: float, tol: float = SLOPE_TOL,
             full_evidence: bool = False, locate: bool = True) -> StabilityVerdict:
    """Stability of ``state`` for delay ``d``.

    Cascade: slope within ``tol`` of +-1 is critical; ``S > 1`` is unstable
    for every delay; ``|b| int |N_q| < 1`` is stable for every delay;
    otherwise a nonzero crossing balance means unstable, and a zero
    balance leaves the decision to the argument principle.
    ``full_evidence`` runs both counters whatever rule fires; ``locate``
    refines the dominant zero of unstable cells.
    """
    an = state if isinstance(state, Analysis) else analyse(state)
    b, S = an.state.b, an.S
    V = StabilityVerdict(b, d, "indeterminate", slope_S=S,
                         evidence=dict(abs_int=an.abs_int, k_max=an.k_max,
                                       sign_changes=an.nq.trace.sign_changes()))

    def run_crossings():
        cr = crossing_count(an.ev, b, d, an.k_max)
        V.crossing_balance = cr.balance
        V.evidence["crossings"] = cr.crossings
        V.evidence["crossing_critical"] = cr.critical
        return cr

    def run_zeros():
        zc = count_zeros_rhp(an.ev, b, d, S, an.k_max)
        V.zero_count_rhp = zc.count
        V.evidence["nudges"] = zc.nudges
        if zc.count is None:
            V.evidence["contour"] = zc.message
        elif zc.count > 0 and locate:
            V.dominant_zero = dominant_zero(an.ev, b, d, zc)
        return zc

    if abs(S - 1.0) <= tol or abs(S + 1.0) <= tol:
        V.verdict, V.rule_fired = "critical", ""
    elif S > 1.0 + tol:
        V.verdict, V.rule_fired = "unstable", "thm14_pt1"
    elif abs(b) * an.abs_int < 1.0 - tol:
        V.verdict, V.rule_fired = "stable", "thm14_pt2"
    else:
        cr = run_crossings()
        if cr.balance != 0:
            V.verdict, V.rule_fired = "unstable", "Qk_crossings"
            if locate:
                run_zeros()
        else:
            zc = run_zeros()
            V.rule_fired = "argument_principle"
            if zc.count is None:
                V.verdict = "indeterminate"
            elif cr.critical and zc.count == 0:
                V.verdict = "critical"
            else:
                V.verdict = "unstable" if zc.count > 0 else "stable"
    if full_evidence:
        if V.crossing_balance is None:
            run_crossings()
        if V.zero_count_rhp is None and "nudges" not in V.evidence:
            run_zeros()
    return V


# --- map sweep -----------------------------------------------------------

PGM_VALUE = {"stable": 0, "unstable": 255, "critical": 128, "indeterminate": 128,
             "no-equilibrium": 128}


@dataclass
class StabilityMap:
    b_values: np.ndarray
    d_values: np.ndarray
    cells: list            # cells[i_d][i_b] -> StabilityVerdict
    S_curve: list          # (b, branch, S)

    def verdicts(self) -> np.ndarray:
        return np.array([[c.verdict for c in row] for row in self.cells])

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        rows = [c.row() for row in self.cells for c in row]
        f1 = write_csv(out_dir / "stability_map.csv", MAP_HEADER, rows)
        f2 = write_pgm(out_dir / "stability_map.pgm",
                       [[PGM_VALUE[c.verdict] for c in row] for row in self.cells])
        f3 = write_csv(out_dir / "S_curve.csv", ["b", "branch", "S"], self.S_curve)
        return [f1, f2, f3]


def _column(args):
    b, d_values, params, dv, T_end, full_evidence = args
    states = find_equilibria(params.with_b(b))
    curve = [(b, s.branch, s.slope_S) for s in states]
    if not states:
        return [StabilityVerdict(b, d, "no-equilibrium") for d in d_values], curve
    an = analyse(states[0], dv=dv, T_end=T_end)
    return [classify(an, d, full_evidence=full_evidence) for d in d_values], curve


def stability_map(b_range, d_range, resolution, params: ModelParams | None = None,
                  dv: float = 1e-3, T_end: float = 20.0, threads: int = 1,
                  full_evidence: bool = False) -> StabilityMap:
    """Verdicts on an ``n_b x n_d`` grid (lower branch when two equilibria exist).

    ``resolution = (n_b, n_d)``. One ``N_q`` trace is computed per ``b``
    column and reused for every delay; columns run in a process pool when
    ``threads > 1`` and are gathered in index order.
    """
    params = params or ModelParams(0.0)
    n_b, n_d = resolution
    b_values = np.linspace(b_range[0], b_range[1], n_b)
    d_values = np.linspace(d_range[0], d_range[1], n_d)
    jobs = [(float(b), d_values, params, dv, T_end, full_evidence) for b in b_values]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(_column, jobs))
    else:
        cols = [_column(j) for j in jobs]
    cells = [[cols[i][0][j] for i in range(n_b)] for j in range(n_d)]
    curve = [row for _, c in cols for row in c]
    return StabilityMap(b_values, d_values, cells, curve)

import math

import numpy as np
import pytest
from scipy import optimize

from nnlif.contour import ContourError, Rect, count_zeros, find_zeros
from nnlif.equilibria import ModelParams, find_equilibria
from nnlif.linear_pde import FiringTrace, fit_tail
from nnlif.spectral_stability import (AbscissaError, LaplaceEvaluator, analyse, classify,
                                      count_zeros_rhp, crossing_count, dominant_zero, phi_d,
                                      phi_d_prime, stability_map)


def exp_trace(dt=1e-3, T=30.0):
    """Exact cell averages of exp(-t)."""
    edges = np.arange(int(round(T / dt)) + 1) * dt
    return fit_tail(FiringTrace(dt, -np.diff(np.exp(-edges)) / dt))


@pytest.fixture(scope="module")
def ev_exp():
    return LaplaceEvaluator(exp_trace())


@pytest.fixture(scope="module")
def an_m12():
    return analyse(find_equilibria(ModelParams(-12.0))[0])


def test_transform_of_exponential(ev_exp):
    # piecewise-constant cells: O(dt^2) error
    for xi in (1.0, 0.3 + 2j, 2.0 - 0.5j):
        assert complex(ev_exp(xi)[0]) == pytest.approx(1.0 / (xi + 1.0), abs=1e-7)


def test_transform_at_zero_is_integral(ev_exp):
    assert ev_exp(0.0)[0].real == pytest.approx(ev_exp.trace.integral(), rel=1e-12)


def test_conjugate_symmetry_and_derivative(an_m12):
    ev = an_m12.ev
    xi = np.array([0.1 + 0.7j, 0.02 + 3.0j])
    np.testing.assert_allclose(ev(np.conj(xi)), np.conj(ev(xi)), atol=1e-12)
    h = 1e-6
    fd = (ev(xi + h) - ev(xi - h)) / (2 * h)
    np.testing.assert_allclose(ev.derivative(xi), fd, rtol=1e-6)
    fd = (phi_d(ev, -12.0, 2.0, xi + h) - phi_d(ev, -12.0, 2.0, xi - h)) / (2 * h)
    np.testing.assert_allclose(phi_d_prime(ev, -12.0, 2.0, xi), fd, rtol=1e-6)


def test_abscissa_enforced(ev_exp):
    assert ev_exp.abscissa == pytest.approx(-0.5, rel=1e-6)
    with pytest.raises(AbscissaError):
        ev_exp(-0.8)


def test_phi_without_coupling_is_one(ev_exp):
    assert phi_d(ev_exp, 0.0, 1.0, 0.5 + 1j) == 1.0


def test_synthetic_counters_agree(ev_exp):
    # Phi = 1 + 3 exp(-xi d) / (xi + 1): stable at d = 0, unstable pairs for d = 5
    z0 = count_zeros_rhp(ev_exp, 3.0, 0.0, S=-3.0)
    assert z0.count == 0 and crossing_count(ev_exp, 3.0, 0.0).balance == 0
    zc = count_zeros_rhp(ev_exp, 3.0, 5.0, S=-3.0)
    cr = crossing_count(ev_exp, 3.0, 5.0)
    assert zc.count > 0 and zc.count == -2 * cr.balance
    z = dominant_zero(ev_exp, 3.0, 5.0, zc)
    assert z.real > 0
    exact = 1.0 + 3.0 * np.exp(-5.0 * z) / (z + 1.0)
    assert abs(exact) < 1e-7


def test_no_crossings_for_weak_coupling():
    an = analyse(find_equilibria(ModelParams(0.1))[0], dv=2e-3)
    assert crossing_count(an.ev, 0.1, 1.0).balance == 0
    assert classify(an, 1.0).verdict == "stable"


def test_rule_cascade_examples():
    v = classify(find_equilibria(ModelParams(0.5))[0], 1.0)
    assert (v.verdict, v.rule_fired) == ("stable", "thm14_pt2")
    hi = find_equilibria(ModelParams(1.2))[1]
    for d in (0.0, 2.0):
        v = classify(hi, d)
        assert (v.verdict, v.rule_fired) == ("unstable", "thm14_pt1")


def test_finite_threshold_at_strong_inhibition(an_m12):
    assert classify(an_m12, 2.0).verdict == "stable"
    v = classify(an_m12, 6.0, full_evidence=True)
    assert v.verdict == "unstable"
    assert v.zero_count_rhp == -2 * v.crossing_balance == 2
    assert v.dominant_zero.real > 0
    # oscillation period of the growing mode is a little above twice the delay
    assert 2.0 < 2 * math.pi / v.dominant_zero.imag / 6.0 < 2.4


def test_small_delay_continuity(an_m12):
    assert classify(an_m12, 0.0).verdict == classify(an_m12, 0.05).verdict == "stable"


def test_critical_slope_flagged():
    b_star = optimize.brentq(lambda b: find_equilibria(ModelParams(b))[0].slope_S + 1.0,
                             -10.0, -9.0, xtol=1e-9)
    v = classify(find_equilibria(ModelParams(b_star))[0], 0.0)
    assert v.verdict == "critical"


def test_map_columns_and_no_equilibrium():
    m = stability_map((2.5, 3.0), (0.0, 1.0), (2, 2), dv=4e-3)
    assert set(m.verdicts().ravel()) == {"no-equilibrium"}
    assert m.S_curve == []


# --- contour utilities -----------------------------------------------------------

def poly():
    roots = [0.5, 1.0 + 1.0j, 1.0 - 1.0j, -2.0]
    f = lambda z: np.prod([np.asarray(z) - r for r in roots], axis=0)
    df = lambda z: sum(np.prod([np.asarray(z) - r for j, r in enumerate(roots) if j != i], axis=0)
                       for i in range(len(roots)))
    return f, df


def test_count_and_locate_polynomial_zeros():
    f, df = poly()
    r = Rect(0.0, 2.0, -2.0, 2.0)
    assert count_zeros(f, r, 64, df=df) == 3
    zs = sorted(find_zeros(f, df, r), key=lambda z: (z.real, z.imag))
    np.testing.assert_allclose(zs, [0.5, 1 - 1j, 1 + 1j], atol=1e-10)


def test_contour_through_zero_raises():
    f, df = poly()
    with pytest.raises(ContourError):
        count_zeros(f, Rect(0.5, 2.0, -0.5, 0.5), 64, df=df)

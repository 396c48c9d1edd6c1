import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnlif.equilibria import (EvaluationError, GridTooShortError, ModelParams, eval_I, eval_dIdN,
                              find_equilibria, locate_b_e, log_R, steady_profile,
                              steady_profile_derivative)
from nnlif.grid import Grid


def iterated_riemann_I(N, b, V_R=1.0, V_F=2.0, h=2e-4):
    """Double integral in its original order: inner w-integral by cumulative
    trapezoid, outer v-integral by trapezoid, lower limit cut 12 sd out."""
    c = b * N
    w = np.linspace(V_R, V_F, int(round((V_F - V_R) / h)) + 1)
    e = np.exp((w - c) ** 2 / 2)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (e[1:] + e[:-1]) * np.diff(w))])
    F = cum[-1] - cum                       # int_w^{V_F}
    lo = min(c, V_R) - 12.0
    v = np.linspace(lo, V_R, int(round((V_R - lo) / h)) + 1)
    return np.trapezoid(np.exp(-(v - c) ** 2 / 2), v) * F[0] + np.trapezoid(np.exp(-(w - c) ** 2 / 2) * F, w)


@pytest.mark.parametrize("N,b", [(1.0, 0.0), (0.5, -5.0), (0.7, 1.2), (0.3, 2.0), (2.0, -1.0)])
def test_I_matches_double_integral(N, b):
    assert eval_I(N, ModelParams(b)) == pytest.approx(iterated_riemann_I(N, b), rel=1e-6)


def test_I_independent_of_N_without_coupling():
    p = ModelParams(0.0)
    vals = [eval_I(N, p) for N in (0.0, 0.1, 1.0, 7.0)]
    assert np.ptp(vals) < 1e-14 * vals[0]


def test_log_R_matches_naive_form():
    from scipy.special import ndtr
    x = np.linspace(-8, 8, 33)
    naive = np.sqrt(2 * np.pi) * np.exp(x ** 2 / 2) * ndtr(x)
    np.testing.assert_allclose(np.exp(log_R(x)), naive, rtol=1e-12)
    assert np.isfinite(log_R(-1e4)) and np.isfinite(log_R(30.0))


def _fd(N, p, h=1e-5):
    return (eval_I(N + h, p) - eval_I(N - h, p)) / (2 * h)


@pytest.mark.parametrize("N,b", [(0.5, -5.0), (0.3, 2.0)])
def test_dIdN_against_finite_differences(N, b):
    p = ModelParams(b)
    assert eval_dIdN(N, p) == pytest.approx(_fd(N, p), rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(b=st.floats(-10.0, 1.5), N=st.floats(0.05, 3.0))
def test_dIdN_random(b, N):
    p = ModelParams(b)
    ref = _fd(N, p, h=1e-5 * max(1.0, N))
    assert eval_dIdN(N, p) == pytest.approx(ref, rel=1e-5, abs=1e-9 * abs(eval_I(N, p)))


def test_strong_inhibition_handled_in_log_form():
    from nnlif.equilibria import log_I
    p = ModelParams(-15.0)
    assert math.isfinite(log_I(20.0, p))
    (s,) = find_equilibria(p)
    assert s.residual <= 1e-10


def test_overflow_reported_instead_of_inf():
    with pytest.raises(EvaluationError):
        eval_I(20.0, ModelParams(-15.0))


def test_invalid_arguments():
    with pytest.raises(ValueError):
        ModelParams(0.0, V_R=2.0, V_F=1.0)
    with pytest.raises(ValueError):
        eval_I(-1.0, ModelParams(0.0))
    with pytest.raises(ValueError):
        find_equilibria(ModelParams(0.0), N_max=0.0)


@pytest.mark.parametrize("b,n", [(-5.0, 1), (0.0, 1), (1.0, 1), (1.2, 2), (1.5, 2), (3.0, 0)])
def test_root_counts_and_residuals(b, n):
    states = find_equilibria(ModelParams(b))
    assert len(states) == n
    for s in states:
        assert s.residual <= 1e-10
        assert s.N_inf * eval_I(s.N_inf, s.params) == pytest.approx(1.0, abs=1e-10)


def test_two_branches_are_tagged_and_ordered():
    lo, hi = find_equilibria(ModelParams(1.2))
    assert (lo.branch, hi.branch) == ("lower", "higher")
    assert lo.N_inf < hi.N_inf
    assert lo.slope_S < 1.0 < hi.slope_S


def test_unique_branch_slope_sign():
    (s,) = find_equilibria(ModelParams(-9.4))
    assert s.branch == "unique"
    assert s.slope_S == pytest.approx(-1.0, abs=0.05)
    (s,) = find_equilibria(ModelParams(0.5))
    assert 0 < s.slope_S < 1


def test_b_e_brackets_root_loss():
    b_e = locate_b_e(tol=1e-4)
    assert len(find_equilibria(ModelParams(b_e - 1e-3))) == 2
    assert len(find_equilibria(ModelParams(b_e + 1e-3))) == 0


def test_hidden_root_pair_recovered_near_fold():
    states = find_equilibria(ModelParams(2.1005))
    assert len(states) == 2
    assert states[1].N_inf - states[0].N_inf < 0.1


@pytest.mark.parametrize("b", [-5.0, 0.5, 1.2])
def test_profile_boundary_mass_sign(b):
    s = find_equilibria(ModelParams(b))[0]
    g = Grid.for_model(s.params, s.N_inf, 1e-3)
    p = steady_profile(s.N_inf, s.params, g)
    assert p[-1] == 0.0
    assert np.all(p >= 0)
    assert g.trapezoid(p) == pytest.approx(1.0, abs=1e-8)
    # flux at V_F equals the rate
    dp = steady_profile_derivative(s.N_inf, s.params, g)
    assert -dp[-1] == pytest.approx(s.N_inf, rel=1e-12)


def test_profile_derivative_matches_differences():
    s = find_equilibria(ModelParams(-2.0))[0]
    g = Grid.for_model(s.params, s.N_inf, 1e-3)
    p = steady_profile(s.N_inf, s.params, g)
    dp = steady_profile_derivative(s.N_inf, s.params, g)
    fd = np.gradient(p, g.dv)
    away = np.abs(g.v - 1.0) > 0.01
    np.testing.assert_allclose(dp[away][1:-1], fd[away][1:-1], atol=1e-5)


def test_short_grid_rejected():
    s = find_equilibria(ModelParams(0.5))[0]
    with pytest.raises(GridTooShortError):
        steady_profile(s.N_inf, s.params, Grid.aligned(-1.5, 1.0, 2.0, 1e-2))

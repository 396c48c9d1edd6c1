import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnlif import kernels
from nnlif.grid import Grid
from nnlif.nonlinear_pde import gaussian_profile

PY = kernels.get_backend("python")
try:
    CY = kernels.get_backend("cython")
except ImportError:            # extension not built
    CY = None

needs_ext = pytest.mark.skipif(CY is None, reason="compiled extension not built")


@pytest.fixture(scope="module")
def setup():
    g = Grid.aligned(-4.0, 1.0, 2.0, 0.01)
    u0 = gaussian_profile(g, 1.5, 0.2)
    return g, u0


@needs_ext
def test_fixed_drift_backends_agree(setup):
    g, u0 = setup
    prof = np.sin(g.v)
    args = (u0, g.v, -0.7, 0.01, 300, g.i_R)
    kw = dict(fb_coef=2.0, fb_profile=prof, fb_half=0.01, delay_steps=20,
              history=np.linspace(0, 1, 20))
    for a, b in zip(PY.run_fixed_drift(*args, **kw), CY.run_fixed_drift(*args, **kw)):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@needs_ext
def test_nonlinear_backends_agree(setup):
    g, u0 = setup
    target = gaussian_profile(g, 0.5, 0.5)
    a = PY.run_nonlinear(u0, g.v, -2.0, 0.01, 300, g.i_R, 15, np.full(15, 0.3), 1e3, 10.0, target)
    b = CY.run_nonlinear(u0, g.v, -2.0, 0.01, 300, g.i_R, 15, np.full(15, 0.3), 1e3, 10.0, target)
    assert a[5:] == b[5:]
    for x, y in zip(a[:5], b[:5]):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


@needs_ext
def test_laplace_backends_agree():
    vals = np.cos(np.arange(500) * 0.05) * np.exp(-np.arange(500) * 0.01)
    xi = np.array([0.0, 1e-7 + 1j, 0.3 - 2j, 5.0])
    for a, b in zip(PY.laplace_cells(vals, 0.02, xi), CY.laplace_cells(vals, 0.02, xi)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_history_length_checked(setup):
    g, u0 = setup
    for mod in filter(None, (PY, CY)):
        with pytest.raises(ValueError):
            mod.run_nonlinear(u0, g.v, -2.0, 0.01, 5, g.i_R, 4, np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-50, 50))
def test_bernoulli_identity(x):
    # B(x) - B(-x) = -x keeps the fitted flux exact for constant drift
    bx, bm = kernels.bernoulli(np.array([x, -x]))
    assert bx - bm == pytest.approx(-x, abs=1e-12 * max(1.0, abs(x)))
    assert bx > 0


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-20.0, 3.0), dt=st.floats(1e-3, 0.2), mu=st.floats(-2.0, 1.9))
def test_scheme_conserves_mass_and_positivity(c, dt, mu):
    g = Grid.aligned(min(c, 1.0) - 6.0, 1.0, 2.0, 0.02)
    u0 = gaussian_profile(g, mu, 0.1)
    u, N, mass = kernels.run_fixed_drift(u0, g.v, c, dt, 20, g.i_R)
    np.testing.assert_allclose(mass, 1.0, atol=1e-12)
    assert u.min() >= -1e-15 and np.all(N >= -1e-15)

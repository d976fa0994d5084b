import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.interpolate import PPoly

from delaysplit import _pieces

coef = arrays(np.float64, (4, 5), elements=st.floats(-10, 10))


@given(c=coef)
def test_sup_abs_dominates_dense_sampling_and_is_attained(c):
    x = np.array([-1.0, -0.7, -0.4, -0.35, 0.1, 0.5])
    pp = PPoly(c, x)
    s = np.linspace(x[0], x[-1], 20001)
    dense = np.abs(pp(s)).max()
    exact = float(_pieces.sup_abs(x, c))
    assert exact >= dense - 1e-12 * max(1.0, dense)
    # a cubic moves at most |p'| * spacing between samples
    slope = np.abs(pp(s, nu=1)).max()
    assert exact <= dense + 2 * slope * (s[1] - s[0]) + 1e-12


@given(c=coef, cuts=st.lists(st.floats(-0.99, 0.49), max_size=6))
def test_taylor_refinement_is_exact(c, cuts):
    x = np.array([-1.0, -0.7, -0.4, -0.35, 0.1, 0.5])
    pp = PPoly(c, x)
    nx = _pieces.merge_breaks(x, cuts)
    q = PPoly(_pieces.taylor_coeffs(pp, nx), nx)
    s = np.linspace(-1, 0.5, 301)
    assert np.allclose(q(s), pp(s), atol=1e-9 * (1 + np.abs(c).max()))


def test_merge_breaks_keeps_right_end_and_drops_duplicates():
    x = _pieces.merge_breaks([0.0, 1.0], [0.5, 0.5 + 1e-15, 1.0])
    assert list(x) == [0.0, 0.5, 1.0]


def test_hermite_and_linear_coefficients():
    x = np.array([0.0, 1.0, 3.0])
    f = lambda t: t**3 - 2 * t
    df = lambda t: 3 * t**2 - 2
    pp = PPoly(_pieces.hermite_coeffs(x, f(x), df(x)), x)
    s = np.linspace(0, 3, 31)
    assert np.allclose(pp(s), f(s))  # cubic reproduced exactly
    lin = PPoly(_pieces.linear_coeffs(x, np.array([1.0, 3.0, -1.0])), x)
    assert np.allclose(lin([0.5, 2.0]), [2.0, 1.0])


def test_restrict_clips_domain():
    x = np.linspace(0, 1, 5)
    pp = PPoly(_pieces.linear_coeffs(x, x**2), x)
    q = _pieces.restrict(pp, 0.1, 0.6)
    assert q.x[0] == 0.1 and q.x[-1] == 0.6
    assert np.allclose(q([0.1, 0.3, 0.6]), pp([0.1, 0.3, 0.6]))

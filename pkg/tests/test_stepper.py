import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from delaysplit.errors import DimensionError, WindowError
from delaysplit.harness import random_kernel
from delaysplit.model import (
    DelayKernel, Density, DiscreteTerm, HistorySegment, MatrixCoefficient, Profile, lag_zero, scalar_delay,
    zero_kernel,
)
from delaysplit.stepper import evolve_segment, integrate, integrate_batch


def cubic_history(r, n=1, coeffs=(0.3, -0.2, 0.5, 1.0)):
    """Exact cubic on [-r, 0] stored with exact Hermite data."""
    a, b, c, d = coeffs
    th = np.linspace(-r, 0, 17)
    vals = a * th**3 + b * th**2 + c * th + d
    slopes = 3 * a * th**2 + 2 * b * th + c
    return HistorySegment.from_values(r, np.tile(vals[:, None], (1, n)), np.tile(slopes[:, None], (1, n)))


def test_zero_kernel_holds_phi0():
    sol = integrate(zero_kernel(2, 0.1), 0.0, HistorySegment.constant(0.1, [1.5, -2.0]), 1.0)
    assert np.allclose(sol(np.linspace(0, 1, 11)), [1.5, -2.0])


def test_lag_zero_matches_exponential():
    sol = integrate(lag_zero([[0.7]], 0.1), 0.0, HistorySegment.constant(0.1, [1.0]), 2.0)
    t = np.linspace(0, 2, 21)
    assert np.allclose(sol(t)[:, 0], np.exp(0.7 * t), rtol=1e-10)


def test_method_of_steps_polynomial_oracle():
    # x' = -a x(t - r), phi = 1: x = 1 - a t on [0, r], then + a^2 (t - r)^2 / 2 on [r, 2r]
    a, r = 2.0, 0.1
    sol = integrate(scalar_delay(a, r), 0.0, HistorySegment.constant(r, [1.0]), 2 * r)
    t1 = np.linspace(0, r, 9)
    t2 = np.linspace(r, 2 * r, 9)
    assert np.allclose(sol(t1)[:, 0], 1 - a * t1, atol=1e-13)
    assert np.allclose(sol(t2)[:, 0], 1 - a * t2 + a**2 * (t2 - r) ** 2 / 2, atol=1e-13)


def test_density_against_augmented_ode():
    # x' = c * int_{-r}^0 x(t + s) ds with phi = 1 becomes, on [0, r],
    # x' = c (r - t + y), y' = x with y = int_0^t x
    c, r = 1.5, 0.2
    k = DelayKernel(1, r, c * r, (), Density(MatrixCoefficient.of([[c]])))
    sol = integrate(k, 0.0, HistorySegment.constant(r, [1.0]), r)
    ref = solve_ivp(lambda t, z: [c * (r - t + z[1]), z[0]], (0, r), [1.0, 0.0], rtol=1e-13, atol=1e-14,
                    dense_output=True)
    t = np.linspace(0, r, 11)
    assert np.allclose(sol(t)[:, 0], ref.sol(t)[0], atol=1e-11)


def test_time_varying_coefficient_against_ode():
    # x' = sin(t) x(t) posed as a delay equation: x = exp(1 - cos t)
    k = DelayKernel(1, 0.1, 1.0, (DiscreteTerm(0.0, MatrixCoefficient.of([[1.0]], Profile("sin", amp=1.0))),))
    sol = integrate(k, 0.0, HistorySegment.constant(0.1, [1.0]), 3.0)
    t = np.linspace(0, 3, 13)
    assert np.allclose(sol(t)[:, 0], np.exp(1 - np.cos(t)), rtol=1e-9)


def test_fourth_order_convergence_on_smooth_kernel():
    k = random_kernel(101, mer=(0.1, 0.6))
    phi = cubic_history(k.r, k.dim)
    T = 20 * k.r
    ref = integrate(k, 0.0, phi, T, max_step=k.r / 256)(T)
    errs = [np.abs(integrate(k, 0.0, phi, T, max_step=k.r / d)(T) - ref).max() for d in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.5, (errs, orders)


def test_short_lag_uses_fixed_point():
    r = 0.1
    k = DelayKernel(1, r, 1.0, (DiscreteTerm(r / 40, MatrixCoefficient.of([[-0.5]])),
                                DiscreteTerm(r, MatrixCoefficient.of([[-0.5]]))))
    phi = cubic_history(r)
    a = integrate(k, 0.0, phi, 1.0)(1.0)
    b = integrate(k, 0.0, phi, 1.0, max_step=r / 400)(1.0)
    assert np.allclose(a, b, atol=1e-9)


def test_piecewise_linear_history_kinks_are_respected():
    k = random_kernel(101, mer=(0.1, 0.6))
    phi = HistorySegment.piecewise_linear(k.r, np.random.default_rng(3).uniform(-1, 1, (17, k.dim)))
    T = 10 * k.r
    a = integrate(k, 0.0, phi, T)(T)
    b = integrate(k, 0.0, phi, T, max_step=k.r / 128)(T)
    assert np.abs(a - b).max() <= 1e-8


def test_batch_matches_single_runs():
    k = random_kernel(104, mer=(0.1, 0.6))
    rng = np.random.default_rng(0)
    segs = [HistorySegment.piecewise_linear(k.r, rng.uniform(-1, 1, (17, k.dim))) for _ in range(3)]
    sol = integrate_batch(k, 0.0, segs, 5 * k.r)
    for i, s in enumerate(segs):
        # same kinks -> same mesh, so results agree to rounding
        one = integrate(k, 0.0, s, 5 * k.r)
        assert np.allclose(sol(5 * k.r)[:, i], one(5 * k.r), atol=1e-13)


def test_dense_output_and_segments():
    r = 0.1
    sol = integrate(scalar_delay(1.0, r), 0.0, HistorySegment.constant(r, [1.0]), 1.0)
    assert np.allclose(sol(np.array([-0.05, 0.0])), 1.0)
    seg = evolve_segment(sol, 0.5)
    assert np.allclose(seg(np.array([-0.1, 0.0])), sol(np.array([0.4, 0.5])))
    assert evolve_segment(sol, 0.0) is sol.initial[0]
    norms = sol.segment_norms([0.0, 0.5])
    assert norms[0] == 1.0 and norms[1] == pytest.approx(seg.norm())
    assert sol.derivative(0.5)[0] == pytest.approx(-sol(0.4)[0], rel=1e-9)
    with pytest.raises(WindowError):
        sol(1.5)
    with pytest.raises(WindowError):
        evolve_segment(sol, 2.0)


def test_degenerate_and_invalid_inputs():
    r = 0.1
    phi = HistorySegment.constant(r, [2.0])
    sol = integrate(scalar_delay(1.0, r), 0.0, phi, 0.0)
    assert sol(0.0)[0] == 2.0 and sol.f[0, 0] == pytest.approx(-2.0)
    with pytest.raises(DimensionError):
        integrate(scalar_delay(1.0, r), 0.0, HistorySegment.constant(r, [1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        integrate(scalar_delay(1.0, r), 0.0, HistorySegment.constant(0.2, [1.0]), 1.0)
    with pytest.raises(ValueError):
        integrate(scalar_delay(1.0, r), 1.0, phi, 0.0)


def test_csv_is_deterministic(tmp_path):
    k = random_kernel(102, mer=(0.1, 0.6))
    phi = cubic_history(k.r, k.dim)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    integrate(k, 0.0, phi, 3 * k.r).to_csv(p1)
    integrate(k, 0.0, phi, 3 * k.r).to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().splitlines()[0] == "t," + ",".join(f"x_{i + 1}" for i in range(k.dim))


@given(a=st.floats(0.05, 3.0), frac=st.floats(0.05, 0.95), scale=st.floats(-3, 3))
def test_solution_is_linear_in_history(a, frac, scale):
    r = frac / (a * math.e)
    k = scalar_delay(a, r)
    p = cubic_history(r)
    q = HistorySegment.piecewise_linear(r, np.linspace(1, -1, 17))
    sol = integrate_batch(k, 0.0, [p, q, p + scale * q], 5 * r)
    y = sol(5 * r)[0]
    assert y[2] == pytest.approx(y[0] + scale * y[1], abs=1e-12 * (1 + abs(scale)))

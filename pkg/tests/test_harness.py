import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaysplit import harness as H
from delaysplit.constants import solve_lambda
from delaysplit.errors import HypothesisError
from delaysplit.model import HistorySegment, kernel_from_config, lag_zero, scalar_delay, validate_hypothesis, zero_kernel

SCALAR_CFG = {"dim": 1, "r": 0.1, "M": 1.0, "terms": [{"lag_frac": 1.0, "matrix": [[-1.0]]}]}


def test_characteristic_root_examples():
    assert H.characteristic_root(1.0, 0.1) == pytest.approx(-1.1183255915896296, rel=1e-15)
    assert H.characteristic_root(0.0, 0.1) == 0.0
    assert H.characteristic_root(1e-9, 0.1) == pytest.approx(-1e-9, rel=1e-9)
    assert H.characteristic_root(1.0, 1e-8) == pytest.approx(-1.0, rel=1e-7)
    with pytest.raises(HypothesisError):
        H.characteristic_root(1.0, 0.4)


@given(M=st.floats(1e-2, 1e2), frac=st.floats(1e-4, 0.99))
def test_characteristic_root_agrees_with_slow_root(M, frac):
    r = frac / (M * math.e)
    assert H.characteristic_root(M, r) == pytest.approx(-solve_lambda(M, r)[0], rel=1e-11)


def test_gronwall_instance_examples():
    z = H.gen_gronwall_instance(0, 0.5, 1.0, 5.0, "zero")
    assert not z.values.any()
    f = H.gen_gronwall_instance(0, 0.5, 1.0, 5.0, "const")
    # the seed interval ends in a linear drop to the first saturated node, which
    # moves phi(r) off c2 r c1 = 0.5 by at most c2 h
    assert abs(f.values[f.per_delay] - 0.5) <= 0.5 * f.h
    a = H.gen_gronwall_instance(7, 0.5, 1.0, 5.0, "random")
    b = H.gen_gronwall_instance(7, 0.5, 1.0, 5.0, "random")
    assert np.array_equal(a.values, b.values)
    with pytest.raises(HypothesisError):
        H.gen_gronwall_instance(0, 1.0, 1.0, 5.0)
    with pytest.raises(ValueError):
        H.gen_gronwall_instance(0, 0.5, 1.0, 5.0, "spiky")


def test_gronwall_check_examples():
    f = H.gen_gronwall_instance(0, 0.5, 1.0, 10.0, "const")
    r1 = H.check_gronwall(f, 0.5, 1.0)
    r01 = H.check_gronwall(f, 0.5, 0.1)
    assert r1.passed and r01.passed
    t = 8.0
    assert H.gronwall_envelope(t, 1, 0.5, 1, 1.0) == pytest.approx(2 * 0.5**t)
    assert H.gronwall_envelope(t, 1, 0.5, 1, 1.0) < H.gronwall_envelope(t, 1, 0.5, 1, 0.1)
    assert H.check_gronwall(H.gen_gronwall_instance(0, 0.5, 1.0, 3.0, "zero"), 0.5, 0.5).passed


def test_gronwall_rejects_instances_violating_the_window_inequality():
    g = H.GridFunction(1.0, 1 / 16, np.ones(100))  # stays at 1 while c2 r = 0.5
    with pytest.raises(HypothesisError):
        H.check_gronwall(g, 0.5, 1.0)
    with pytest.raises(ValueError):
        H.GridFunction(1.0, 0.5, np.ones(10))
    with pytest.raises(ValueError):
        H.GridFunction(1.0, 1 / 16, -np.ones(10))


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), c2r=st.floats(0.01, 0.99), rho=st.floats(0.01, 1.0),
       profile=st.sampled_from(["const", "ramp", "random"]))
def test_saturated_instances_obey_both_bounds(seed, c2r, rho, profile):
    f = H.gen_gronwall_instance(seed, c2r / 0.5, 0.5, 5.0, profile)
    assert H.check_gronwall(f, c2r / 0.5, rho).passed


def test_growth_examples():
    phi = HistorySegment.piecewise_linear(0.1, np.linspace(-2, 1, 17))
    rep = H.check_growth(zero_kernel(1, 0.1), phi, 1.0)
    assert rep.passed and rep.details["max_ratio"] == 1.0  # attained at t0 only
    from delaysplit.stepper import integrate
    assert integrate(zero_kernel(1, 0.1), 0.0, phi, 1.0).segment_norms([1.0])[0] == 1.0  # x_t = phi(0)
    decay = H.check_growth(scalar_delay(1.0, 0.1), HistorySegment.constant(0.1, [1.0]), 2.0)
    assert decay.passed and decay.worst_at == 0.0  # the ratio only shrinks for a decaying solution
    tight = H.check_growth(lag_zero([[1.0]], 0.1), HistorySegment.constant(0.1, [1.0]), 2.0)
    assert tight.passed and abs(tight.details["max_ratio"] - 1.0) <= 1e-8


@given(seed=st.integers(0, 10**6))
def test_random_kernels_satisfy_hypothesis(seed):
    cfg = H.random_kernel_config(seed)
    k = kernel_from_config(cfg)
    rep = validate_hypothesis(k)
    assert rep.ok and 0.05 <= k.M * math.e * k.r <= 0.6


def test_csv_text_formats():
    text = H.csv_text([{"a": 0.1, "b": True, "c": 3}])
    assert text == "a,b,c\n0.1,true,3\n"
    assert H.csv_text([]) == ""


def test_empty_scenario_is_noop(tmp_path):
    b = H.run_scenario(H.ScenarioConfig(out_dir=str(tmp_path / "o")))
    assert b.rows == {} and b.exit_code == 0 and not (tmp_path / "o").exists()


def test_constants_scenario_has_monotone_gap(tmp_path):
    cfg = H.ScenarioConfig(kernel=SCALAR_CFG, r_list=(0.1, 0.01, 1e-3), suites=("constants",), K_f=2.0,
                           out_dir=str(tmp_path))
    b = H.run_scenario(cfg)
    rows = list(csv.DictReader(open(tmp_path / "constants.csv")))
    gaps = [float(r["gap"]) for r in rows]
    assert b.exit_code == 0 and gaps == sorted(gaps) and len(rows) == 3
    assert float(rows[-1]["gap_margin"]) > 0 > float(rows[0]["gap_margin"])


def test_scenario_errors_map_to_exit_code_two():
    code, msg = H.scenario_exit_code(H.ScenarioConfig(kernel=SCALAR_CFG, r_list=(0.5,), suites=("constants",)))
    assert code == 2 and "M e r" in msg or "not below" in msg
    code, _ = H.scenario_exit_code(H.ScenarioConfig(suites=("bogus",)))
    assert code == 2
    with pytest.raises(ValueError):
        H.ScenarioConfig.from_mapping({"nope": 1})


def test_scenario_failure_sets_exit_code_one(tmp_path):
    # r lambda ~ 0.01 is below where the stated fast constant covers the first delay interval
    cfg = H.ScenarioConfig(kernel=SCALAR_CFG, r_list=(0.01,), suites=("verify",), verify_samples=4,
                           out_dir=str(tmp_path))
    b = H.run_scenario(cfg)
    assert b.exit_code == 1 and b.failures["verify"] == 1


def test_scenario_is_byte_deterministic_and_worker_independent(tmp_path):
    base = dict(kernel=SCALAR_CFG, r_list=(0.1, 0.05), suites=("constants", "special", "split", "verify"),
                samples=60, pairs=200, verify_samples=3)
    outs = []
    for i, workers in enumerate((1, 1, 2)):
        d = tmp_path / f"run{i}"
        H.run_scenario(H.ScenarioConfig(**base, out_dir=str(d), workers=workers))
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1] == outs[2]
    assert "special_r1.000000e-01.csv" in outs[0]

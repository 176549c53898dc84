import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hokdv.errors import AliasingError, RangeError
from hokdv.spectral import (SQRT2PI, FourierField, GridSpec, analyze, conserved_quantities,
                            dealiased_product, derivative, dispersion_power, eigenvalue_gap,
                            flow_phases, inner, l2_norm, mean_value, propagate, random_field,
                            read_field_csv, reflect, remove_mean, sobolev_norm, synthesize,
                            unit_phases, write_field_csv)


def test_dispersion_power_is_exact_integer():
    assert dispersion_power(1, -3) == -27
    assert dispersion_power(5, 10001) == 10001 ** 11
    assert isinstance(dispersion_power(2, 7), int)


def test_dispersion_power_range_error():
    with pytest.raises(RangeError):
        dispersion_power(5, 2 ** 30)


@pytest.mark.parametrize("j,k,gap", [(1, 1, 7), (2, 3, 781), (1, -1, 1), (1, 0, 1)])
def test_eigenvalue_gap_spot_values(j, k, gap):
    assert eigenvalue_gap(j, k) == gap


def test_order_validation():
    with pytest.raises(ValueError):
        dispersion_power(0, 3)
    with pytest.raises(ValueError):
        flow_phases(1.5, 4, 0.1)


def test_large_time_phases_match_extended_precision():
    t = 1000.0
    ints = [dispersion_power(2, k) for k in range(-20, 21)]
    got = unit_phases(ints, t)
    with mpmath.workdps(60):
        ref = [complex(mpmath.cos(p * mpmath.mpf(t)), mpmath.sin(p * mpmath.mpf(t))) for p in ints]
    assert np.max(np.abs(got - np.array(ref))) < 1e-13


def test_cos_coefficients_and_invariants():
    u = FourierField.from_function(1, 8, np.cos)
    assert abs(u.coeff(1) - SQRT2PI / 2) < 1e-14
    assert abs(u.coeff(-1) - SQRT2PI / 2) < 1e-14
    m, e, h = conserved_quantities(u)
    assert abs(m) < 1e-14
    assert abs(e - math.pi) < 1e-13
    assert abs(h - math.pi / 2) < 1e-13


def test_constant_field_invariants():
    u = FourierField.constant(2, 5, 0.5)
    m, e, h = conserved_quantities(u)
    two_pi = 2 * math.pi
    assert abs(m - 0.5 * two_pi) < 1e-13
    assert abs(e - 0.25 * two_pi) < 1e-13
    assert abs(h + 0.125 * two_pi / 6) < 1e-13
    assert abs(mean_value(u) - 0.5) < 1e-15


def test_hermitian_symmetry_enforced():
    c = np.zeros(5, dtype=complex)
    c[3] = 1.0
    with pytest.raises(ValueError):
        FourierField(1, 2, c)


def test_analyze_rejects_coarse_grid():
    with pytest.raises(AliasingError):
        analyze(np.ones(8), 8)


def test_sample_round_trip(rng):
    u = random_field(1, 16, rng)
    grid = GridSpec.for_truncation(16)
    v = analyze(synthesize(u, grid), 16)
    assert np.max(np.abs(u.coeffs - v.coeffs)) < 1e-13


def test_dealiased_product_matches_pointwise(rng):
    u = random_field(1, 10, rng)
    v = random_field(1, 10, rng)
    uv = synthesize(u, GridSpec(64)) * synthesize(v, GridSpec(64))
    ref = analyze(uv, 10)
    assert np.max(np.abs(dealiased_product(u, v).coeffs - ref.coeffs)) < 1e-13


def test_derivative_of_sine():
    u = FourierField.from_function(1, 6, np.sin)
    du = derivative(u)
    ref = FourierField.from_function(1, 6, np.cos)
    assert np.max(np.abs(du.coeffs - ref.coeffs)) < 1e-14


def test_csv_round_trip(tmp_path, rng):
    u = random_field(2, 7, rng, mean=0.3)
    path = tmp_path / "u.csv"
    write_field_csv(u, path)
    v = read_field_csv(path)
    assert (v.order_j, v.trunc_N) == (2, 7)
    assert np.array_equal(u.coeffs, v.coeffs)


def test_csv_rejects_other_convention(tmp_path, rng):
    u = random_field(1, 3, rng)
    path = tmp_path / "u.csv"
    write_field_csv(u, path)
    text = path.read_text().replace("unitary-sqrt2pi", "plain")
    path.write_text(text)
    with pytest.raises(ValueError):
        read_field_csv(path)


dyadic = st.integers(min_value=-2 ** 12, max_value=2 ** 12).map(lambda n: n / 2 ** 8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), s=dyadic, t=dyadic, j=st.integers(1, 3))
def test_group_law_and_unitarity(seed, s, t, j):
    u = random_field(j, 24, np.random.default_rng(seed), mean=0.1)
    a = propagate(propagate(u, s), t)
    b = propagate(u, s + t)
    assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-12
    assert abs(l2_norm(propagate(u, t)) - l2_norm(u)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), t=st.floats(-50, 50))
def test_reflection_reverses_flow(seed, t):
    u = random_field(1, 12, np.random.default_rng(seed))
    back = reflect(propagate(reflect(propagate(u, t)), t))
    assert np.max(np.abs(back.coeffs - u.coeffs)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), s=st.floats(0, 3))
def test_norm_properties(seed, s):
    r = np.random.default_rng(seed)
    u = random_field(1, 10, r, mean=0.2)
    v = random_field(1, 10, r)
    assert abs(inner(u, u) - l2_norm(u) ** 2) < 1e-12
    assert sobolev_norm(u, s) >= l2_norm(u) - 1e-12
    assert abs(mean_value(remove_mean(u))) < 1e-15
    assert abs(inner(u, v) - inner(v, u)) < 1e-12

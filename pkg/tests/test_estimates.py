import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hokdv.errors import RangeError, ResolutionError
from hokdv.estimates import (SpaceTimeSample, check_gap, discrete_xsb_norm, free_packet_l4,
                             free_packet_sample, free_packet_xsb, hj_eval, hj_identity_suite,
                             l4_norm, l4_ratio_ensemble, modulation_weight, plateau_check,
                             resonance_alpha, strichartz_sum, sup_M_scan, threshold_b,
                             tau_grid_for, window, window_hat, windowed_tone, windowed_tone_xsb)
from hokdv.spectral import eigenvalue_gap


@pytest.mark.parametrize("j,k_max", [(1, 10_000), (5, 1000)])
def test_gap_examples(j, k_max):
    rep = check_gap(j, k_max)
    assert rep.ok and rep.monotone and rep.counterexample is None
    assert rep.checked == 2 * (k_max - j)


def test_gap_spot_value():
    assert eigenvalue_gap(2, 3) == 781


def test_gap_rejects_small_range():
    with pytest.raises(ValueError):
        check_gap(3, 3)


def test_hj_spot_values():
    assert hj_eval(1, 2.0, 1.0) == 2.0
    assert hj_eval(1, 2.0, 0.0) == 8.0 == 3 * 2 * 1 + 2
    assert math.isclose(hj_eval(3, 5.0, 2.5), 2 * 2.5 ** 7, rel_tol=1e-15)


@pytest.mark.parametrize("j", [1, 2, 3, 4, 5])
def test_hj_suite(j, rng):
    rep = hj_identity_suite(j, 2000, rng)
    assert rep.ok, rep.max_errors
    assert max(rep.max_errors.values()) < 1e-11


def test_threshold_is_exact():
    assert threshold_b(1) == Fraction(1, 3)
    assert threshold_b(2) == Fraction(3, 10)


def test_strichartz_spot_value():
    r = strichartz_sum(1, 0.5, 0, 4)
    assert r.terms == 1
    assert abs(r.value - 1 / math.sqrt(257)) < 1e-12


@pytest.mark.parametrize("j", [1, 2, 3])
def test_strichartz_empty_sum(j):
    assert strichartz_sum(j, 0.4, 12.5, 3).value == 0.0


def test_strichartz_preconditions():
    with pytest.raises(ValueError):
        strichartz_sum(1, 0.25, 0, 5)
    with pytest.raises(ValueError):
        strichartz_sum(1, 0.4, 0, 1)


@settings(max_examples=60, deadline=None)
@given(j=st.integers(1, 3), k=st.integers(4, 60), tau=st.floats(-1e5, 1e5),
       b1=st.floats(0.26, 0.9), b2=st.floats(0.26, 0.9))
def test_strichartz_monotone_in_b_and_small_exceptional_sets(j, k, tau, b1, b2):
    lo, hi = sorted((b1, b2))
    a, c = strichartz_sum(j, lo, tau, k), strichartz_sum(j, hi, tau, k)
    assert c.value <= a.value * (1 + 1e-12)
    assert max(a.count_A, a.count_plus, a.count_minus) <= 3


@settings(max_examples=40, deadline=None)
@given(j=st.integers(1, 3), k=st.integers(4, 40), a=st.floats(0.0, 30.0))
def test_resonance_alpha_inverts_hj(j, k, a):
    tau = hj_eval(j, float(k), 0.5 * k + a)
    alpha = resonance_alpha(j, k, tau)
    if alpha is None:
        assert a < 1e-3
    else:
        assert math.isclose(hj_eval(j, float(k), 0.5 * k + alpha), tau, rel_tol=1e-12, abs_tol=1e-9)


def test_tau_grid_contains_resonances():
    g = tau_grid_for(1, 10, 1e3)
    for k1 in range(2, 9):
        assert k1 ** 3 + (10 - k1) ** 3 in g
    assert g.min() >= -1e3 and g.max() <= 1e3


def test_scan_range_error():
    with pytest.raises(RangeError):
        sup_M_scan(5, 0.4, 200, 1e3)


def test_plateau_above_threshold_j1():
    rep = plateau_check(1, 0.4, 100, 500.0)
    assert rep.plateau and rep.max_count <= 3


def test_growth_below_threshold_j1():
    rep = plateau_check(1, 0.26, 100, 500.0)
    assert rep.growth > 0.05


def test_window_transform_matches_quadrature():
    t = np.linspace(-1, 1, 200001)
    for s in (0.0, 0.7, 3.1, 10.0):
        ref = np.trapezoid(window(t) * np.exp(-1j * s * t), t) / math.sqrt(2 * math.pi)
        assert abs(window_hat(s) - ref) < 1e-9


def test_modulation_weight_zero_b_is_window_norm():
    # b = 0: Plancherel gives the squared L2 norm of window(t / delta), 3 delta / 4
    assert math.isclose(modulation_weight(0.0, 0.0), 0.75, rel_tol=1e-9)
    assert math.isclose(modulation_weight(0.0, 0.0, delta=0.01), 0.0075, rel_tol=1e-9)


@pytest.mark.parametrize("k0,tau0", [(2, 8.0), (2, 20.0), (3, -10.5), (0, 3.0)])
def test_pure_tone_oracle(k0, tau0):
    j, N, b = 1, 4, 0.4
    s = windowed_tone(j, N, k0, tau0, 32.0, 4095)
    got = discrete_xsb_norm(s, 0.5, b)
    want = windowed_tone_xsb(j, k0, tau0, 0.5, b)
    assert abs(got - want) / want < 1e-5


def test_pure_tone_large_detuning_scales_like_bracket():
    j, k0, b = 1, 2, 0.4
    far = windowed_tone_xsb(j, k0, 8.0 + 1e4, 0.0, b)
    # the window's transform is concentrated at |sigma| <~ pi, so the weight factors out
    want = math.sqrt(2 * math.pi * 0.75) * (1 + 1e8) ** (b / 2)
    assert abs(far / want - 1) < 1e-3


def test_zero_sample():
    z = SpaceTimeSample(1, 4, 4095, 32.0, np.zeros((4095, 9)))
    assert discrete_xsb_norm(z, 0.0, 0.4) == 0.0
    assert l4_norm(z) == 0.0


def test_resolution_errors():
    with pytest.raises(ResolutionError):
        discrete_xsb_norm(windowed_tone(1, 4, 2, 8.0, 4.0, 4095), 0.0, 0.4)
    with pytest.raises(ResolutionError):
        discrete_xsb_norm(windowed_tone(1, 4, 2, 8.0, 32.0, 101), 0.0, 0.4)


def test_sample_validation():
    with pytest.raises(ValueError):
        SpaceTimeSample(1, 2, 10, 1.0, np.zeros((10, 5)))
    with pytest.raises(ValueError):
        SpaceTimeSample(1, 2, 11, 1.0, np.zeros((11, 4)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_parseval_and_round_trip(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((63, 7)) + 1j * r.standard_normal((63, 7))
    s = SpaceTimeSample.from_time_coeffs(1, 3, 5.0, a)
    assert s.parseval_defect() < 1e-12
    assert np.allclose(s.time_coeffs(), a, atol=1e-12)
    assert np.allclose(s.time_coeffs(127)[::2][:63].shape, a.shape)


def test_free_packet_closed_forms_match_samples(rng):
    j, N, b = 1, 3, 0.4
    c = rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)
    s = free_packet_sample(j, c, 1.0, 8.0, 4095)
    assert abs(l4_norm(s) - free_packet_l4(j, c, 1.0)[0]) / l4_norm(s) < 1e-5
    x = discrete_xsb_norm(s, 0.0, b)
    assert abs(x - free_packet_xsb(c, b, 1.0)) / x < 1e-5


def test_ensemble_reproducible_and_aligned_dominates():
    a = l4_ratio_ensemble(1, 16, 0.3, np.random.default_rng(1), draws=3)
    b = l4_ratio_ensemble(1, 16, 0.3, np.random.default_rng(1), draws=3)
    assert a.members == b.members
    assert len(a.members) == 2 * 3 * 3
    assert a.family_max("aligned") >= a.family_max("gaussian")

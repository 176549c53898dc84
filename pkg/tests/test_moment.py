import math

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings, strategies as st

from hokdv.errors import IllPosedHorizonError, PartialControllabilityError
from hokdv.moment import (assemble_moment_system, evaluate_control, exact_terminal_state,
                          gram_matrix, refine_control, symmetric_mode_set, synthesize_control,
                          verify_reach)
from hokdv.spectral import FourierField, l2_norm, mean_value, random_field


def pair(j, N, seed, norm=0.1, max_mode=None, mean=0.0):
    r = np.random.default_rng(seed)
    return (random_field(j, N, r, norm=norm, max_mode=max_mode, mean=mean),
            random_field(j, N, r, norm=norm, max_mode=max_mode, mean=mean))


def test_symmetric_mode_set():
    assert symmetric_mode_set(2) == (-2, -1, 1, 2)
    with pytest.raises(ValueError):
        symmetric_mode_set(0)


def test_gram_matches_quadrature():
    K = (-3, -1, 2, 3)
    G = gram_matrix(1, 0.7, K)
    for a, m in enumerate(K):
        for b, k in enumerate(K):
            d = k ** 3 - m ** 3
            re = scipy.integrate.quad(lambda t: math.cos(d * t), 0, 0.7, limit=200)[0]
            im = scipy.integrate.quad(lambda t: math.sin(d * t), 0, 0.7, limit=200)[0]
            assert abs(G[a, b] - complex(re, im)) < 1e-12


def test_gram_rejects_mean_mode():
    with pytest.raises(ValueError):
        gram_matrix(1, 1.0, (0, 1))


def test_dual_family_is_biorthogonal():
    sys = assemble_moment_system(1, 1.0, n_modes=6)
    t = np.linspace(0, 1, 20001)
    q = sys.dual_values(t)
    p = np.exp(1j * np.outer(t, np.array(sys.freqs, dtype=float)))
    # integral q_k conj(p_m) dt = delta_km, checked independently by Simpson's rule
    M = scipy.integrate.simpson(q[:, :, None] * np.conj(p[:, None, :]), x=t, axis=0)
    assert sys.biorthogonality_residual() < 1e-12
    assert np.max(np.abs(M - np.eye(sys.size))) < 1e-6


def test_ill_posed_horizon():
    with pytest.raises(IllPosedHorizonError):
        assemble_moment_system(1, 1e-4, n_modes=16)


@pytest.mark.parametrize("j", [1, 2])
def test_truncated_weights_are_exact_on_matching_truncation(bump, j):
    u0, u1 = pair(j, 8, 5)
    sys = assemble_moment_system(j, 1.0, n_modes=8)
    sig = synthesize_control(u0, u1, bump, sys, beta_mode="truncated")
    rep = verify_reach(u0, u1, sig, bump)
    assert rep.residual_l2 < 1e-12 * l2_norm(u1) * 1e3
    exact = exact_terminal_state(u0, sig, bump)
    assert np.max(np.abs(exact.coeffs - rep.terminal.coeffs)) < 1e-13


def test_quadrature_matches_closed_form(bump):
    u0, u1 = pair(1, 12, 9, max_mode=6)
    sys = assemble_moment_system(1, 1.0, n_modes=6)
    sig = synthesize_control(u0, u1, bump, sys)
    a = verify_reach(u0, u1, sig, bump).terminal
    b = exact_terminal_state(u0, sig, bump)
    assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-14


@pytest.mark.parametrize("j", [1, 2])
def test_formula_then_refinement(bump, j):
    u0, u1 = pair(j, 32, 11, max_mode=16)
    sys = assemble_moment_system(j, 1.0, n_modes=16)
    sig = synthesize_control(u0, u1, bump, sys)
    scale = l2_norm(u1)
    first = verify_reach(u0, u1, sig, bump).residual_l2
    assert first <= 1e-3 * scale
    ref = refine_control(u0, u1, sig, bump)
    second = verify_reach(u0, u1, ref, bump).residual_l2
    assert second <= 1e-6 * scale
    assert second < first


def test_restricted_correction_reports_unreachable_modes(bump):
    u0, u1 = pair(1, 12, 3, max_mode=8)
    sys = assemble_moment_system(1, 1.0, n_modes=8)
    sig = synthesize_control(u0, u1, bump, sys)
    with pytest.raises(PartialControllabilityError) as err:
        refine_control(u0, u1, sig, bump, correction_modes=symmetric_mode_set(4))
    assert err.value.modes


def test_mean_mismatch_rejected(bump):
    u0, u1 = pair(1, 8, 1)
    u1 = u1 + FourierField.constant(1, 8, 0.1)
    sys = assemble_moment_system(1, 1.0, n_modes=8)
    with pytest.raises(ValueError):
        synthesize_control(u0, u1, bump, sys)


def test_control_norm_matches_sampled_integral(bump):
    u0, u1 = pair(1, 8, 2, max_mode=4)
    sys = assemble_moment_system(1, 1.0, n_modes=4)
    sig = synthesize_control(u0, u1, bump, sys)
    t = np.linspace(0, 1, 2001)
    sq = [l2_norm(evaluate_control(sig, bump, ti, 8)) ** 2 for ti in t]
    ref = math.sqrt(scipy.integrate.simpson(sq, x=t))
    assert abs(sig.control_norm(bump, 8) - ref) < 1e-6 * ref
    with pytest.raises(ValueError):
        evaluate_control(sig, bump, 1.5, 8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31), mean=st.floats(-1, 1), j=st.integers(1, 2))
def test_mean_invariance_along_controlled_path(bump, seed, mean, j):
    u0, u1 = pair(j, 10, seed, mean=mean, max_mode=6)
    sys = assemble_moment_system(j, 1.0, n_modes=6)
    sig = synthesize_control(u0, u1, bump, sys)
    rep = verify_reach(u0, u1, sig, bump, record=11)
    assert max(abs(mean_value(s) - mean) for s in rep.states) <= 1e-12

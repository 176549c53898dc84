import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from hokdv.control import gg_matrix
from hokdv.dynamics import damping_feedback, simulate
from hokdv.errors import AccuracyError
from hokdv.feedback import (apply_K_lambda, build_L_lambda, closed_loop_linear_simulate,
                            decay_rate_estimate, energy_balance_check, observability_from_rate,
                            spectral_abscissa, weight_closed_form, weight_quadrature)
from hokdv.spectral import flow_phases, random_field


@pytest.mark.parametrize("j,N,lam", [(1, 6, 0.5), (2, 3, 1.0), (1, 4, 1e-9)])
def test_closed_form_weight_matches_quadrature(j, N, lam):
    a = weight_closed_form(j, N, lam)
    b = weight_quadrature(j, N, lam, 2048)
    assert np.max(np.abs(a - b)) < 1e-11


def test_L_lambda_closed_form_matches_direct_integral(bump):
    j, N, lam = 1, 5, 0.5
    gain = build_L_lambda(bump, j, N, lam)
    idx = [N + k for k in range(-N, N + 1) if k != 0]
    P = gg_matrix(bump, N)[np.ix_(idx, idx)]
    x, w = np.polynomial.legendre.leggauss(400)
    tau = 0.5 * (x + 1)
    L = np.zeros_like(P)
    for t, wt in zip(tau, 0.5 * w):
        Wm = flow_phases(j, N, -t)[idx]
        L += wt * math.exp(-2 * lam * t) * (Wm[:, None] * P * np.conj(Wm)[None, :])
    assert np.max(np.abs(gain.L_matrix - L)) < 1e-12


def test_quadrature_method_agrees_and_caps(bump):
    a = build_L_lambda(bump, 1, 4, 0.5)
    b = build_L_lambda(bump, 1, 4, 0.5, method="quadrature")
    assert np.max(np.abs(a.K_matrix - b.K_matrix)) < 1e-8
    with pytest.raises(AccuracyError):
        build_L_lambda(bump, 2, 16, 0.5, method="quadrature", max_nodes=256)


def test_gain_is_P_times_L_inverse(bump):
    g = build_L_lambda(bump, 1, 8, 1.0)
    idx = [8 + k for k in range(-8, 9) if k != 0]
    P = gg_matrix(bump, 8)[np.ix_(idx, idx)]
    assert np.max(np.abs(g.K_matrix @ g.L_matrix - P)) < 1e-12
    assert np.allclose(g.L_matrix, g.L_matrix.conj().T)


def test_lambda_zero_is_simple_damping(bump):
    g = build_L_lambda(bump, 1, 6, 0.0)
    assert g.method == "identity"
    with pytest.raises(ValueError):
        build_L_lambda(bump, 1, 6, -1.0)


def test_apply_K_leaves_mean(bump, rng):
    g = build_L_lambda(bump, 1, 6, 0.5)
    u = random_field(1, 6, rng, mean=0.4)
    assert abs(apply_K_lambda(g, u).coeffs[6]) < 1e-15


@pytest.mark.parametrize("j,lam", [(1, 0.5), (2, 1.0)])
def test_decay_rate_matches_abscissa_small_N(bump, rng, j, lam):
    g = build_L_lambda(bump, j, 16, lam)
    u0 = random_field(j, 16, rng)
    traj = closed_loop_linear_simulate(u0, g, 20.0, 0.05)
    gamma, r2, _ = decay_rate_estimate(traj)
    absc = spectral_abscissa(g)
    assert absc < 0
    assert gamma >= 0.9 * lam
    assert abs(gamma + absc) <= 0.05 * abs(absc)
    assert r2 >= 0.99


def test_linear_propagator_matches_eigen_solution(bump, rng):
    g = build_L_lambda(bump, 1, 8, 0.5)
    u0 = random_field(1, 8, rng, mean=0.2)
    traj = closed_loop_linear_simulate(u0, g, 1.0, 0.1)
    idx = [8 + k for k in range(-8, 9) if k != 0]
    ref = scipy.linalg.expm(g.generator()) @ u0.coeffs[idx]
    assert np.max(np.abs(traj.final.coeffs[idx] - ref)) < 1e-12
    assert traj.final.coeffs[8] == u0.coeffs[8]


def test_energy_identity_simple_damping(bump, rng):
    u0 = random_field(1, 12, rng)
    traj = simulate(u0, 2.0, 1e-3, damping_feedback(bump, 12), nonlinear=False)
    bal = energy_balance_check(traj, bump)
    e0 = np.linalg.norm(u0.coeffs) ** 2
    assert bal["relative"] < 1e-6
    assert bal["dissipated"] > 0.01 * e0
    assert np.max(np.abs(bal["running"])) < 1e-6 * e0


def test_decay_estimate_flags_underflow():
    from hokdv.trajectory import Trajectory
    t = np.linspace(0, 10, 50)
    c = np.zeros((50, 3), dtype=complex)
    c[:, 0] = c[:, 2] = np.exp(-t)
    c[40:, 0] = c[40:, 2] = 0.0
    gamma, r2, flags = decay_rate_estimate(Trajectory(1, 1, t, c))
    assert flags and abs(gamma - 1) < 1e-9


@settings(max_examples=20, deadline=None)
@given(gamma=st.floats(1e-3, 10), T=st.floats(0.1, 5))
def test_observability_constant_inverts_rate(gamma, T):
    mu = observability_from_rate(gamma, T)
    assert mu >= 1
    assert abs(mu * -math.expm1(-gamma * T) - 1) < 1e-12
    assert observability_from_rate(0.0) == math.inf

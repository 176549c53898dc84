import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hokdv.control import (ControlProfile, apply_G, beta, beta_closed_form, build_profile,
                           coupling_matrix, g_matrix, gg_matrix, read_profile, write_profile)
from hokdv.spectral import SQRT2PI, FourierField, inner, mean_value, random_field

TWO_PI = 2 * math.pi




def test_profile_is_normalized_and_nonnegative(bump):
    rep = bump.check()
    assert rep["min_value"] >= 0
    assert rep["norm_check"] < 1e-12


@pytest.mark.parametrize("omega", [(0.0, math.pi), (1.0, 2.5), (5.0, 7.0)])
def test_closed_form_coefficients_match_quadrature(omega):
    p = build_profile(omega)
    M = 1 << 16
    x = TWO_PI * np.arange(M) / M
    raw = np.fft.fft(p.values(x)) * (TWO_PI / M) / SQRT2PI
    n = np.arange(-40, 41)
    assert np.max(np.abs(p.coeff(n) - raw[n % M])) < 1e-9
    sq = np.fft.fft(p.values(x) ** 2) * (TWO_PI / M) / SQRT2PI
    assert np.max(np.abs(p.square_coeff(n) - sq[n % M])) < 1e-9
    assert abs(p.l2_squared() - float(np.sum(p.values(x) ** 2)) * TWO_PI / M) < 1e-9


def test_coefficient_decay_is_cubic(bump):
    n = np.array([101, 201, 401, 801])
    scaled = np.abs(bump.coeff(n)) * n.astype(float) ** 3
    assert np.all(np.abs(scaled / scaled[-1] - 1) < 0.01)
    assert np.all(np.abs(bump.coeff(np.array([4, 6, 100]))) < 1e-15)


def test_invalid_profiles():
    with pytest.raises(ValueError):
        build_profile((1.0, 1.0))
    with pytest.raises(ValueError):
        ControlProfile(0.0, 1.0, "triangle")


def test_beta_matches_closed_form(bump):
    for k in (1, 2, 5, -7, 33):
        assert abs(beta(bump, k) - beta_closed_form(bump, k)) < 1e-12


def test_beta_high_frequency_limit(bump):
    lim = bump.l2_squared() / TWO_PI
    assert abs(beta(bump, 10 ** 4) / lim - 1) < 0.01


def test_beta_constant_profile():
    p = build_profile(None, "constant")
    assert abs(beta(p, 1) - 1 / (4 * math.pi ** 2)) < 1e-15


def test_beta_rejects_mean_mode(bump):
    with pytest.raises(ValueError):
        beta(bump, 0)


def test_apply_G_matches_matrix_and_kills_mean(bump, rng):
    h = random_field(1, 16, rng, mean=0.7)
    Gh = apply_G(bump, h)
    assert abs(mean_value(Gh)) < 1e-15
    assert np.max(np.abs(g_matrix(bump, 16) @ h.coeffs - Gh.coeffs)) < 1e-12


def test_apply_G_matches_pointwise_definition(bump, rng):
    h = random_field(1, 8, rng)
    x = TWO_PI * np.arange(4096) / 4096
    hv = np.real(sum(c * np.exp(1j * k * x) for k, c in zip(range(-8, 9), h.coeffs))) / SQRT2PI
    g = bump.values(x)
    gh = g * (hv - np.sum(g * hv) * TWO_PI / 4096)
    n = np.arange(-8, 9)
    ref = np.array([np.sum(gh * np.exp(-1j * k * x)) * TWO_PI / 4096 / SQRT2PI for k in n])
    assert np.max(np.abs(ref - apply_G(bump, h).coeffs)) < 1e-10


def test_coupling_coefficients(bump):
    n = np.arange(-5, 6)
    c = coupling_matrix(bump, 2, n)
    ref = bump.coeff(n - 2) / SQRT2PI - bump.coeff(-2) * bump.coeff(n)
    assert np.max(np.abs(c - ref)) < 1e-16


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), a=st.floats(0, 6), length=st.floats(0.3, 6.2))
def test_G_self_adjoint_and_positive(seed, a, length):
    p = build_profile((a, a + length))
    r = np.random.default_rng(seed)
    u = random_field(1, 10, r)
    v = random_field(1, 10, r)
    assert abs(inner(apply_G(p, u), v) - inner(u, apply_G(p, v))) < 1e-12
    P = gg_matrix(p, 10)
    assert np.max(np.abs(P - P.conj().T)) < 1e-14
    assert np.min(np.linalg.eigvalsh(0.5 * (P + P.conj().T))) > -1e-14


def test_reflected_profile(bump):
    r = bump.reflected()
    x = np.linspace(0, TWO_PI, 50, endpoint=False)
    assert np.max(np.abs(r.values(-x) - bump.values(x))) < 1e-13


def test_profile_round_trip(tmp_path, bump):
    write_profile(bump, tmp_path / "g.csv", tmp_path / "g.json", N=8)
    meta = json.loads((tmp_path / "g.json").read_text())
    assert meta["shape"] == "raised_cosine" and meta["norm_check"] < 1e-12
    p = read_profile(tmp_path / "g.json")
    assert p.support == bump.support
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "n,re,im"

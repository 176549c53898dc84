"""The localized mean-preserving control operator Gh = g (h - integral(g h)).

Profiles are either the constant 1/(2 pi) or a raised cosine supported on an
arc.  Both have closed-form Fourier coefficients, so every spectral quantity
(the coupling coefficients, the weights beta_k) is available at arbitrary mode
numbers without quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import DegenerateProfileError
from .spectral import SQRT2PI, FourierField, hermitian_part, product_coeffs

SHAPES = ("constant", "raised_cosine")
TWO_PI = 2.0 * math.pi

# trigonometric polynomials in theta = 2 pi (x - a) / len on the support,
# stored as {harmonic: weight} for g / c and g**2 / c**2
_RAISED_COSINE = {0: 1.0, 1: -0.5, -1: -0.5}
_RAISED_COSINE_SQ = {0: 1.5, 1: -1.0, -1: -1.0, 2: 0.25, -2: 0.25}


def _window_transform(n: np.ndarray, start: float, length: float, terms: dict) -> np.ndarray:
    """Unitary Fourier coefficients of sum_m w_m exp(i m kappa (x-start)) restricted to the arc."""
    n = np.asarray(n, dtype=float)
    kappa = TWO_PI / length
    out = np.zeros(n.shape, dtype=complex)
    edge = np.exp(-1j * n * length) - 1.0
    for m, w in terms.items():
        d = m * kappa - n
        resonant = np.abs(d) < 1e-9
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(resonant, length, edge / (1j * np.where(resonant, 1.0, d)))
        out += w * val
    return out * np.exp(-1j * n * start) / SQRT2PI


@dataclass(frozen=True, eq=False)
class ControlProfile:
    """Nonnegative localization weight g with integral one.

    ``g_coeffs`` caches the coefficients g_n for |n| <= n_cached; ``coeff``
    evaluates the closed form at any n.
    """

    omega_start: float
    omega_len: float
    shape_tag: str
    n_cached: int = 1024
    g_coeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.shape_tag not in SHAPES:
            raise ValueError(f"unknown profile shape {self.shape_tag!r}; expected one of {SHAPES}")
        length = float(self.omega_len)
        if not (0.0 < length <= TWO_PI + 1e-12):
            raise ValueError(f"support length must lie in (0, 2 pi], got {self.omega_len!r}")
        if self.shape_tag == "constant":
            object.__setattr__(self, "omega_start", 0.0)
            object.__setattr__(self, "omega_len", TWO_PI)
        else:
            object.__setattr__(self, "omega_start", float(self.omega_start) % TWO_PI)
            object.__setattr__(self, "omega_len", min(length, TWO_PI))
        coeffs = self.coeff(np.arange(-self.n_cached, self.n_cached + 1))
        coeffs.flags.writeable = False
        object.__setattr__(self, "g_coeffs", coeffs)

    @property
    def support(self):
        return (self.omega_start, self.omega_start + self.omega_len)

    @property
    def height(self) -> float:
        return 1.0 / self.omega_len

    def coeff(self, n) -> np.ndarray:
        """Closed-form g_n = (1/sqrt(2 pi)) * integral exp(-i n x) g(x) dx."""
        n = np.asarray(n)
        if self.shape_tag == "constant":
            return np.where(n == 0, 1.0 / SQRT2PI, 0.0).astype(complex)
        return self.height * _window_transform(n, self.omega_start, self.omega_len, _RAISED_COSINE)

    def square_coeff(self, n) -> np.ndarray:
        """Closed-form Fourier coefficients of g**2."""
        n = np.asarray(n)
        if self.shape_tag == "constant":
            return np.where(n == 0, SQRT2PI / TWO_PI ** 2, 0.0).astype(complex)
        return self.height ** 2 * _window_transform(n, self.omega_start, self.omega_len,
                                                    _RAISED_COSINE_SQ)

    def values(self, x) -> np.ndarray:
        """Pointwise values g(x)."""
        x = np.asarray(x, dtype=float)
        if self.shape_tag == "constant":
            return np.full(x.shape, 1.0 / TWO_PI)
        y = np.mod(x - self.omega_start, TWO_PI)
        inside = y < self.omega_len
        return np.where(inside, self.height * (1.0 - np.cos(TWO_PI * y / self.omega_len)), 0.0)

    def l2_squared(self) -> float:
        """Integral of g**2."""
        if self.shape_tag == "constant":
            return 1.0 / TWO_PI
        return 1.5 / self.omega_len

    def truncated(self, N: int) -> np.ndarray:
        """Coefficients g_n for |n| <= N."""
        if N <= self.n_cached:
            return self.g_coeffs[self.n_cached - N:self.n_cached + N + 1]
        return self.coeff(np.arange(-N, N + 1))

    def reflected(self) -> "ControlProfile":
        """The profile x -> g(-x)."""
        if self.shape_tag == "constant":
            return self
        return ControlProfile(-(self.omega_start + self.omega_len), self.omega_len,
                              self.shape_tag, self.n_cached)

    def check(self, num_points: Optional[int] = None) -> dict:
        """Nonnegativity and normalization on a uniform verification grid.

        The default grid puts at least 2^14 points on the support.
        """
        if num_points is None:
            num_points = 1 << max(14, 14 + math.ceil(math.log2(TWO_PI / self.omega_len)))
        x = TWO_PI * np.arange(num_points) / num_points
        vals = self.values(x)
        integral = float(np.sum(vals)) * TWO_PI / num_points
        return {"min_value": float(vals.min()), "integral": integral,
                "norm_check": abs(integral - 1.0)}

    def describe(self) -> dict:
        return {"omega_start": self.omega_start, "omega_len": self.omega_len,
                "shape": self.shape_tag}


def build_profile(omega, shape_tag: str = "raised_cosine") -> ControlProfile:
    """Profile on the arc omega = (a, b), or on the whole circle for 'constant'."""
    if shape_tag == "constant":
        return ControlProfile(0.0, TWO_PI, "constant")
    a, b = (float(v) for v in omega)
    if not b > a:
        raise ValueError(f"support interval ({a}, {b}) is empty")
    profile = ControlProfile(a, b - a, shape_tag)
    report = profile.check()
    if report["min_value"] < -1e-12 or report["norm_check"] > 1e-10:
        raise ValueError(f"profile failed validation: {report}")
    return profile


def half_circle_bump() -> ControlProfile:
    return build_profile((0.0, math.pi), "raised_cosine")


def coupling_matrix(profile: ControlProfile, j_index, n):
    """Coupling coefficient (G phi_j, phi_n) = g_{n-j}/sqrt(2 pi) - g_{-j} g_n."""
    j_index = np.asarray(j_index)
    n = np.asarray(n)
    val = profile.coeff(n - j_index) / SQRT2PI - profile.coeff(-j_index) * profile.coeff(n)
    val = np.where((n == 0) | (j_index == 0), 0.0, val)
    return val if val.ndim else complex(val)


@lru_cache(maxsize=64)
def _g_matrix_cached(profile: ControlProfile, N: int) -> np.ndarray:
    k = np.arange(-N, N + 1)
    mat = coupling_matrix(profile, k[None, :], k[:, None])
    mat = np.asarray(mat, dtype=complex)
    # enforce exact self-adjointness of the truncated operator
    mat = 0.5 * (mat + mat.conj().T)
    mat[N, :] = 0.0
    mat[:, N] = 0.0
    mat.flags.writeable = False
    return mat


def g_matrix(profile: ControlProfile, N: int) -> np.ndarray:
    """Matrix of G on |k| <= N: entry [n, j] is (G phi_j, phi_n)."""
    return _g_matrix_cached(profile, int(N))


def gg_matrix(profile: ControlProfile, N: int) -> np.ndarray:
    """Matrix of GG* on |k| <= N (composition of truncated operators)."""
    G = g_matrix(profile, N)
    return G @ G


def apply_G(profile: ControlProfile, h: FourierField) -> FourierField:
    """Gh = g (h - integral(g h)) evaluated by an alias-free collocation product."""
    N = h.trunc_N
    gN = profile.truncated(N)
    avg = np.sum(gN * h.coeffs[::-1])  # integral g h = sum_k g_k h_{-k}
    w = h.coeffs.copy()
    w[N] -= avg * SQRT2PI
    out = product_coeffs(profile.truncated(2 * N), w, N)
    out[N] = 0.0
    return h.with_coeffs(hermitian_part(out))


def apply_G_adjoint(profile: ControlProfile, v: FourierField) -> FourierField:
    """G is self-adjoint in L2; provided for call sites that use G*."""
    return apply_G(profile, v)


def beta(profile: ControlProfile, k: int, n_max: Optional[int] = None, window: int = 4096) -> float:
    """beta_k = ||G phi_k||^2 as a sum of squared coupling coefficients.

    With ``n_max`` the sum runs over |n| <= n_max, which is the value seen by
    a system truncated at that level.  Without it the sum covers every n where
    the closed-form coefficients are above round-off (windows of half-width
    ``window`` around 0 and k).
    """
    k = int(k)
    if k == 0:
        raise ValueError("beta is undefined for the mean mode k = 0")
    if n_max is not None:
        n = np.arange(-n_max, n_max + 1)
    else:
        n = np.union1d(np.arange(-window, window + 1), np.arange(k - window, k + window + 1))
    val = float(np.sum(np.abs(coupling_matrix(profile, k, n)) ** 2))
    if not val > 1e-15:
        raise DegenerateProfileError(f"beta_{k} = {val:.3e} is below 1e-15")
    return val


def beta_closed_form(profile: ControlProfile, k: int) -> float:
    """||G phi_k||^2 from integral(g^2)/(2 pi), g_{-k} and the transform of g^2."""
    gm = complex(profile.coeff(-k))
    g2 = complex(profile.square_coeff(-k))
    return (profile.l2_squared() / TWO_PI - 2.0 * (np.conj(gm) * g2).real
            + abs(gm) ** 2 * profile.l2_squared())


def write_profile(profile: ControlProfile, csv_path, json_path, N: int = 64) -> None:
    import csv
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["n", "re", "im"])
        for n, c in zip(range(-N, N + 1), profile.truncated(N)):
            w.writerow([n, repr(float(c.real)), repr(float(c.imag))])
    meta = dict(profile.describe(), norm_check=profile.check()["norm_check"])
    with open(json_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)


def read_profile(json_path) -> ControlProfile:
    with open(json_path) as fh:
        meta = json.load(fh)
    shape = meta["shape"]
    if shape == "constant":
        return build_profile(None, "constant")
    a = float(meta["omega_start"])
    return build_profile((a, a + float(meta["omega_len"])), shape)

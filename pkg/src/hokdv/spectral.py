"""Fourier representation of real periodic fields and the free dispersive flow.

Fields live on the circle [0, 2*pi) and are stored as coefficients against the
orthonormal basis phi_k(x) = exp(i k x) / sqrt(2 pi), for |k| <= N.  The
dispersive operator of order 2j+1 acts diagonally with eigenvalue
i * k**(2j+1); all powers are formed in exact integer arithmetic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import mpmath
import numpy as np

from .errors import AliasingError, RangeError

SQRT2PI = math.sqrt(2.0 * math.pi)
CONVENTION_TAG = "unitary-sqrt2pi"

# Exact powers are accepted up to this many bits.  Python integers do not
# overflow, so the limit only guards against absurd inputs.
MAX_POWER_BITS = 256

# Above this size of |p * t| the phase exp(i p t) is reduced modulo 2 pi in
# extended precision; below it double precision is already accurate.
_DIRECT_PHASE_LIMIT = 64.0


def _check_order(j) -> int:
    if isinstance(j, bool) or int(j) != j or int(j) < 1:
        raise ValueError(f"order j must be a positive integer, got {j!r}")
    return int(j)


def dispersion_power(j: int, k: int) -> int:
    """Return the exact integer k**(2j+1)."""
    j = _check_order(j)
    p = int(k) ** (2 * j + 1)
    if abs(p).bit_length() > MAX_POWER_BITS:
        raise RangeError(f"|{k}|**{2 * j + 1} exceeds {MAX_POWER_BITS} bits")
    return p


def dispersion_eigenvalue(j: int, k: int) -> complex:
    """Eigenvalue i*k**(2j+1) of the dispersive generator on phi_k."""
    return complex(0.0, float(dispersion_power(j, k)))


def eigenvalue_gap(j: int, k: int) -> int:
    """Exact spacing |(k+1)**(2j+1) - k**(2j+1)| between neighbouring eigenvalues."""
    return abs(dispersion_power(j, k + 1) - dispersion_power(j, k))


def mode_indices(N: int) -> np.ndarray:
    return np.arange(-N, N + 1)


@lru_cache(maxsize=256)
def _powers_cached(j: int, N: int) -> np.ndarray:
    ints = [dispersion_power(j, k) for k in range(-N, N + 1)]
    out = np.array([float(p) for p in ints])
    out.flags.writeable = False
    return out


def dispersion_powers(j: int, N: int) -> np.ndarray:
    """Float array of k**(2j+1) for k = -N..N (exact when below 2**53)."""
    return _powers_cached(_check_order(j), int(N))


def unit_phases(powers: Sequence[int], t: float) -> np.ndarray:
    """exp(i * p * t) for exact integers p, with p*t reduced modulo 2*pi accurately.

    The time t is taken as the exact binary value of the float.  For large
    arguments the reduction is carried out in extended precision so that the
    phase is correct to double-precision round-off.
    """
    t = float(t)
    ints = [int(p) for p in powers]
    if not ints:
        return np.zeros(0, dtype=complex)
    pmax = max(abs(p) for p in ints)
    if pmax * abs(t) <= _DIRECT_PHASE_LIMIT:
        return np.exp(1j * np.array([float(p) for p in ints]) * t)
    return _reduced_phases(tuple(ints), t)


@lru_cache(maxsize=4096)
def _reduced_phases(ints: tuple, t: float) -> np.ndarray:
    mant, expo = math.frexp(t)
    big = max(abs(p) for p in ints) * max(abs(t), 1.0)
    dps = 30 + int(math.log10(big + 1.0))
    out = np.empty(len(ints), dtype=complex)
    with mpmath.workdps(dps):
        tt = mpmath.ldexp(mpmath.mpf(mant), expo)
        twopi = 2 * mpmath.pi
        for i, p in enumerate(ints):
            theta = mpmath.fmod(p * tt, twopi)
            out[i] = complex(math.cos(float(theta)), math.sin(float(theta)))
    out.flags.writeable = False
    return out


@lru_cache(maxsize=2048)
def _flow_phases(j: int, N: int, t: float) -> np.ndarray:
    ints = [dispersion_power(j, k) for k in range(-N, N + 1)]
    out = np.array(unit_phases(ints, t))
    out.flags.writeable = False
    return out


def flow_phases(j: int, N: int, t: float) -> np.ndarray:
    """Diagonal of W(t): exp(i t k**(2j+1)) for k = -N..N."""
    return _flow_phases(_check_order(j), int(N), float(t))


def hermitian_part(coeffs: np.ndarray) -> np.ndarray:
    """Project a coefficient vector onto the real-field subspace."""
    c = np.asarray(coeffs, dtype=complex)
    return 0.5 * (c + np.conj(c[::-1]))


@dataclass(frozen=True, eq=False)
class FourierField:
    """Real field on the circle stored through its coefficients c_k, |k| <= N.

    The array ``coeffs`` is ordered k = -N..N.  Realness is enforced on
    construction up to a small relative tolerance and then restored exactly.
    """

    order_j: int
    trunc_N: int
    coeffs: np.ndarray

    def __post_init__(self):
        _check_order(self.order_j)
        if int(self.trunc_N) != self.trunc_N or self.trunc_N < 0:
            raise ValueError(f"trunc_N must be a nonnegative integer, got {self.trunc_N!r}")
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        if c.size != 2 * self.trunc_N + 1:
            raise ValueError(f"expected {2 * self.trunc_N + 1} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        scale = np.max(np.abs(c)) if c.size else 0.0
        defect = np.max(np.abs(c - np.conj(c[::-1]))) if c.size else 0.0
        if defect > 1e-8 * max(scale, 1e-300):
            raise ValueError(f"coefficients are not Hermitian symmetric (defect {defect:.3e})")
        c = hermitian_part(c)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "order_j", int(self.order_j))
        object.__setattr__(self, "trunc_N", int(self.trunc_N))

    # construction helpers
    @classmethod
    def zeros(cls, j: int, N: int) -> "FourierField":
        return cls(j, N, np.zeros(2 * N + 1, dtype=complex))

    @classmethod
    def constant(cls, j: int, N: int, value: float) -> "FourierField":
        c = np.zeros(2 * N + 1, dtype=complex)
        c[N] = value * SQRT2PI
        return cls(j, N, c)

    @classmethod
    def mode(cls, j: int, N: int, k: int, amplitude: complex = 1.0) -> "FourierField":
        """amplitude*phi_k + conj(amplitude)*phi_{-k}; for k = 0 the amplitude must be real."""
        c = np.zeros(2 * N + 1, dtype=complex)
        if k == 0:
            c[N] = complex(amplitude).real
        else:
            c[N + k] += amplitude
            c[N - k] += np.conj(amplitude)
        return cls(j, N, c)

    @classmethod
    def from_samples(cls, j: int, N: int, samples: np.ndarray) -> "FourierField":
        return analyze(samples, N, j)

    @classmethod
    def from_function(cls, j: int, N: int, func, num_points: Optional[int] = None) -> "FourierField":
        """Project a callable f(x) onto |k| <= N by sampling on a fine uniform grid."""
        M = num_points or GridSpec.for_truncation(4 * N + 16).num_points
        x = 2.0 * np.pi * np.arange(M) / M
        return analyze(np.asarray(func(x), dtype=float), N, j)

    # views
    @property
    def N(self) -> int:
        return self.trunc_N

    @property
    def j(self) -> int:
        return self.order_j

    @property
    def modes(self) -> np.ndarray:
        return mode_indices(self.trunc_N)

    def coeff(self, k: int) -> complex:
        if abs(k) > self.trunc_N:
            return 0j
        return complex(self.coeffs[self.trunc_N + k])

    def with_coeffs(self, coeffs: np.ndarray) -> "FourierField":
        return FourierField(self.order_j, self.trunc_N, coeffs)

    def resize(self, N: int) -> "FourierField":
        """Zero-pad or truncate to a new truncation level."""
        out = np.zeros(2 * N + 1, dtype=complex)
        m = min(N, self.trunc_N)
        out[N - m:N + m + 1] = self.coeffs[self.trunc_N - m:self.trunc_N + m + 1]
        return FourierField(self.order_j, N, out)

    def _compatible(self, other: "FourierField"):
        if (self.order_j, self.trunc_N) != (other.order_j, other.trunc_N):
            raise ValueError("fields have different (j, N)")

    def __add__(self, other: "FourierField") -> "FourierField":
        self._compatible(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "FourierField") -> "FourierField":
        self._compatible(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "FourierField":
        return self.with_coeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "FourierField":
        return self.with_coeffs(-self.coeffs)

    def __repr__(self):
        return f"FourierField(j={self.order_j}, N={self.trunc_N}, l2={l2_norm(self):.6g})"


def random_field(j: int, N: int, rng: np.random.Generator, norm: float = 1.0,
                 mean: float = 0.0, decay: float = 1.0, max_mode: Optional[int] = None) -> FourierField:
    """Random real field with mean ``mean`` and mean-free L2 norm ``norm``.

    Complex Gaussian amplitudes are damped like <k>**(-decay); modes above
    ``max_mode`` are left at zero.
    """
    kmax = N if max_mode is None else min(max_mode, N)
    c = np.zeros(2 * N + 1, dtype=complex)
    k = np.arange(1, kmax + 1)
    z = (rng.standard_normal(kmax) + 1j * rng.standard_normal(kmax)) * (1.0 + k ** 2) ** (-decay / 2)
    c[N + 1:N + kmax + 1] = z
    c[N - kmax:N] = np.conj(z[::-1])
    nrm = np.linalg.norm(c)
    if nrm > 0:
        c *= norm / nrm
    c[N] = mean * SQRT2PI
    return FourierField(j, N, c)


def propagate(u: FourierField, t: float) -> FourierField:
    """Free dispersive flow W(t): coefficient k is multiplied by exp(i t k**(2j+1))."""
    return u.with_coeffs(u.coeffs * flow_phases(u.order_j, u.trunc_N, t))


def reflect(u: FourierField) -> FourierField:
    """Spatial reflection x -> -x, i.e. c_k -> c_{-k}."""
    return u.with_coeffs(u.coeffs[::-1].copy())


def bracket(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return np.sqrt(1.0 + k * k)


def sobolev_norm(u: FourierField, s: float = 0.0) -> float:
    w = bracket(u.modes) ** (2.0 * s)
    return float(np.sqrt(np.sum(w * np.abs(u.coeffs) ** 2)))


def l2_norm(u: FourierField) -> float:
    return float(np.linalg.norm(u.coeffs))


def inner(u: FourierField, v: FourierField) -> float:
    """Real L2 inner product (u, v)."""
    u._compatible(v)
    return float(np.real(np.vdot(v.coeffs, u.coeffs)))


def mean_value(u: FourierField) -> float:
    """Spatial average (1/2pi) * integral of u."""
    return float(u.coeffs[u.trunc_N].real) / SQRT2PI


def remove_mean(u: FourierField) -> FourierField:
    c = u.coeffs.copy()
    c[u.trunc_N] = 0.0
    return u.with_coeffs(c)


def derivative(u: FourierField, order: int = 1) -> FourierField:
    return u.with_coeffs(u.coeffs * (1j * u.modes) ** order)


@dataclass(frozen=True)
class GridSpec:
    """Uniform collocation grid x_m = 2 pi m / M with M a power of two."""

    num_points: int

    def __post_init__(self):
        M = self.num_points
        if int(M) != M or M < 2 or (int(M) & (int(M) - 1)):
            raise ValueError(f"num_points must be a power of two >= 2, got {M!r}")

    @classmethod
    def for_truncation(cls, N: int, dealias: bool = True) -> "GridSpec":
        """Smallest power-of-two grid serving products of two band-N fields.

        With ``dealias`` the grid has at least 2(2N+1) points, which keeps the
        product of two band-N fields, or of a band-2N and a band-N field,
        alias-free on |k| <= N.
        """
        need = 2 * (2 * N + 1) if dealias else 2 * N + 1
        return cls(1 << max(1, (need - 1).bit_length()))

    @property
    def x(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.num_points) / self.num_points


def _min_points_for(band_in: int, band_out: int) -> int:
    return band_in + band_out + 1


def place_on_grid(coeffs: np.ndarray, M: int) -> np.ndarray:
    """Scatter coefficients c_{-N..N} into FFT ordering of length M."""
    N = (len(coeffs) - 1) // 2
    if M < 2 * N + 1:
        raise AliasingError(f"grid of {M} points cannot hold |k| <= {N}")
    buf = np.zeros(M, dtype=complex)
    buf[:N + 1] = coeffs[N:]
    if N:
        buf[-N:] = coeffs[:N]
    return buf


def gather_from_grid(buf: np.ndarray, N: int) -> np.ndarray:
    out = np.empty(2 * N + 1, dtype=complex)
    out[N:] = buf[:N + 1]
    if N:
        out[:N] = buf[-N:]
    return out


def coeffs_to_samples(coeffs: np.ndarray, M: int) -> np.ndarray:
    """Complex samples of sum_k c_k phi_k on an M-point grid."""
    return np.fft.ifft(place_on_grid(coeffs, M)) * (M / SQRT2PI)


def samples_to_coeffs(samples: np.ndarray, N: int) -> np.ndarray:
    M = len(samples)
    return gather_from_grid(np.fft.fft(samples), N) * (SQRT2PI / M)


def synthesize(u: FourierField, grid: Optional[GridSpec] = None) -> np.ndarray:
    """Real samples of u on the grid."""
    grid = grid or GridSpec.for_truncation(u.trunc_N)
    if grid.num_points < 2 * u.trunc_N + 1:
        raise AliasingError(f"grid of {grid.num_points} points is too small for N={u.trunc_N}")
    return coeffs_to_samples(u.coeffs, grid.num_points).real


def analyze(samples: np.ndarray, N: int, j: int = 1) -> FourierField:
    """Coefficients |k| <= N of real samples taken on a uniform grid."""
    samples = np.asarray(samples, dtype=float)
    M = samples.size
    if M < 2 * N + 1:
        raise AliasingError(f"{M} samples cannot resolve |k| <= {N}")
    return FourierField(j, N, samples_to_coeffs(samples, N))


def product_coeffs(a: np.ndarray, b: np.ndarray, N_out: int) -> np.ndarray:
    """Coefficients |k| <= N_out of the pointwise product of two band-limited functions.

    The collocation grid is chosen large enough that no aliased mode lands in
    the retained band, so the result is exact up to round-off.
    """
    Na = (len(a) - 1) // 2
    Nb = (len(b) - 1) // 2
    need = max(_min_points_for(Na + Nb, N_out), 2 * max(Na, Nb, N_out) + 1)
    M = 1 << max(1, (need - 1).bit_length())
    prod = coeffs_to_samples(a, M) * coeffs_to_samples(b, M)
    return samples_to_coeffs(prod, N_out)


def dealiased_product(u: FourierField, v: FourierField) -> FourierField:
    u._compatible(v)
    return u.with_coeffs(hermitian_part(product_coeffs(u.coeffs, v.coeffs, u.trunc_N)))


def conserved_quantities(u: FourierField):
    """Mass, energy and Hamiltonian (M, E, H) of a real field.

    H = integral of (d^j u)^2 / 2 - u^3 / 6; the cubic integral is evaluated on
    a grid fine enough (M >= 3N+1) to be exact for a band-N field.
    """
    N, j = u.trunc_N, u.order_j
    k = u.modes.astype(float)
    absc2 = np.abs(u.coeffs) ** 2
    mass = float(u.coeffs[N].real) * SQRT2PI
    energy = float(np.sum(absc2))
    kinetic = 0.5 * float(np.sum(k ** (2 * j) * absc2))
    M = 1 << max(1, (3 * N).bit_length())
    vals = coeffs_to_samples(u.coeffs, M).real
    cubic = float(np.sum(vals ** 3)) * (2.0 * np.pi / M)
    return mass, energy, kinetic - cubic / 6.0


# snapshot files

def write_field_csv(u: FourierField, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# j={u.order_j}\n# N={u.trunc_N}\n# convention={CONVENTION_TAG}\n")
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["k", "re", "im"])
        for k, c in zip(u.modes, u.coeffs):
            w.writerow([int(k), repr(float(c.real)), repr(float(c.imag))])


def read_field_csv(path) -> FourierField:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    if meta.get("convention", CONVENTION_TAG) != CONVENTION_TAG:
        raise ValueError(f"unsupported coefficient convention {meta['convention']!r}")
    reader = csv.DictReader(body)
    for rec in reader:
        rows.append((int(rec["k"]), float(rec["re"]), float(rec["im"])))
    if not rows:
        raise ValueError(f"{path}: no coefficient rows")
    N = int(meta.get("N", max(abs(r[0]) for r in rows)))
    j = int(meta.get("j", 1))
    c = np.zeros(2 * N + 1, dtype=complex)
    for k, re, im in rows:
        if abs(k) > N:
            raise ValueError(f"{path}: mode {k} exceeds N={N}")
        c[N + k] = complex(re, im)
    return FourierField(j, N, c)

"""Numerical checks of the elementary and harmonic-analysis lemmas.

* the eigenvalue gap |(k+1)^(2j+1) - k^(2j+1)| >= k^2 for |k| >= j+1,
* the polynomial identities for h_j(x) = x^(2j+1) + (c-x)^(2j+1),
* the counting sum behind the L4 Strichartz bound and its supremum,
* discrete X^{s,b} and L4 norms of space-time samples, and L4 / X^{0,b}
  ratios over random ensembles.

Space-time transforms use f~(tau, k) = (2 pi)^{-1/2} int a_k(t) exp(-i tau t) dt,
where a_k(t) is the unitary spatial coefficient, so X^{0,0} is the L2 norm on
R x circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import scipy.optimize
from numpy.polynomial.legendre import leggauss

from .errors import RangeError, ResolutionError
from .spectral import SQRT2PI, dispersion_power, eigenvalue_gap

# ---------------------------------------------------------------- gap condition


@dataclass
class GapReport:
    j: int
    k_max: int
    ok: bool
    checked: int
    counterexample: Optional[int]
    monotone: bool
    min_margin: int  # min over checked k of gap - k^2

    def as_dict(self) -> dict:
        return {"j": self.j, "k_max": self.k_max, "ok": self.ok, "checked": self.checked,
                "counterexample": self.counterexample, "monotone": self.monotone,
                "min_margin": self.min_margin}


def check_gap(j: int, k_max: int) -> GapReport:
    """Exhaustive integer check of gap(k) >= k^2 for j+1 <= |k| <= k_max.

    Also checks that the gap grows strictly with |k| on each side, which is
    what makes it unbounded.
    """
    if k_max < j + 1:
        raise ValueError(f"k_max must be at least j+1 = {j + 1}")
    first_bad = None
    margin = None
    checked = 0
    monotone = True
    for sign in (1, -1):
        prev = None
        for m in range(j + 1, k_max + 1):
            k = sign * m
            g = eigenvalue_gap(j, k)
            d = g - k * k
            checked += 1
            margin = d if margin is None else min(margin, d)
            if d < 0 and first_bad is None:
                first_bad = k
            if prev is not None and g <= prev:
                monotone = False
            prev = g
    return GapReport(j, k_max, first_bad is None, checked, first_bad, monotone, margin)


# ----------------------------------------------------------------- h_j identities


def hj_eval(j: int, c, x):
    """h_j(x) = x^(2j+1) + (c - x)^(2j+1)."""
    p = 2 * j + 1
    return x ** p + (c - x) ** p


def hj_derivative(j: int, c, x):
    p = 2 * j + 1
    return p * (x ** (p - 1) - (c - x) ** (p - 1))


def hj_second_derivative(j: int, c, x):
    p = 2 * j + 1
    return p * (p - 1) * (x ** (p - 2) + (c - x) ** (p - 2))


def hj_center_value(m: int, c):
    """h_m(c/2) = 2 (c/2)^(2m+1)."""
    return 2.0 * (0.5 * c) ** (2 * m + 1)


def hj_even_expansion(j: int, c, x):
    """sum_n C(2j+1, 2n) h_{j-n}(c/2) (x - c/2)^(2n)."""
    y = x - 0.5 * c
    return sum(math.comb(2 * j + 1, 2 * n) * hj_center_value(j - n, c) * y ** (2 * n)
               for n in range(j + 1))


def _partial_geometric(y, a, n: int):
    """sum_{l=0}^{n-1} y^(2n-2-2l) a^(2l)."""
    return sum(y ** (2 * n - 2 - 2 * l) * a ** (2 * l) for l in range(n))


def hj_factored(j: int, c, x, alpha):
    """(y+a)(y-a) sum_{n>=1} C h_{j-n} S_n(y, a) + sum_n C h_{j-n} a^(2n), y = x - c/2."""
    y = x - 0.5 * c
    first = sum(math.comb(2 * j + 1, 2 * n) * hj_center_value(j - n, c) * _partial_geometric(y, alpha, n)
                for n in range(1, j + 1))
    second = sum(math.comb(2 * j + 1, 2 * n) * hj_center_value(j - n, c) * alpha ** (2 * n)
                 for n in range(j + 1))
    return (y + alpha) * (y - alpha) * first + second


def _rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return np.abs(a - b) / scale


HJ_CHECKS = ("symmetry", "positivity", "critical_point", "convexity", "minimum",
             "even_expansion", "factored_form", "telescoping")


@dataclass
class HjReport:
    j: int
    trials: int
    rtol: float
    max_errors: dict
    passed: dict

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> dict:
        return {"j": self.j, "trials": self.trials, "rtol": self.rtol,
                "max_errors": dict(self.max_errors), "passed": dict(self.passed), "ok": self.ok}


def hj_identity_suite(j: int, trials: int, rng: np.random.Generator, rtol: float = 1e-9) -> HjReport:
    """Eight checks of the h_j identities on random (c, x, alpha), vectorized.

    Samples: c in (0.1, 10), x = c/2 + c u with u in (-1, 1), alpha = c v with
    v in (0, 1/2).  On this box the factored form cancels by at most about
    six digits, so double precision resolves the 1e-9 tolerance.  Checks that
    are inequalities report the most negative slack (0 when satisfied).
    """
    c = rng.uniform(0.1, 10.0, trials)
    u = rng.uniform(-1.0, 1.0, trials)
    x = 0.5 * c + c * u
    alpha = c * rng.uniform(0.0, 0.5, trials)
    h = hj_eval(j, c, x)
    hmid = hj_center_value(j, c)
    err = {}
    # (1) symmetry about c/2
    err["symmetry"] = float(np.max(_rel(hj_eval(j, c, 0.5 * c + c * u), hj_eval(j, c, 0.5 * c - c * u))))
    # (2) positivity
    err["positivity"] = float(max(0.0, -np.min(h / np.abs(h).max())))
    # (3) critical point at c/2, derivative by complex step (independent of the formula)
    step = 1e-30 * c
    cs = np.imag(hj_eval(j, c.astype(complex), 0.5 * c + 1j * step)) / step
    scale = (2 * j + 1) * (0.5 * c) ** (2 * j)
    err["critical_point"] = float(np.max(np.abs(cs) / scale))
    # (4) convexity: closed-form h'' against complex step of h', and h'' > 0
    d2 = hj_second_derivative(j, c, x)
    d2cs = np.imag(hj_derivative(j, c.astype(complex), x + 1j * step)) / step
    neg = float(max(0.0, -np.min(d2)))
    err["convexity"] = max(float(np.max(_rel(d2, d2cs))), neg)
    # (5) global minimum at c/2
    slack = (h - hmid) / np.maximum(h, 1e-300)
    err["minimum"] = float(max(0.0, -np.min(slack)))
    # (6) even expansion about c/2
    err["even_expansion"] = float(np.max(_rel(hj_even_expansion(j, c, x), h)))
    # (7) factored form with random alpha
    err["factored_form"] = float(np.max(_rel(hj_factored(j, c, x, alpha), h)))
    # (8) telescoping y^(2n) = (y+a)(y-a) S_n + a^(2n), n = 1..j
    y = x - 0.5 * c
    tel = 0.0
    for n in range(1, j + 1):
        lhs = y ** (2 * n)
        rhs = (y + alpha) * (y - alpha) * _partial_geometric(y, alpha, n) + alpha ** (2 * n)
        scale_n = np.maximum(np.abs(y), alpha) ** (2 * n)
        tel = max(tel, float(np.max(np.abs(lhs - rhs) / np.maximum(scale_n, 1e-300))))
    err["telescoping"] = tel
    passed = {name: bool(err[name] <= rtol) for name in HJ_CHECKS}
    return HjReport(j, trials, rtol, err, passed)


# ------------------------------------------------------- Strichartz counting sum


def threshold_b(j: int) -> Fraction:
    """(j+1) / (2(2j+1)) as an exact rational."""
    return Fraction(j + 1, 2 * (2 * j + 1))


def _as_exact(tau):
    if isinstance(tau, (int, Fraction)):
        return tau
    return Fraction(float(tau))


def _bracket_pow(diff, expo: float):
    return (1.0 + diff * diff) ** (0.5 * expo)


def resonance_alpha(j: int, k: int, tau) -> Optional[float]:
    """alpha >= 0 with h_j(k/2 + alpha) = tau (c = k), or None if tau <= h_j(k/2)."""
    c = float(k)
    tau = float(tau)
    base = hj_center_value(j, c)
    if tau <= base:
        return None
    coef = [math.comb(2 * j + 1, 2 * n) * hj_center_value(j - n, c) for n in range(j + 1)]

    def f(a):
        return sum(cf * a ** (2 * n) for n, cf in enumerate(coef)) - tau

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return float(scipy.optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500))


@dataclass
class StrichartzSum:
    value: float
    terms: int
    count_A: int
    count_plus: int
    count_minus: int
    alpha: Optional[float]


def strichartz_sum(j: int, b: float, tau, k: int, k1_max: Optional[int] = None) -> StrichartzSum:
    """sum over k1 > 1, k - k1 > 1 (and |k1| <= k1_max) of <tau - k1^p - (k-k1)^p>^(1-4b).

    The difference tau - resonance is formed exactly (tau is converted to an
    exact rational) before rounding.  Also counts the admissible k1 in
    A = {|k1 - k/2| <= 1} and Omega_pm = {|k1 - k/2 pm alpha| <= 1}.
    """
    if not b > 0.25:
        raise ValueError("b must exceed 1/4")
    if k <= 1:
        raise ValueError("k must exceed 1")
    expo = 1.0 - 4.0 * b
    hi = k - 2 if k1_max is None else min(k - 2, k1_max)
    t = _as_exact(tau)
    total = 0.0
    ks = list(range(2, hi + 1))
    for k1 in ks:
        r = dispersion_power(j, k1) + dispersion_power(j, k - k1)
        total += _bracket_pow(float(t - r), expo)
    alpha = resonance_alpha(j, k, t)
    half = 0.5 * k
    cA = sum(1 for k1 in ks if abs(k1 - half) <= 1)
    if alpha is None:
        cp = cm = 0
    else:
        cp = sum(1 for k1 in ks if abs(k1 - half + alpha) <= 1)
        cm = sum(1 for k1 in ks if abs(k1 - half - alpha) <= 1)
    return StrichartzSum(total, len(ks), cA, cp, cm, alpha)


def _resonances(j: int, k: int) -> np.ndarray:
    k1 = range(2, k - 1)
    vals = [dispersion_power(j, a) + dispersion_power(j, k - a) for a in k1]
    if vals and max(vals) >= 2 ** 53:
        raise RangeError(f"resonance values for j={j}, k={k} exceed exact float range")
    return np.array(vals, dtype=float)


def tau_grid_for(j: int, k: int, tau_max: float, coarse: int = 65) -> np.ndarray:
    """Candidate tau values for one k: resonances and their midpoints inside
    [-tau_max, tau_max], the interval ends, and a uniform coarse grid."""
    r = _resonances(j, k)
    pts = [np.linspace(-tau_max, tau_max, coarse)]
    if r.size:
        rs = np.unique(r)
        pts.append(rs)
        if rs.size > 1:
            pts.append(0.5 * (rs[1:] + rs[:-1]))
    g = np.concatenate(pts)
    g = g[np.abs(g) <= tau_max]
    return np.unique(g)


def _sums_on_grid(r: np.ndarray, taus: np.ndarray, expo: float) -> np.ndarray:
    if not r.size:
        return np.zeros(taus.size)
    out = np.empty(taus.size)
    step = max(1, 2_000_000 // max(r.size, 1))
    for s in range(0, taus.size, step):
        d = taus[s:s + step, None] - r[None, :]
        out[s:s + step] = np.sum((1.0 + d * d) ** (0.5 * expo), axis=1)
    return out


@dataclass
class ScanResult:
    j: int
    b: float
    k_max: int
    tau_max: float
    sup: float
    argmax: tuple
    max_count_A: int
    max_count_omega: int
    table: list = field(default_factory=list)  # rows (tau, k, M) of per-k maxima


def sup_M_scan(j: int, b: float, k_max: int, tau_max: float, coarse: int = 65) -> ScanResult:
    """Maximum of the counting sum over 2 <= k <= k_max and tau in [-tau_max, tau_max].

    The tau candidates for each k cluster on the resonance values (where the
    summand peaks) with a coarse uniform far-field grid; see ``tau_grid_for``.
    """
    if not b > 0.25:
        raise ValueError("b must exceed 1/4")
    expo = 1.0 - 4.0 * b
    best, arg = -1.0, (0.0, 2)
    table = []
    mA = mO = 0
    for k in range(2, k_max + 1):
        taus = tau_grid_for(j, k, tau_max, coarse)
        vals = _sums_on_grid(_resonances(j, k), taus, expo)
        i = int(np.argmax(vals))
        table.append((float(taus[i]), k, float(vals[i])))
        if vals[i] > best:
            best, arg = float(vals[i]), (float(taus[i]), k)
        if k >= 4:
            rep = strichartz_sum(j, b, float(taus[i]), k)
            mA = max(mA, rep.count_A)
            mO = max(mO, rep.count_plus, rep.count_minus)
    return ScanResult(j, b, k_max, tau_max, max(best, 0.0), arg, mA, mO, table)


@dataclass
class PlateauReport:
    j: int
    b: float
    sups: list  # (k_max, tau_max, sup)
    growth: float  # relative increase over the last doubling
    plateau: bool
    max_count: int


def plateau_check(j: int, b: float, k_max: int, tau_max: float, doublings: int = 1,
                  tol: float = 0.01) -> PlateauReport:
    """Run sup_M_scan on (k_max, tau_max) and its doublings; plateau means the
    last relative increase is at most ``tol``."""
    sups = []
    mc = 0
    for d in range(doublings + 1):
        res = sup_M_scan(j, b, k_max * 2 ** d, tau_max * 2 ** d)
        sups.append((res.k_max, res.tau_max, res.sup))
        mc = max(mc, res.max_count_A, res.max_count_omega)
    growth = sups[-1][2] / sups[-2][2] - 1.0
    return PlateauReport(j, b, sups, float(growth), bool(growth <= tol), mc)


# ------------------------------------------------------------ space-time norms


def window(t):
    """Raised cosine of length 2: (1 + cos(pi t)) / 2 on [-1, 1]."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * t)), 0.0)


def _sinc_int(a):
    """int_{-1}^{1} exp(i a t) dt = 2 sin(a) / a."""
    a = np.asarray(a, dtype=float)
    out = np.full(a.shape, 2.0)
    nz = a != 0
    out[nz] = 2.0 * np.sin(a[nz]) / a[nz]
    return out


def window_hat(sigma):
    """Unitary Fourier transform of ``window``."""
    s = np.asarray(sigma, dtype=float)
    return 0.5 * (_sinc_int(s) + 0.5 * (_sinc_int(s - np.pi) + _sinc_int(s + np.pi))) / SQRT2PI


# (1 + cos)^4 = 35/8 + 7 cos + 7/2 cos 2 + cos 3 + 1/8 cos 4
_FOURTH_POWER = (35.0 / 8.0, 7.0, 3.5, 1.0, 0.125)


def window4_hat(xi, delta: float = 1.0):
    """int window(t/delta)^4 exp(-i xi t) dt."""
    x = delta * np.asarray(xi, dtype=float)
    out = _FOURTH_POWER[0] * _sinc_int(x)
    for m in range(1, 5):
        out = out + _FOURTH_POWER[m] * 0.5 * (_sinc_int(x - m * np.pi) + _sinc_int(x + m * np.pi))
    return delta * out / 16.0


def modulation_weight(d: float, b: float, delta: float = 1.0, span: float = 400.0,
                      nodes: int = 16) -> float:
    """int <sigma + d>^(2b) |eta_delta^(sigma)|^2 d sigma, eta_delta(t) = window(t/delta).

    Substituting s = delta sigma leaves a smooth integrand except for a
    near-kink at s = -delta d of width delta; panels are graded towards it.
    The tail beyond |s| = span is below 1e-10 relative for b < 1.
    """
    s0 = -delta * d
    edges = set(np.linspace(-span, span, int(2 * span) + 1).tolist())
    if abs(s0) < span:
        edges.add(s0)
        for m in range(1, 60):
            w = 2.0 ** (-m)
            if w < 1e-3 * delta:
                break
            for e in (s0 - w, s0 + w):
                if abs(e) < span:
                    edges.add(e)
    e = np.array(sorted(edges))
    xg, wg = leggauss(nodes)
    mid = 0.5 * (e[1:] + e[:-1])
    half = 0.5 * (e[1:] - e[:-1])
    s = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    arg = s / delta + d
    f = (1.0 + arg * arg) ** b * window_hat(s) ** 2
    return float(delta * np.sum(w * f))


@dataclass(frozen=True, eq=False)
class SpaceTimeSample:
    """Space-time Fourier data f~(tau_p, k) on a symmetric tau grid.

    tau_p = p * 2 pi / t_span for |p| <= (M_t - 1)/2 (M_t odd); rows index tau,
    columns index k = -N..N.  The matching time grid is
    t_n = (n - (M_t - 1)/2) * t_span / M_t.
    """

    j: int
    N: int
    M_t: int
    t_span: float
    values: np.ndarray

    def __post_init__(self):
        if self.M_t % 2 != 1 or self.M_t < 3:
            raise ValueError("M_t must be odd and at least 3")
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.M_t, 2 * self.N + 1):
            raise ValueError(f"values must have shape ({self.M_t}, {2 * self.N + 1})")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if self.parseval_defect() > 1e-10:
            raise ValueError("sample fails Parseval consistency")

    @property
    def dtau(self) -> float:
        return 2.0 * math.pi / self.t_span

    @property
    def dt(self) -> float:
        return self.t_span / self.M_t

    @property
    def taus(self) -> np.ndarray:
        h = (self.M_t - 1) // 2
        return self.dtau * np.arange(-h, h + 1)

    @property
    def times(self) -> np.ndarray:
        h = (self.M_t - 1) // 2
        return self.dt * np.arange(-h, h + 1)

    @staticmethod
    def _phase(M: int) -> np.ndarray:
        # exp(-i tau_p t_n) = exp(-2 pi i (p)(n - h) / M); the -h shift is a phase on p
        h = (M - 1) // 2
        p = np.arange(-h, h + 1)
        return np.exp(2j * np.pi * p * h / M)

    @classmethod
    def from_time_coeffs(cls, j: int, N: int, t_span: float, a: np.ndarray) -> "SpaceTimeSample":
        """Build from unitary spatial coefficients a[n, k] at the times t_n."""
        a = np.asarray(a, dtype=complex)
        M = a.shape[0]
        h = (M - 1) // 2
        F = np.fft.fft(a, axis=0)  # sum_n a_n exp(-2 pi i q n / M)
        F = np.roll(F, h, axis=0)  # row p + h holds frequency p
        vals = F * cls._phase(M)[:, None] * (t_span / M / SQRT2PI)
        return cls(j, N, M, float(t_span), vals)

    @classmethod
    def from_function(cls, j: int, N: int, t_span: float, M_t: int, func) -> "SpaceTimeSample":
        """func(t) -> (len(t), 2N+1) array of unitary coefficients."""
        h = (M_t - 1) // 2
        t = (t_span / M_t) * np.arange(-h, h + 1)
        return cls.from_time_coeffs(j, N, t_span, func(t))

    def time_coeffs(self, M: Optional[int] = None) -> np.ndarray:
        """Inverse transform, optionally on a finer time grid of M (odd) points."""
        M = self.M_t if M is None else M
        if M % 2 != 1 or M < self.M_t:
            raise ValueError("M must be odd and at least M_t")
        h, hs = (M - 1) // 2, (self.M_t - 1) // 2
        buf = np.zeros((M, 2 * self.N + 1), dtype=complex)
        buf[h - hs:h + hs + 1] = self.values / self._phase(M)[h - hs:h + hs + 1, None]
        buf = np.roll(buf, -h, axis=0)
        return np.fft.ifft(buf, axis=0) * (M * SQRT2PI / self.t_span)

    def physical(self, M_x: int, M: Optional[int] = None) -> np.ndarray:
        """Samples f(t_n, x_m), x_m = 2 pi m / M_x."""
        if M_x < 2 * self.N + 1:
            raise ResolutionError("spatial grid too coarse")
        a = self.time_coeffs(M)
        buf = np.zeros((a.shape[0], M_x), dtype=complex)
        buf[:, :self.N + 1] = a[:, self.N:]
        if self.N:
            buf[:, -self.N:] = a[:, :self.N]
        return np.fft.ifft(buf, axis=1) * (M_x / SQRT2PI)

    def parseval_defect(self) -> float:
        """Relative mismatch of the L2 norm from physical samples and from f~."""
        spec = float(np.sum(np.abs(self.values) ** 2)) * self.dtau
        M_x = 2 * self.N + 2
        f = self.physical(M_x)
        phys = float(np.sum(np.abs(f) ** 2)) * self.dt * (2.0 * math.pi / M_x)
        return abs(spec - phys) / max(spec, phys, 1e-300)


def _check_resolution(sample: SpaceTimeSample) -> None:
    top = float(dispersion_power(sample.j, sample.N))
    if sample.dtau > 1.0:
        raise ResolutionError(
            f"tau spacing {sample.dtau:.3g} exceeds 1; the weight <tau - k^(2j+1)> varies on unit scale")
    if sample.taus[-1] < top:
        raise ResolutionError(
            f"tau grid reaches {sample.taus[-1]:.4g} but k^(2j+1) reaches {top:.4g}")


def discrete_xsb_norm(sample: SpaceTimeSample, s: float, b: float) -> float:
    """(sum_k int <k>^(2s) <tau - k^(2j+1)>^(2b) |f~|^2 dtau)^(1/2), trapezoid in tau."""
    _check_resolution(sample)
    k = np.arange(-sample.N, sample.N + 1)
    w = np.array([float(dispersion_power(sample.j, int(q))) for q in k])
    dif = sample.taus[:, None] - w[None, :]
    weight = (1.0 + dif * dif) ** b * (1.0 + k * k)[None, :] ** s
    integrand = np.sum(weight * np.abs(sample.values) ** 2, axis=1)
    return math.sqrt(float(np.trapezoid(integrand, dx=sample.dtau)))


def l4_norm(sample: SpaceTimeSample, oversample: int = 2) -> float:
    """(int int |f|^4 dx dt)^(1/4) on a grid fine enough for |f|^4 in x, with the
    time grid refined by ``oversample`` through zero padding in tau."""
    M = oversample * sample.M_t
    M += 1 - M % 2
    M_x = 1
    while M_x < 4 * sample.N + 1:
        M_x *= 2
    f = sample.physical(M_x, M)
    val = float(np.sum(np.abs(f) ** 4)) * (sample.t_span / M) * (2.0 * math.pi / M_x)
    return val ** 0.25


def windowed_tone(j: int, N: int, k0: int, tau0: float, t_span: float, M_t: int,
                  amplitude: complex = 1.0) -> SpaceTimeSample:
    """f = amplitude * window(t) exp(i tau0 t) exp(i k0 x), real part not taken."""
    def func(t):
        a = np.zeros((t.size, 2 * N + 1), dtype=complex)
        a[:, N + k0] = amplitude * SQRT2PI * window(t) * np.exp(1j * tau0 * t)
        return a
    return SpaceTimeSample.from_function(j, N, t_span, M_t, func)


def windowed_tone_xsb(j: int, k0: int, tau0: float, s: float, b: float,
                      amplitude: complex = 1.0) -> float:
    """Continuous X^{s,b} norm of ``windowed_tone`` (the oracle)."""
    d = float(Fraction(tau0) - dispersion_power(j, k0))
    w = modulation_weight(d, b)
    return abs(amplitude) * math.sqrt(2.0 * math.pi * w) * (1.0 + k0 * k0) ** (0.5 * s)


# --------------------------------------------------------------- L4 ensembles


def free_packet_xsb(coeffs: np.ndarray, b: float, delta: float) -> float:
    """X^{0,b} norm of eta(t/delta) sum_k c_k exp(i k x + i k^(2j+1) t)."""
    w = modulation_weight(0.0, b, delta)
    return math.sqrt(2.0 * math.pi * w * float(np.sum(np.abs(coeffs) ** 2)))


def free_packet_l4(j: int, coeffs: np.ndarray, delta: float) -> np.ndarray:
    """L4 norms of eta(t/delta) sum_k c_k exp(i k x + i k^(2j+1) t) for each row of coeffs.

    |f|^4 integrates in x to 2 pi sum_K |sum_{k1+k2=K} c_k1 c_k2 exp(i W t)|^2,
    W = k1^(2j+1) + k2^(2j+1); the time integral against eta^4 is closed form.
    """
    c = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    N = (c.shape[1] - 1) // 2
    if dispersion_power(j, N) >= 2 ** 52:
        raise RangeError("frequencies too large for exact float differences")
    pw = np.array([dispersion_power(j, k) for k in range(-N, N + 1)], dtype=np.int64)
    total = np.zeros(c.shape[0])
    for K in range(-2 * N, 2 * N + 1):
        k1 = np.arange(max(-N, K - N), min(N, K + N) + 1)
        k2 = K - k1
        cp = c[:, k1 + N] * c[:, k2 + N]
        om = pw[k1 + N] + pw[k2 + N]
        H = window4_hat((om[:, None] - om[None, :]).astype(float), delta)
        total += np.real(np.einsum("rp,pq,rq->r", cp, H, cp.conj()))
    return (2.0 * math.pi * np.maximum(total, 0.0)) ** 0.25


def free_packet_sample(j: int, coeffs: np.ndarray, delta: float, t_span: float, M_t: int) -> SpaceTimeSample:
    """The same free packet as a SpaceTimeSample (used to cross-check the closed forms)."""
    c = np.asarray(coeffs, dtype=complex)
    N = (c.size - 1) // 2
    pw = np.array([float(dispersion_power(j, k)) for k in range(-N, N + 1)])

    def func(t):
        return SQRT2PI * window(t / delta)[:, None] * c[None, :] * np.exp(1j * np.outer(t, pw))
    return SpaceTimeSample.from_function(j, N, t_span, M_t, func)


ENSEMBLE_FAMILIES = ("gaussian", "aligned")


@dataclass
class EnsembleResult:
    j: int
    N: int
    b: float
    members: list  # (family, time-scale exponent, draw, ratio)
    max_ratio: float

    def family_max(self, family: str) -> float:
        return max(r for f, _, _, r in self.members if f == family)


def l4_ratio_ensemble(j: int, N: int, b: float, rng: np.random.Generator, draws: int = 4,
                      scale_exponents: Sequence[float] = (0.0, 0.5, 1.0)) -> EnsembleResult:
    """L4 / X^{0,b} over random free packets eta(t/delta) sum c_k e^{i(kx + k^(2j+1) t)}.

    Coefficients: "gaussian" draws iid complex normal c_k; "aligned" keeps the
    Gaussian magnitudes |c_k| with a common phase, so the packet focuses at
    (0, 0).  Time scales delta = N^(-e (2j+1)) for each exponent e.
    """
    members = []
    z = rng.standard_normal((draws, 2 * N + 1)) + 1j * rng.standard_normal((draws, 2 * N + 1))
    fam = {"gaussian": z, "aligned": np.abs(z).astype(complex)}
    for e in scale_exponents:
        delta = float(N) ** (-e * (2 * j + 1))
        w = modulation_weight(0.0, b, delta)
        for name in ENSEMBLE_FAMILIES:
            c = fam[name]
            l4 = free_packet_l4(j, c, delta)
            xn = np.sqrt(2.0 * math.pi * w * np.sum(np.abs(c) ** 2, axis=1))
            for d in range(draws):
                members.append((name, float(e), d, float(l4[d] / xn[d])))
    return EnsembleResult(j, N, b, members, max(m[3] for m in members))


@dataclass
class RatioTrend:
    j: int
    b: float
    Ns: list
    max_ratios: list
    variation: float  # (max - min) / min over N
    increasing: bool

    def as_dict(self) -> dict:
        return {"j": self.j, "b": self.b, "N": list(self.Ns), "max_ratio": list(self.max_ratios),
                "variation": self.variation, "increasing": self.increasing}


def l4_ratio_trend(j: int, b: float, Ns: Sequence[int] = (16, 32, 64), seed: int = 0,
                   draws: int = 4) -> RatioTrend:
    """Max ensemble ratio for each N, with one seeded generator per N."""
    out = []
    for N in Ns:
        rng = np.random.default_rng([seed, N])
        out.append(l4_ratio_ensemble(j, N, b, rng, draws).max_ratio)
    var = (max(out) - min(out)) / min(out)
    inc = all(b2 > a for a, b2 in zip(out, out[1:]))
    return RatioTrend(j, float(b), list(Ns), out, float(var), bool(inc))

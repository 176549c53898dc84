"""Exact control of the linearized equation by the biorthogonal moment method.

For a horizon T and a symmetric set K of nonzero modes, the exponentials
p_k(t) = exp(i k**(2j+1) t) are linearly independent on (0, T).  A dual family
q_k = sum_m C[k, m] p_m with integral_0^T q_k conj(p_m) dt = delta_km is built
from the closed-form Gram matrix.  A control h(t, x) = sum_k h_k q_k(t) (G phi_k)(x)
then moves mode k exactly by h_k * beta_k, with beta_k = ||G phi_k||^2, which
fixes the coefficients h_k in closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .control import ControlProfile, beta, g_matrix
from .errors import (DegenerateProfileError, IllPosedHorizonError,
                     PartialControllabilityError)
from .forcing import ExponentialForcing
from .spectral import (FourierField, bracket, dispersion_power, flow_phases,
                       hermitian_part, mean_value, sobolev_norm, unit_phases)

log = logging.getLogger(__name__)

DEFAULT_COND_MAX = 1e12


def symmetric_mode_set(n_modes: int) -> tuple:
    """K = {-n, ..., -1, 1, ..., n}."""
    if n_modes < 1:
        raise ValueError("need at least one mode")
    return tuple(range(-n_modes, 0)) + tuple(range(1, n_modes + 1))


def gram_matrix(j: int, T: float, mode_set: Sequence[int]) -> np.ndarray:
    """Entry (m, k) = integral_0^T exp(i (k**(2j+1) - m**(2j+1)) t) dt, in closed form."""
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T!r}")
    modes = [int(k) for k in mode_set]
    if 0 in modes:
        raise ValueError("the mean mode k = 0 cannot be part of the mode set")
    w = [dispersion_power(j, k) for k in modes]
    n = len(modes)
    out = np.empty((n, n), dtype=complex)
    diffs = np.array([[wk - wm for wk in w] for wm in w], dtype=object)
    flat = [int(d) for d in diffs.ravel()]
    phases = unit_phases(flat, T).reshape(n, n)
    dd = np.array(flat, dtype=float).reshape(n, n)
    zero = dd == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(zero, T, (phases - 1.0) / (1j * np.where(zero, 1.0, dd)))
    return out


def dual_basis(gram: np.ndarray, cond_max: float = DEFAULT_COND_MAX):
    """Coefficients C of the dual family, q_k = sum_m C[k, m] p_m.

    Returns (C, condition_number).  Biorthogonality reads C @ gram.T = I.
    """
    cond = float(np.linalg.cond(gram))
    if not cond < cond_max:
        raise IllPosedHorizonError(
            f"Gram condition number {cond:.3e} exceeds {cond_max:.1e}; "
            "use a longer horizon or fewer modes")
    C = np.linalg.inv(gram.T)
    return C, cond


@dataclass(frozen=True, eq=False)
class MomentSystem:
    """Gram matrix and dual family of the exponentials on (0, T) over a mode set."""

    j: int
    horizon_T: float
    mode_set: tuple
    gram: np.ndarray
    dual_coeffs: np.ndarray
    cond_estimate: float

    @property
    def freqs(self) -> tuple:
        return tuple(dispersion_power(self.j, k) for k in self.mode_set)

    @property
    def size(self) -> int:
        return len(self.mode_set)

    def biorthogonality_residual(self) -> float:
        eye = np.eye(self.size)
        return float(np.max(np.abs(self.dual_coeffs @ self.gram.T - eye)))

    def dual_values(self, t) -> np.ndarray:
        """q_k(t) for all k in the mode set; shape (len(t), |K|)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        P = np.array([unit_phases(self.freqs, ti) for ti in t])
        return P @ self.dual_coeffs.T


def assemble_moment_system(j: int, T: float, n_modes: Optional[int] = None,
                           mode_set: Optional[Sequence[int]] = None,
                           cond_max: float = DEFAULT_COND_MAX) -> MomentSystem:
    if mode_set is None:
        mode_set = symmetric_mode_set(int(n_modes))
    mode_set = tuple(int(k) for k in mode_set)
    gram = gram_matrix(j, T, mode_set)
    C, cond = dual_basis(gram, cond_max)
    system = MomentSystem(j, float(T), mode_set, gram, C, cond)
    res = system.biorthogonality_residual()
    if res > 1e-10:
        raise IllPosedHorizonError(f"biorthogonality residual {res:.3e} exceeds 1e-10")
    return system


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """h(t, x) = sum_k h_k q_k(t) (G phi_k)(x), optionally followed by a correction signal."""

    system: MomentSystem
    h_coeffs: np.ndarray
    correction: Optional["ControlSignal"] = None

    def chain(self):
        sig = self
        while sig is not None:
            yield sig
            sig = sig.correction

    def with_correction(self, extra: "ControlSignal") -> "ControlSignal":
        if self.correction is None:
            return ControlSignal(self.system, self.h_coeffs, extra)
        return ControlSignal(self.system, self.h_coeffs, self.correction.with_correction(extra))

    def scaled(self, factor: float) -> "ControlSignal":
        corr = None if self.correction is None else self.correction.scaled(factor)
        return ControlSignal(self.system, self.h_coeffs * factor, corr)

    def _vectors(self, profile: ControlProfile, N: int, twice: bool) -> tuple:
        freqs, blocks = [], []
        for sig in self.chain():
            sys = sig.system
            G = g_matrix(profile, N)
            idx = [N + k for k in sys.mode_set]
            if max(abs(k) for k in sys.mode_set) > N:
                raise ValueError(f"mode set exceeds field truncation N={N}")
            cols = (G @ G)[:, idx] if twice else G[:, idx]
            blocks.append((cols @ (sig.h_coeffs[:, None] * sys.dual_coeffs)).T)
            freqs.extend(sys.freqs)
        return tuple(freqs), np.vstack(blocks)

    def control_forcing(self, profile: ControlProfile, N: int, start: float = 0.0) -> ExponentialForcing:
        """The applied forcing G h(t, .) on |k| <= N as an exponential sum."""
        freqs, vec = self._vectors(profile, N, twice=True)
        return ExponentialForcing(self.system.j, N, freqs, vec, start, start + self.system.horizon_T)

    def control_field(self, profile: ControlProfile, N: int) -> ExponentialForcing:
        """The control h(t, .) itself as an exponential sum."""
        freqs, vec = self._vectors(profile, N, twice=False)
        return ExponentialForcing(self.system.j, N, freqs, vec, 0.0, self.system.horizon_T)

    def control_norm(self, profile: ControlProfile, N: int, s: float = 0.0) -> float:
        """||h||_{L2(0,T; H^s)} evaluated exactly through the Gram matrices."""
        field = self.control_field(profile, N)
        freqs = field.freqs
        T = self.system.horizon_T
        gram = _cross_gram(freqs, freqs, T)  # [a, b] = integral p_b conj(p_a)
        w = bracket(np.arange(-N, N + 1)) ** (2 * s)
        V = field.vectors
        total = np.einsum("an,bn,n,ab->", V.conj(), V, w, gram)
        return float(math.sqrt(max(total.real, 0.0)))


def _cross_gram(fa, fb, T: float) -> np.ndarray:
    """[a, b] = integral_0^T exp(i (fb_b - fa_a) t) dt."""
    flat = [int(b) - int(a) for a in fa for b in fb]
    phases = unit_phases(flat, T).reshape(len(fa), len(fb))
    dd = np.array(flat, dtype=float).reshape(len(fa), len(fb))
    zero = dd == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(zero, T, (phases - 1.0) / (1j * np.where(zero, 1.0, dd)))


def control_weights(profile: ControlProfile, mode_set, N: Optional[int] = None,
                    beta_mode: str = "continuum") -> np.ndarray:
    """beta_k for k in the mode set.

    ``continuum`` uses the full norm ||G phi_k||^2; ``truncated`` sums the
    coupling row over |n| <= N only, which is the value the truncated system
    actually realizes.
    """
    if beta_mode == "continuum":
        vals = [beta(profile, k) for k in mode_set]
    elif beta_mode == "truncated":
        if N is None:
            raise ValueError("truncated weights need the state truncation N")
        vals = [beta(profile, k, n_max=N) for k in mode_set]
    else:
        raise ValueError(f"unknown beta_mode {beta_mode!r}")
    out = np.array(vals)
    if np.any(out <= 1e-15):
        raise DegenerateProfileError("a control weight beta_k is below 1e-15")
    return out


def synthesize_control(u0: FourierField, u1: FourierField, profile: ControlProfile,
                       system: MomentSystem, beta_mode: str = "continuum") -> ControlSignal:
    """Coefficients h_k = (exp(-lambda_k T) u1_k - u0_k) / beta_k over the mode set."""
    u0._compatible(u1)
    if abs(mean_value(u0) - mean_value(u1)) > 1e-12:
        raise ValueError("initial and target states must have the same mean")
    N = u0.trunc_N
    K = system.mode_set
    outside = [k for k in range(-N, N + 1)
               if k != 0 and k not in set(K) and (abs(u0.coeff(k)) > 0 or abs(u1.coeff(k)) > 0)]
    if outside:
        log.warning("modes %s of the data lie outside the control mode set", outside[:8])
    b = control_weights(profile, K, N, beta_mode)
    idx = np.array([N + k for k in K])
    back = flow_phases(u0.order_j, N, -system.horizon_T)[idx]
    h = (back * u1.coeffs[idx] - u0.coeffs[idx]) / b
    return ControlSignal(system, h)


def evaluate_control(signal: ControlSignal, profile: ControlProfile, t: float, N: int) -> FourierField:
    """The control h(t, .) as a real field on |k| <= N."""
    T = signal.system.horizon_T
    if not (0.0 <= t <= T):
        raise ValueError(f"time {t} outside [0, {T}]")
    field = signal.control_field(profile, N)
    return FourierField(signal.system.j, N, field.value(t))


@dataclass
class ReachReport:
    residual_l2: float
    residual_hs: float
    terminal: FourierField
    times: np.ndarray
    states: list
    panels: int
    nodes: int


def _panel_plan(max_freq_gap: float, T: float, nodes: int, step_dt: Optional[float]):
    # keep (frequency * panel length) small enough for a Gauss rule of this size
    budget = {4: 0.6, 8: 2.0, 12: 4.0, 16: 6.0, 24: 11.0, 32: 16.0}.get(nodes, nodes / 3.0)
    length = T if max_freq_gap == 0 else min(T, budget / max_freq_gap)
    if step_dt:
        length = min(length, step_dt)
    return max(1, int(math.ceil(T / length - 1e-12)))


def gauss_duhamel_weights(state_freqs, forcing_freqs, T: float, panels: int, nodes: int) -> np.ndarray:
    """Composite Gauss-Legendre approximation of integral_0^T exp(i (w_m - w_n) t) dt.

    All panels have equal length, so the rule on panel p is the rule on the
    first panel times exp(i d p H); the panel sum is then a geometric series
    that is summed in closed form.  Entry [n, m].
    """
    x, w = leggauss(nodes)
    H = T / panels
    tau = 0.5 * H * (x + 1.0)
    wt = 0.5 * H * w
    d = np.array([[float(int(m) - int(n)) for m in forcing_freqs] for n in state_freqs])
    first = np.einsum("i,nmi->nm", wt, np.exp(1j * d[:, :, None] * tau[None, None, :]))
    half = np.sin(0.5 * d * H)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(half) < 1e-300, float(panels),
                         np.sin(0.5 * d * H * panels) / np.where(np.abs(half) < 1e-300, 1.0, half))
    geom = ratio * np.exp(0.5j * d * H * (panels - 1))
    return first * geom


def verify_reach(u0: FourierField, u1: FourierField, signal: ControlSignal, profile: ControlProfile,
                 step_dt: Optional[float] = None, nodes: int = 16, s: float = 0.0,
                 record: int = 21) -> ReachReport:
    """Integrate u' = A u + G h(t) on the truncated space and measure the terminal miss.

    The linear flow is applied exactly; only the Duhamel integral of the
    forcing is approximated, by Gauss-Legendre panels whose length is tied to
    the largest frequency difference in the integrand.  ``record`` equally
    spaced intermediate states are returned (at panel boundaries).
    """
    N, j = u0.trunc_N, u0.order_j
    T = signal.system.horizon_T
    forcing = signal.control_forcing(profile, N)
    sfreq = forcing.state_freqs()
    ffreq = forcing.freqs
    gap = max(abs(int(m) - int(n)) for m in ffreq for n in sfreq) if ffreq else 0
    panels = _panel_plan(float(gap), T, nodes, step_dt)
    panels = int(math.ceil(panels / (record - 1))) * (record - 1) if record > 1 else panels
    times = np.linspace(0.0, T, record) if record > 1 else np.array([T])
    states = []
    per = panels // (record - 1) if record > 1 else panels
    for r, t in enumerate(times):
        if t == 0.0:
            states.append(u0)
            continue
        p = per * r if record > 1 else panels
        Q = gauss_duhamel_weights(sfreq, ffreq, float(t), p, nodes)
        v = u0.coeffs + np.sum(Q * forcing.vectors.T, axis=1)
        states.append(FourierField(j, N, hermitian_part(flow_phases(j, N, float(t)) * v)))
    terminal = states[-1]
    diff = terminal - u1
    return ReachReport(sobolev_norm(diff, 0.0), sobolev_norm(diff, s), terminal, times, states,
                       panels, nodes)


def _input_to_state(signal_system: MomentSystem, profile: ControlProfile, N: int,
                    nodes: int, step_dt: Optional[float]) -> np.ndarray:
    """Terminal states (columns) of unit-coefficient controls under the verify_reach rule."""
    j = signal_system.j
    T = signal_system.horizon_T
    sfreq = tuple(dispersion_power(j, k) for k in range(-N, N + 1))
    ffreq = signal_system.freqs
    gap = max(abs(int(m) - int(n)) for m in ffreq for n in sfreq)
    panels = _panel_plan(float(gap), T, nodes, step_dt)
    Q = gauss_duhamel_weights(sfreq, ffreq, T, panels, nodes)  # [n, m]
    G = g_matrix(profile, N)
    idx = [N + k for k in signal_system.mode_set]
    GG = (G @ G)[:, idx]  # [n, k]
    QC = Q @ signal_system.dual_coeffs.T  # [n, k]
    return flow_phases(j, N, T)[:, None] * GG * QC


def refine_control(u0: FourierField, u1: FourierField, signal: ControlSignal, profile: ControlProfile,
                   correction_modes: Optional[Sequence[int]] = None, nodes: int = 16,
                   step_dt: Optional[float] = None, rank_tol: float = 1e-10) -> ControlSignal:
    """One least-squares correction of the terminal miss left by ``signal``.

    The correction is a second moment-method signal over ``correction_modes``
    (default: every nonzero mode of the state space).  Its coefficients
    minimize the terminal residual of the discrete input-to-state map built
    with the same quadrature as ``verify_reach``.
    """
    N = u0.trunc_N
    j = u0.order_j
    T = signal.system.horizon_T
    before = verify_reach(u0, u1, signal, profile, step_dt=step_dt, nodes=nodes, record=2)
    if before.residual_l2 <= 1e-15 * max(sobolev_norm(u1), 1.0):
        return signal
    if correction_modes is None:
        correction_modes = symmetric_mode_set(N)
    correction_modes = tuple(int(k) for k in correction_modes)
    r = u1.coeffs - before.terminal.coeffs
    reach = set(correction_modes)
    scale = np.linalg.norm(r)
    dead = [k for k in range(-N, N + 1) if k not in reach and abs(r[N + k]) > 1e-8 * scale]
    if dead:
        raise PartialControllabilityError(
            f"terminal residual has energy in modes {dead} outside the correction mode set", dead)
    if correction_modes == signal.system.mode_set:
        csys = signal.system
    else:
        csys = assemble_moment_system(j, T, mode_set=correction_modes)
    M = _input_to_state(csys, profile, N, nodes, step_dt)
    rows = [N + k for k in correction_modes]
    sv = np.linalg.svd(M[rows], compute_uv=False)
    if sv[-1] < rank_tol * sv[0]:
        U, S, Vh = np.linalg.svd(M[rows])
        null = np.abs(Vh[-1])
        weak = [correction_modes[i] for i in np.argsort(null)[::-1][:2]]
        raise PartialControllabilityError(
            f"input-to-state map is rank deficient (sigma_min/sigma_max = {sv[-1] / sv[0]:.2e}); "
            f"weakest modes {weak}", weak)
    delta, *_ = np.linalg.lstsq(M, r, rcond=None)
    # restore the Hermitian pairing h_{-k} = conj(h_k)
    pos = {k: i for i, k in enumerate(correction_modes)}
    sym = np.array([0.5 * (delta[pos[k]] + np.conj(delta[pos[-k]])) if -k in pos else delta[pos[k]]
                    for k in correction_modes])
    refined = signal.with_correction(ControlSignal(csys, sym))
    after = verify_reach(u0, u1, refined, profile, step_dt=step_dt, nodes=nodes, record=2)
    if after.residual_l2 > before.residual_l2:
        return signal
    return refined


def exact_terminal_state(u0: FourierField, signal: ControlSignal, profile: ControlProfile) -> FourierField:
    """Closed-form terminal state of the linear controlled system (no quadrature)."""
    N = u0.trunc_N
    forcing = signal.control_forcing(profile, N)
    coeffs = forcing.linear_response(u0.coeffs, signal.system.horizon_T)
    return u0.with_coeffs(coeffs)

"""Nonlinear evolution u_t + (-1)^(j+1) d_x^(2j+1) u + u u_x = f on the truncated space.

Time stepping is a Lawson (integrating-factor) Runge-Kutta 4 scheme: the
dispersive part is applied exactly and the dealiased nonlinearity plus any
state feedback go through the RK stages.  Open-loop exponential forcing is
not sampled at all: its linear response u_F is carried in closed form and the
stages only integrate the remainder w = u - u_F.  With zero initial data for
w, w(T) is exactly the nonlinear Duhamel contribution at time T.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .control import ControlProfile, gg_matrix
from .errors import AccuracyError, BlowUpError
from .feedback import FeedbackGain
from .forcing import ExponentialForcing, LinearFeedback, breakpoints
from .moment import (ControlSignal, MomentSystem, assemble_moment_system,
                     refine_control, symmetric_mode_set, synthesize_control)
from .spectral import (SQRT2PI, FourierField, flow_phases, hermitian_part,
                       l2_norm, mean_value, reflect, remove_mean,
                       unit_phases)
from .trajectory import Trajectory

log = logging.getLogger(__name__)


class NonlinearTerm:
    """Coefficients of -(1/2) d_x (u^2) on |k| <= N, alias-free.

    The collocation grid has M >= 3N+1 points.  For small N the transforms
    are dense matrix products, which beat FFT call overhead.
    """

    DENSE_MAX_N = 64

    def __init__(self, N: int):
        self.N = N
        self.M = 1 << max(2, (3 * N).bit_length())
        self.k = np.arange(-N, N + 1)
        self.deriv = -0.5j * self.k
        self.scale = self.M / SQRT2PI
        self.dense = N <= self.DENSE_MAX_N
        if self.dense:
            x = 2.0 * np.pi * np.arange(self.M) / self.M
            self.to_grid = np.exp(1j * np.outer(x, self.k)) / SQRT2PI
            self.from_grid = np.exp(-1j * np.outer(self.k, x)) * (self.deriv / self.scale)[:, None]

    def square(self, c: np.ndarray) -> np.ndarray:
        """Coefficients of u^2 for a real field u."""
        N = self.N
        buf = np.zeros(self.M // 2 + 1, dtype=complex)
        buf[:N + 1] = c[N:]
        vals = np.fft.irfft(buf, n=self.M) * self.scale
        spec = np.fft.rfft(vals * vals)[:N + 1] * (SQRT2PI / self.M)
        return np.concatenate([np.conj(spec[:0:-1]), spec])

    def __call__(self, c: np.ndarray) -> np.ndarray:
        if self.dense:
            v = (self.to_grid @ c).real
            return self.from_grid @ (v * v)
        return self.deriv * self.square(c)


def _segments(forcing) -> list:
    if forcing is None:
        return []
    if isinstance(forcing, (ExponentialForcing, LinearFeedback)):
        return [forcing]
    return list(forcing)


def simulate(u0: FourierField, T: float, dt: float, forcing=None, nonlinear: bool = True,
             store_every: int = 1, t0: float = 0.0) -> Trajectory:
    """Advance u0 over [t0, t0 + T] with steps of at most dt.

    ``forcing`` is an ExponentialForcing, a LinearFeedback, or a list of them,
    each active on its own [start, stop) window (absolute times).  Window edges
    are step boundaries; each window is divided into equal steps and the last
    step ends exactly at t0 + T.
    """
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    j, N = u0.order_j, u0.trunc_N
    segs = _segments(forcing)
    for seg in segs:
        if isinstance(seg, ExponentialForcing) and (seg.j, seg.N) != (j, N):
            raise ValueError("forcing and state have different (j, N)")
    nl = NonlinearTerm(N) if nonlinear else None
    uF = u0.coeffs.astype(complex).copy()
    w = np.zeros_like(uF)
    times, snaps = [t0], [uF.copy()]
    t_end = t0 + T
    pts = breakpoints(segs, t0, t_end)
    step_count = 0
    for a, b in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (a + b)
        active = [s for s in segs if s.active(mid)]
        expo = [s for s in active if isinstance(s, ExponentialForcing) and s.freqs]
        fb = [s.matrix for s in active if isinstance(s, LinearFeedback)]
        F = sum(fb) if fb else None
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        h = (b - a) / n
        W1 = flow_phases(j, N, h)
        W2 = flow_phases(j, N, 0.5 * h)
        plans = []
        for s in expo:
            plans.append((s.step_matrix(0.5 * h), s.step_matrix(h),
                          np.array(unit_phases(s.freqs, a - s.start)),
                          unit_phases(s.freqs, h)))

        def rhs(wc, base):
            u = base + wc
            out = nl(u) if nl is not None else np.zeros_like(u)
            if F is not None:
                out = out + F @ u
            return out

        for i in range(n):
            if plans:
                uF_half = W2 * uF
                uF_full = W1 * uF
                for P2, P1, z, _ in plans:
                    uF_half = uF_half + P2 @ z
                    uF_full = uF_full + P1 @ z
            else:
                uF_half = W2 * uF
                uF_full = W1 * uF
            if nl is None and F is None:
                wn = W1 * w
            else:
                ka = rhs(w, uF)
                kb = rhs(W2 * (w + 0.5 * h * ka), uF_half)
                kc = rhs(W2 * w + 0.5 * h * kb, uF_half)
                kd = rhs(W1 * w + h * (W2 * kc), uF_full)
                wn = W1 * w + (h / 6.0) * (W1 * ka + 2.0 * W2 * (kb + kc) + kd)
            wn = hermitian_part(wn)
            if not np.all(np.isfinite(wn)):
                last = FourierField(j, N, hermitian_part(uF + w))
                raise BlowUpError(f"non-finite state at t = {a + (i + 1) * h:.6g}", last, a + i * h)
            w = wn
            uF = hermitian_part(uF_full)
            for k, plan in enumerate(plans):
                plans[k] = (plan[0], plan[1], plan[2] * plan[3], plan[3])
            step_count += 1
            t = a + (i + 1) * h
            if step_count % store_every == 0 or (i == n - 1 and b == t_end):
                times.append(t if i < n - 1 else b)
                snaps.append(uF + w)
    traj = Trajectory(j, N, np.array(times), np.array(snaps),
                      meta={"dt": dt, "steps": step_count, "nonlinear": nonlinear})
    traj.duhamel_part = w
    return traj


def nonlinear_step(u: FourierField, dt: float, forcing=None, t: float = 0.0) -> FourierField:
    """One integrating-factor RK4 step of size dt starting at time t."""
    return simulate(u, dt, dt, forcing, t0=t).final


def damping_feedback(profile: ControlProfile, N: int, sign: float = -1.0,
                     start: float = 0.0, stop: float = math.inf) -> LinearFeedback:
    """f = sign * GG* u (sign = -1 damps, +1 anti-damps)."""
    return LinearFeedback(sign * gg_matrix(profile, N), start, stop)


def closed_loop_nonlinear(u0: FourierField, profile: ControlProfile, T: float, dt: float,
                          mode: str = "simple_damping", gain: Optional[FeedbackGain] = None,
                          store_every: int = 1, t0: float = 0.0) -> Trajectory:
    """Nonlinear run under f = -GG* u (simple damping) or f = -GG* L^-1 (u - [u]) (gain)."""
    if mode == "simple_damping":
        fb = damping_feedback(profile, u0.trunc_N)
    elif mode == "gain":
        if gain is None:
            raise ValueError("gain mode needs a FeedbackGain")
        fb = LinearFeedback(-gain.full_K())
    else:
        raise ValueError(f"unknown feedback mode {mode!r}")
    return simulate(u0, T, dt, fb, store_every=store_every, t0=t0)


def _lagrange_weights(nodes: np.ndarray, x: float) -> np.ndarray:
    w = np.ones(len(nodes))
    for i, xi in enumerate(nodes):
        for k, xk in enumerate(nodes):
            if k != i:
                w[i] *= (x - xk) / (xi - xk)
    return w


def _tail_on(traj: Trajectory, stride: int, T: float) -> np.ndarray:
    j, N = traj.j, traj.N
    times = traj.times[::stride]
    coeffs = traj.coeffs[::stride]
    if times.size < 4:
        raise AccuracyError("need at least four snapshots for the Duhamel quadrature")
    nl = NonlinearTerm(N)
    x, wts = np.polynomial.legendre.leggauss(4)
    # interaction picture: v(t) = W(-t) u(t) varies slowly
    v = np.array([flow_phases(j, N, -t) * c for t, c in zip(times, coeffs)])
    total = np.zeros(2 * N + 1, dtype=complex)
    for i in range(times.size - 1):
        a, b = times[i], times[i + 1]
        lo = min(max(i - 1, 0), times.size - 4)
        nodes_t = times[lo:lo + 4]
        for xi, wi in zip(x, wts):
            tau = 0.5 * (a + b) + 0.5 * (b - a) * xi
            vt = _lagrange_weights(nodes_t, tau) @ v[lo:lo + 4]
            u = flow_phases(j, N, tau) * vt
            total += 0.5 * (b - a) * wi * flow_phases(j, N, -tau) * (-nl(u))
    return flow_phases(j, N, T) * total


def duhamel_nonlinear_tail(traj: Trajectory, T: Optional[float] = None, rtol: float = 1e-6) -> FourierField:
    """omega(T, u) = integral_0^T W(T - tau) (u u_x)(tau) dtau from stored snapshots.

    Gauss panels (4 nodes) sit on every snapshot interval; states between
    snapshots come from cubic interpolation of W(-t) u(t).  The result is
    compared with the same rule on every second snapshot and an
    AccuracyError is raised if they differ by more than ``rtol`` relative.
    """
    T = traj.times[-1] if T is None else T
    if abs(T - traj.times[-1]) > 1e-12 * max(1.0, T) or traj.times[0] != 0.0:
        raise ValueError("trajectory must cover exactly [0, T]")
    fine = _tail_on(traj, 1, T)
    if len(traj) >= 9:
        coarse = _tail_on(traj, 2, T)
        scale = max(np.linalg.norm(fine), 1e-300)
        err = np.linalg.norm(fine - coarse)
        if err > rtol * scale and err > 1e-14:
            raise AccuracyError(f"Duhamel quadrature self-check failed: change {err:.3e} "
                                f"on thinning (|omega| = {scale:.3e}); store snapshots more densely")
    return FourierField(traj.j, traj.N, hermitian_part(fine))


@dataclass
class PicardReport:
    iterations: int
    residual_history: list
    final_control: Optional[ControlSignal]
    converged: bool
    within_smallness: bool = True
    verification_residual: Optional[float] = None
    trajectory: Optional[Trajectory] = None
    notes: list = field(default_factory=list)

    def contraction_ratios(self) -> list:
        h = self.residual_history
        return [h[i + 1] / h[i] for i in range(len(h) - 1) if h[i] > 0]


def _linear_control(u0, target, profile, system, beta_mode, refine):
    sig = synthesize_control(u0, target, profile, system, beta_mode=beta_mode)
    if refine:
        sig = refine_control(u0, target, sig, profile)
    return sig


def picard_local_control(u0: FourierField, u1: FourierField, profile: ControlProfile,
                         system: Optional[MomentSystem] = None, tol: float = 1e-8, max_iter: int = 10,
                         dt: Optional[float] = None, T: Optional[float] = None, delta: float = 0.05,
                         beta_mode: str = "truncated", refine: Optional[bool] = None,
                         verify: bool = True) -> PicardReport:
    """Fixed-point iteration h_n = Phi(u0, u1 + omega(T, u_n)) for the nonlinear equation.

    Phi is the linear moment-method control (with a least-squares refinement
    unless it is already exact on the truncated space); omega(T, u_n) is the
    nonlinear Duhamel term of the previous iterate, taken from the integrator
    so that the discrete map is consistent.  Non-convergence is reported, not
    raised.
    """
    u0._compatible(u1)
    N, j = u0.trunc_N, u0.order_j
    if system is None:
        system = assemble_moment_system(j, 1.0 if T is None else T, n_modes=N)
    T = system.horizon_T
    dt = T / 1000 if dt is None else dt
    if refine is None:
        refine = not (set(system.mode_set) >= set(symmetric_mode_set(N)) and beta_mode == "truncated")
    # the gate measures the deviation from the (conserved) mean
    small = l2_norm(remove_mean(u0)) <= delta and l2_norm(remove_mean(u1)) <= delta
    notes = []
    if not small:
        notes.append(f"data deviate from their mean by more than delta = {delta}")
        log.warning(notes[-1])
    omega = np.zeros(2 * N + 1, dtype=complex)
    history = []
    sig = None
    traj = None
    converged = False
    it = 0
    for it in range(max_iter + 1):
        target = u1.with_coeffs(u1.coeffs + omega)
        sig = _linear_control(u0, target, profile, system, beta_mode, refine)
        try:
            traj = simulate(u0, T, dt, sig.control_forcing(profile, N), store_every=10 ** 9)
        except BlowUpError as exc:
            notes.append(f"blow-up during iteration {it}: {exc}")
            break
        res = l2_norm(traj.final - u1)
        history.append(res)
        if res <= tol:
            converged = True
            break
        omega = -traj.duhamel_part
    report = PicardReport(it, history, sig, converged, small, trajectory=traj, notes=notes)
    if verify and sig is not None and converged:
        check = simulate(u0, T, dt / 2, sig.control_forcing(profile, N), store_every=10 ** 9)
        report.verification_residual = l2_norm(check.final - u1)
    return report


@dataclass
class GlobalControlReport:
    success: bool
    phase: str
    times: dict
    residuals: dict
    reversal_defect: float
    picard: Optional[PicardReport] = None
    verification: Optional[Trajectory] = None
    message: str = ""


def reversal_self_test(u0: FourierField, T: float, dt: float) -> float:
    """Max coefficient defect of the round trip u0 -> u(T) -> reflect -> evolve T -> reflect."""
    forward = simulate(u0, T, dt, store_every=10 ** 9).final
    back = simulate(reflect(forward), T, dt, store_every=10 ** 9).final
    return float(np.max(np.abs(reflect(back).coeffs - u0.coeffs)))


def _damp_until(u0: FourierField, profile: ControlProfile, mu: float, tol: float, dt: float,
                chunk: float, max_time: float):
    """Simple damping in chunks until ||u - mu|| <= tol; returns (final state, elapsed)."""
    u = u0
    elapsed = 0.0
    dev = l2_norm(u - FourierField.constant(u.order_j, u.trunc_N, mu))
    while dev > tol:
        if elapsed >= max_time:
            raise RuntimeError(f"damping did not reach {tol} within {max_time} time units")
        traj = closed_loop_nonlinear(u, profile, chunk, dt, store_every=10 ** 9)
        u = traj.final
        elapsed += chunk
        dev = l2_norm(u - FourierField.constant(u.order_j, u.trunc_N, mu))
    return u, elapsed


def global_control_experiment(u0: FourierField, u1: FourierField, profile: ControlProfile,
                              stabilize_tol: float = 0.01, T_local: float = 1.0, dt: float = 1e-3,
                              chunk: float = 1.0, max_damping_time: float = 400.0,
                              picard_tol: float = 1e-10, picard_iter: int = 15,
                              picard_dt: Optional[float] = None, self_test_T: float = 1.0,
                              self_test_dt: Optional[float] = None):
    """Damp u0 forward, damp u1 backward, connect the two by local control, then verify.

    The backward leg uses the symmetry u(t, x) -> u(-t, -x): damping the
    reflected target with the reflected profile and reading the result
    backwards gives a forward path under the anti-damping f = +GG* u that ends
    exactly at u1.

    The reversal self-test defaults to a quarter of ``dt``: the integrator is
    not time-symmetric, so the round trip also carries its O(dt^4) error.
    """
    u0._compatible(u1)
    j, N = u0.order_j, u0.trunc_N
    mu = mean_value(u0)
    if abs(mu - mean_value(u1)) > 1e-12:
        raise ValueError("initial and target states must share the same mean")
    times, residuals = {}, {}
    const = FourierField.constant(j, N, mu)
    rev = reversal_self_test(u0, self_test_T, self_test_dt or dt / 4)
    if l2_norm(u0 - const) == 0 and l2_norm(u1 - const) == 0:
        return GlobalControlReport(True, "done", {"damping": 0.0, "local": 0.0, "return": 0.0},
                                   {"terminal": 0.0}, rev, message="trivial: both states are constant")
    try:
        phase = "forward damping"
        v0, T1 = _damp_until(u0, profile, mu, stabilize_tol, dt, chunk, max_damping_time)
        phase = "backward damping"
        w1, T2 = _damp_until(reflect(u1), profile.reflected(), mu, stabilize_tol, dt, chunk,
                             max_damping_time)
        v1 = reflect(w1)
        times.update(damping=T1, local=T_local, ret=T2)
        phase = "local control"
        system = assemble_moment_system(j, T_local, n_modes=N)
        pic = picard_local_control(v0, v1, profile, system, tol=picard_tol, max_iter=picard_iter,
                                   dt=picard_dt or dt, delta=max(stabilize_tol, 0.05), verify=False)
        residuals["local"] = pic.residual_history[-1] if pic.residual_history else math.nan
        if not pic.converged:
            return GlobalControlReport(False, phase, times, residuals, rev, pic,
                                       message="local control did not converge")
        phase = "verification"
        total = T1 + T_local + T2
        segs = [damping_feedback(profile, N, -1.0, 0.0, T1),
                pic.final_control.control_forcing(profile, N, start=T1),
                damping_feedback(profile, N, +1.0, T1 + T_local, math.inf)]
        local_dt = picard_dt or dt
        check = _piecewise_run(u0, segs, [T1, T1 + T_local, total], [dt, local_dt, dt])
        residuals["terminal"] = l2_norm(check.final - u1)
        residuals["terminal_relative"] = residuals["terminal"] / max(l2_norm(u1), 1e-300)
        residuals["damped_initial"] = l2_norm(v0 - const)
        residuals["damped_target"] = l2_norm(v1 - const)
        return GlobalControlReport(True, "done", times, residuals, rev, pic, check)
    except Exception as exc:  # report the failing phase instead of crashing the pipeline
        return GlobalControlReport(False, phase, times, residuals, rev, message=f"{type(exc).__name__}: {exc}")


def _piecewise_run(u0: FourierField, segs, edges: Sequence[float], dts: Sequence[float]) -> Trajectory:
    """One uninterrupted run over all windows; each window may use its own step size."""
    if len(set(dts)) == 1:
        return simulate(u0, edges[-1], dts[0], segs, store_every=1000)
    u = u0
    start = 0.0
    times, coeffs = [0.0], [u0.coeffs]
    for stop, h in zip(edges, dts):
        part = simulate(u, stop - start, h, segs, store_every=1000, t0=start)
        times.extend(part.times[1:])
        coeffs.extend(part.coeffs[1:])
        u = part.final
        start = stop
    return Trajectory(u0.order_j, u0.trunc_N, np.array(times), np.array(coeffs))

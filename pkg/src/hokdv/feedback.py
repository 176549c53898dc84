"""Feedback stabilization of the linearized equation.

The gain K_lambda = GG* L_lambda^{-1} uses the weighted Gramian
L_lambda = integral_0^1 exp(-2 lambda tau) W(-tau) GG* W(tau) dtau on the mean-zero
truncated space; lambda = 0 gives the simple damping K_0 = GG* with L_0 = I.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg
from numpy.polynomial.legendre import leggauss

from .control import ControlProfile, gg_matrix
from .errors import AccuracyError
from .spectral import FourierField, dispersion_power, dispersion_powers, unit_phases
from .trajectory import Trajectory


def _nonzero_index(N: int) -> np.ndarray:
    return np.array([N + k for k in range(-N, N + 1) if k != 0])


@dataclass(frozen=True, eq=False)
class FeedbackGain:
    """L_lambda and K_lambda on the modes 1 <= |k| <= N (ordered -N..-1, 1..N)."""

    lam: float
    j: int
    N: int
    L_matrix: np.ndarray
    K_matrix: np.ndarray
    quad_nodes: int
    method: str

    def full_K(self) -> np.ndarray:
        """K embedded in the full |k| <= N space with a zero mean row and column."""
        idx = _nonzero_index(self.N)
        out = np.zeros((2 * self.N + 1, 2 * self.N + 1), dtype=complex)
        out[np.ix_(idx, idx)] = self.K_matrix
        return out

    def generator(self) -> np.ndarray:
        """A - K on the mean-zero space."""
        idx = _nonzero_index(self.N)
        A = 1j * np.diag(dispersion_powers(self.j, self.N)[idx])
        return A - self.K_matrix


def _freq_differences(j: int, N: int) -> list:
    w = [dispersion_power(j, k) for k in range(-N, N + 1) if k != 0]
    return [wm - wn for wm in w for wn in w], len(w)


def weight_closed_form(j: int, N: int, lam: float) -> np.ndarray:
    """[m, n] = integral_0^1 exp(-2 lam tau - i (w_m - w_n) tau) dtau."""
    diffs, n = _freq_differences(j, N)
    d = np.array(diffs, dtype=float).reshape(n, n)
    z = 2.0 * lam + 1j * d
    far = np.abs(z) >= 0.5
    phase = unit_phases([-x for x in diffs], 1.0).reshape(n, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        big = (1.0 - math.exp(-2.0 * lam) * phase) / np.where(far, z, 1.0)
        small = -np.expm1(-np.where(far, 0.0, z)) / np.where(far, 1.0, np.where(z == 0, 1.0, z))
    small = np.where(z == 0, 1.0, small)
    return np.where(far, big, small)


def weight_quadrature(j: int, N: int, lam: float, nodes: int) -> np.ndarray:
    """Gauss-Legendre approximation of ``weight_closed_form``."""
    diffs, n = _freq_differences(j, N)
    d = np.array(diffs, dtype=float).reshape(n, n)
    x, w = leggauss(nodes)
    tau = 0.5 * (x + 1.0)
    wt = 0.5 * w * np.exp(-2.0 * lam * tau)
    out = np.zeros((n, n), dtype=complex)
    for ti, wi in zip(tau, wt):
        out += wi * np.exp(-1j * d * ti)
    return out


def build_L_lambda(profile: ControlProfile, j: int, N: int, lam: float, quad_nodes: int = 64,
                   method: str = "closed_form", max_nodes: int = 1 << 14,
                   tol: float = 1e-10) -> FeedbackGain:
    """Assemble L_lambda and K_lambda = GG* L_lambda^{-1}.

    ``closed_form`` integrates the scalar weight of every matrix entry exactly.
    ``quadrature`` uses Gauss-Legendre nodes in tau, doubling from
    ``quad_nodes`` until entries move by at most ``tol``; if that needs more
    than ``max_nodes`` nodes an AccuracyError is raised.
    """
    if not lam >= 0:
        raise ValueError(f"lambda must be nonnegative, got {lam!r}")
    idx = _nonzero_index(N)
    P = gg_matrix(profile, N)[np.ix_(idx, idx)]
    P = 0.5 * (P + P.conj().T)
    if lam == 0:
        return FeedbackGain(0.0, j, N, np.eye(2 * N, dtype=complex), P, 0, "identity")
    if method == "closed_form":
        L = P * weight_closed_form(j, N, lam)
        nodes = 0
    elif method == "quadrature":
        nodes = quad_nodes
        prev = P * weight_quadrature(j, N, lam, nodes)
        while True:
            if 2 * nodes > max_nodes:
                raise AccuracyError(
                    f"tau quadrature did not converge with {max_nodes} nodes "
                    f"(frequencies up to {2 * N ** (2 * j + 1)}); use a smaller N or the closed form")
            nodes *= 2
            cur = P * weight_quadrature(j, N, lam, nodes)
            if np.max(np.abs(cur - prev)) <= tol:
                L = cur
                break
            prev = cur
    else:
        raise ValueError(f"unknown method {method!r}")
    L = 0.5 * (L + L.conj().T)
    K = np.linalg.solve(L.T, P.T).T  # P L^{-1}
    return FeedbackGain(float(lam), j, N, L, K, nodes, method)


def apply_K_lambda(gain: FeedbackGain, u: FourierField) -> FourierField:
    """K_lambda (u - [u]); the mean mode is untouched."""
    if (u.order_j, u.trunc_N) != (gain.j, gain.N):
        raise ValueError("gain and field have different (j, N)")
    return u.with_coeffs(gain.full_K() @ u.coeffs)


def spectral_abscissa(gain: FeedbackGain) -> float:
    """Largest real part of the spectrum of A - K on the mean-zero space."""
    return float(np.max(np.linalg.eigvals(gain.generator()).real))


def closed_loop_linear_simulate(u0: FourierField, gain: FeedbackGain, T: float, dt: float,
                                store_every: int = 1) -> Trajectory:
    """u' = (A - K) u on the truncated space, advanced by the exact step propagator.

    The step matrix is exp(dt (A - K)) from scipy's scaling-and-squaring;
    the mean mode is carried along unchanged.
    """
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    N = u0.trunc_N
    idx = _nonzero_index(N)
    M = gain.generator()
    nsteps = int(math.ceil(T / dt - 1e-9))
    h = T / nsteps
    E = scipy.linalg.expm(M * h)
    c = u0.coeffs[idx].copy()
    times, out = [0.0], [u0.coeffs.copy()]
    full = u0.coeffs.copy()
    for n in range(1, nsteps + 1):
        c = E @ c
        if n % store_every == 0 or n == nsteps:
            full = full.copy()
            full[idx] = c
            times.append(n * h)
            out.append(full)
    return Trajectory(u0.order_j, N, np.array(times), np.array(out),
                      meta={"lambda": gain.lam, "dt": h})


def decay_rate_estimate(traj: Trajectory, center=None, min_norm: float = 1e-300):
    """Least-squares rate gamma in ||u(t) - [u0]|| ~ exp(-gamma t) over the trailing half.

    Returns (gamma, r2, flags).
    """
    if len(traj) < 10:
        raise ValueError("need at least 10 samples to fit a decay rate")
    norms = traj.deviation_norms(center)
    t = traj.times
    half = len(t) // 2
    tt, nn = t[half:], norms[half:]
    flags = []
    keep = nn > min_norm
    if not np.all(keep):
        flags.append("underflow: window truncated")
        tt, nn = tt[keep], nn[keep]
    if tt.size < 2:
        return 0.0, 1.0, flags + ["degenerate window"]
    y = np.log(nn)
    slope, icpt = np.polyfit(tt, y, 1)
    resid = y - (slope * tt + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-24 * max(1.0, float(np.sum(y ** 2))) else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return float(-slope), float(r2), flags


def damping_rate_squares(traj: Trajectory, profile: ControlProfile) -> np.ndarray:
    """||G u(t)||^2 at every stored time."""
    P = gg_matrix(profile, traj.N)
    c = traj.coeffs
    return np.einsum("tm,mn,tn->t", c.conj(), P, c).real


def energy_balance_check(traj: Trajectory, profile: ControlProfile) -> dict:
    """Defect in ||u(T)||^2 - ||u0||^2 + 2 integral ||G u||^2 dt for a simple-damping run.

    The time integral uses composite Simpson on the stored samples; the
    running defect is reported at every sample.
    """
    e = traj.l2_norms() ** 2
    d = damping_rate_squares(traj, profile)
    running_int = scipy.integrate.cumulative_simpson(d, x=traj.times, initial=0.0)
    running = e - e[0] + 2.0 * running_int
    total = float(scipy.integrate.simpson(d, x=traj.times))
    defect = abs(e[-1] - e[0] + 2.0 * total)
    return {"defect": defect, "relative": defect / max(e[0], 1e-300),
            "dissipated": 2.0 * total, "running": running}


def observability_from_rate(gamma: float, T: float = 1.0) -> float:
    """Diagnostic mu with gamma = log(mu / (mu - 1)) / T; infinite for gamma <= 0."""
    if gamma <= 0:
        return math.inf
    return -1.0 / math.expm1(-gamma * T)

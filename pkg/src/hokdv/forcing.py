"""Time-dependent forcing terms for the truncated evolution.

Two kinds are supported and may be combined on disjoint or overlapping time
windows:

* ``ExponentialForcing``: an open-loop sum of spatial coefficient vectors
  times exponentials exp(i w_m (t - start)) with integer frequencies w_m.
  Its effect on the linear flow is available in closed form.
* ``LinearFeedback``: a state feedback f = F u given by a dense matrix on the
  truncated coefficient space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spectral import dispersion_power, flow_phases, hermitian_part, unit_phases


def _as_int_tuple(freqs) -> tuple:
    return tuple(int(f) for f in freqs)


def phase_integral_matrix(freqs_m: Sequence[int], freqs_n: Sequence[int], s: float) -> np.ndarray:
    """Entry [n, m] = integral_0^s exp(i w_n (s - r)) exp(i w_m r) dr.

    Written as exp(i w_n s) * (exp(i d s) - 1) / (i d) with d = w_m - w_n and
    evaluated through sin(d s / 2) to avoid cancellation for small d s.
    """
    d = np.array([[int(m) - int(n) for m in freqs_m] for n in freqs_n], dtype=float)
    if not d.size:
        return np.zeros((len(freqs_n), len(freqs_m)), dtype=complex)
    # exp(i w_n s) * exp(i d s / 2) = exp(i (w_m + w_n) s / 2)
    half = unit_phases_matrix(freqs_m, freqs_n, 0.5 * s)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinc = np.where(d == 0, s, 2.0 * np.sin(0.5 * d * s) / np.where(d == 0, 1.0, d))
    return half * sinc


def unit_phases_matrix(freqs_m, freqs_n, s: float) -> np.ndarray:
    """exp(i (w_m + w_n) s) for all pairs, entry [n, m]."""
    em = unit_phases(freqs_m, s)
    en = unit_phases(freqs_n, s)
    return en[:, None] * em[None, :]


@dataclass(frozen=True, eq=False)
class ExponentialForcing:
    """f(t) = sum_m vectors[m] exp(i freqs[m] (t - start)) for start <= t < stop."""

    j: int
    N: int
    freqs: tuple
    vectors: np.ndarray
    start: float = 0.0
    stop: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "freqs", _as_int_tuple(self.freqs))
        vec = np.asarray(self.vectors, dtype=complex).reshape(len(self.freqs), 2 * self.N + 1)
        vec.flags.writeable = False
        object.__setattr__(self, "vectors", vec)

    def active(self, t: float) -> bool:
        return self.start <= t < self.stop

    def value(self, t: float) -> np.ndarray:
        if not self.freqs:
            return np.zeros(2 * self.N + 1, dtype=complex)
        z = unit_phases(self.freqs, t - self.start)
        return hermitian_part(z @ self.vectors)

    def shifted(self, start: float, stop: float = math.inf) -> "ExponentialForcing":
        return ExponentialForcing(self.j, self.N, self.freqs, self.vectors, start, stop)

    def scaled(self, factor: float) -> "ExponentialForcing":
        return ExponentialForcing(self.j, self.N, self.freqs, self.vectors * factor,
                                  self.start, self.stop)

    def __add__(self, other: "ExponentialForcing") -> "ExponentialForcing":
        if (self.j, self.N, self.start) != (other.j, other.N, other.start):
            raise ValueError("can only add forcings with equal (j, N, start)")
        return ExponentialForcing(self.j, self.N, self.freqs + other.freqs,
                                  np.vstack([self.vectors, other.vectors]), self.start,
                                  min(self.stop, other.stop))

    def state_freqs(self) -> tuple:
        return tuple(dispersion_power(self.j, k) for k in range(-self.N, self.N + 1))

    def step_matrix(self, h: float) -> np.ndarray:
        """Matrix P with u(t+h) = W(h) u(t) + P z(t), z_m(t) = exp(i w_m (t - start))."""
        phi = phase_integral_matrix(self.freqs, self.state_freqs(), h)
        return phi * self.vectors.T

    def linear_response(self, u0: np.ndarray, s: float) -> np.ndarray:
        """Closed-form solution at time start + s of u' = A u + f, u(start) = u0."""
        free = flow_phases(self.j, self.N, s) * np.asarray(u0, dtype=complex)
        if not self.freqs:
            return free
        return hermitian_part(free + np.sum(self.step_matrix(s), axis=1))


@dataclass(frozen=True, eq=False)
class LinearFeedback:
    """State feedback f = matrix @ u on start <= t < stop."""

    matrix: np.ndarray
    start: float = 0.0
    stop: float = math.inf

    def active(self, t: float) -> bool:
        return self.start <= t < self.stop

    def shifted(self, start: float, stop: float = math.inf) -> "LinearFeedback":
        return LinearFeedback(self.matrix, start, stop)


def breakpoints(segments, t0: float, t1: float) -> list:
    pts = {t0, t1}
    for seg in segments:
        for p in (seg.start, seg.stop):
            if t0 < p < t1:
                pts.add(float(p))
    return sorted(pts)

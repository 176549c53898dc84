"""Stored solution paths."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spectral import SQRT2PI, FourierField, bracket, conserved_quantities


@dataclass(eq=False)
class Trajectory:
    """Snapshots u(t_i) of a run, kept as a (num_times, 2N+1) coefficient array."""

    j: int
    N: int
    times: np.ndarray
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)
    duhamel_part: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.times.size, 2 * self.N + 1):
            raise ValueError("coefficient array does not match times and N")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.size

    def state(self, i: int) -> FourierField:
        return FourierField(self.j, self.N, self.coeffs[i])

    @property
    def states(self) -> list:
        return [self.state(i) for i in range(len(self))]

    @property
    def initial(self) -> FourierField:
        return self.state(0)

    @property
    def final(self) -> FourierField:
        return self.state(-1)

    def l2_norms(self) -> np.ndarray:
        return np.linalg.norm(self.coeffs, axis=1)

    def hs_norms(self, s: float) -> np.ndarray:
        w = bracket(np.arange(-self.N, self.N + 1)) ** (2 * s)
        return np.sqrt(np.sum(w * np.abs(self.coeffs) ** 2, axis=1))

    def means(self) -> np.ndarray:
        return self.coeffs[:, self.N].real / SQRT2PI

    def deviation_norms(self, center: Optional[float] = None) -> np.ndarray:
        """||u(t) - center||_{L2}; the center defaults to the initial mean."""
        c = self.coeffs.copy()
        mu = self.means()[0] if center is None else center
        c[:, self.N] -= mu * SQRT2PI
        return np.linalg.norm(c, axis=1)

    def invariants(self) -> np.ndarray:
        """(M, E, H) along the path, shape (num_times, 3)."""
        return np.array([conserved_quantities(self.state(i)) for i in range(len(self))])

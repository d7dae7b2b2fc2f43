"""Closed-form eigenbases: the 1D box and the rectangle.

These provide exact energies and position matrix elements, serving both as
oracles for the finite-element pipeline and as integrable reference systems
whose OTOC shows recurrences instead of sustained growth.  The OTOC itself
is always computed through the generic engine in ``qotoc`` fed with the
analytic matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qotoc import OperatorMatrices, QuantumError, SpectralState


def box_x_matrix(n_states, a=1.0):
    """Position matrix of the 1D box: <n|x|m>.

    Diagonal a/2; off-diagonal -8nm a / (pi^2 (n^2-m^2)^2) for odd n-m,
    zero for even n-m.
    """
    n = np.arange(1, n_states + 1)
    X = np.zeros((n_states, n_states))
    np.fill_diagonal(X, a / 2.0)
    nn, mm = np.meshgrid(n, n, indexing="ij")
    odd = (nn - mm) % 2 == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        off = -8.0 * nn * mm * a / (math.pi ** 2 * (nn ** 2 - mm ** 2) ** 2)
    X[odd] = off[odd]
    return X


@dataclass
class BoxBasis:
    """Particle in a 1D box of length a with Dirichlet walls."""

    n_states: int
    hbar_eff: float
    a: float = 1.0

    def __post_init__(self):
        if self.n_states < 2 or self.hbar_eff <= 0 or self.a <= 0:
            raise QuantumError("invalid box basis parameters")

    @property
    def energies(self):
        n = np.arange(1, self.n_states + 1)
        return 0.5 * (self.hbar_eff * math.pi * n / self.a) ** 2

    def operator_matrices(self):
        X = box_x_matrix(self.n_states, self.a)
        E = self.energies
        p_factor = (E[:, None] - E[None, :]) * X / self.hbar_eff
        return OperatorMatrices(X, p_factor, 0.0)

    def eigenfunction(self, n, x):
        return math.sqrt(2.0 / self.a) * np.sin(n * math.pi
                                                * np.asarray(x) / self.a)

    def project_packet(self, x0, p0, sigma, threshold=0.999):
        """Expand a normalized 1D Gaussian packet over the box modes."""
        hb = self.hbar_eff
        width = sigma * math.sqrt(hb)
        if min(x0, self.a - x0) < 3.0 * width:
            raise QuantumError("packet center too close to the box walls")
        x = np.linspace(0.0, self.a, 20001)
        psi = (math.pi * width ** 2) ** -0.25 * np.exp(
            1j * p0 * x / hb - (x - x0) ** 2 / (2.0 * width ** 2))
        modes = np.stack([self.eigenfunction(n, x)
                          for n in range(1, self.n_states + 1)])
        c = np.trapezoid(modes * psi[None, :], x, axis=1)
        captured = float(np.sum(np.abs(c) ** 2))
        if captured < threshold:
            raise QuantumError(
                f"captured norm {captured:.5f} < {threshold}; raise "
                "n_states or hbar_eff")
        return SpectralState(c / math.sqrt(captured), captured)

    def revival_time(self):
        """All eigenphase differences realign at t_rev = 4 a^2 / (pi hbar)."""
        return 4.0 * self.a ** 2 / (math.pi * self.hbar_eff)


@dataclass
class RectangleBasis:
    """Rectangle a x b with Dirichlet walls; product-sine modes."""

    a: float
    b: float
    n_states: int
    hbar_eff: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise QuantumError("rectangle sides must be positive")
        kmax = int(math.ceil(math.sqrt(self.n_states) * 4)) + 4
        pairs = [(n, m) for n in range(1, kmax) for m in range(1, kmax)]
        energies = [0.5 * self.hbar_eff ** 2 * math.pi ** 2
                    * (n * n / self.a ** 2 + m * m / self.b ** 2)
                    for n, m in pairs]
        order = np.argsort(energies, kind="stable")[:self.n_states]
        self.quantum_numbers = [pairs[i] for i in order]
        self._energies = np.array([energies[i] for i in order])

    @property
    def energies(self):
        return self._energies

    @property
    def lambdas(self):
        return 2.0 * self._energies / self.hbar_eff ** 2

    def sample(self, pts):
        """Nodal values of every mode at the given points: (len(pts), N)."""
        pts = np.atleast_2d(pts)
        norm = 2.0 / math.sqrt(self.a * self.b)
        out = np.empty((len(pts), self.n_states))
        for j, (n, m) in enumerate(self.quantum_numbers):
            out[:, j] = norm * np.sin(n * math.pi * pts[:, 0] / self.a) \
                * np.sin(m * math.pi * pts[:, 1] / self.b)
        return out

    def operator_matrices(self):
        """x matrix elements factorize: <nm|x|n'm'> = X1d_nn' delta_mm'."""
        kmax = max(n for n, _ in self.quantum_numbers) + 1
        X1 = box_x_matrix(kmax, self.a)
        N = self.n_states
        X = np.zeros((N, N))
        for i, (n, m) in enumerate(self.quantum_numbers):
            for j, (np_, mp) in enumerate(self.quantum_numbers):
                if m == mp:
                    X[i, j] = X1[n - 1, np_ - 1]
        E = self._energies
        p_factor = (E[:, None] - E[None, :]) * X / self.hbar_eff
        return OperatorMatrices(X, p_factor, 0.0)

    def project_packet(self, r0, p0, sigma, threshold=0.999):
        """Expand a 2D Gaussian packet; overlaps factorize into 1D integrals."""
        hb = self.hbar_eff
        width = sigma * math.sqrt(hb)
        r0 = np.asarray(r0, float)
        p0 = np.asarray(p0, float)
        if min(r0[0], self.a - r0[0], r0[1], self.b - r0[1]) < 3.0 * width:
            raise QuantumError("packet center too close to the walls")

        def overlaps_1d(length, x0, p, nmax):
            x = np.linspace(0.0, length, 20001)
            psi = (math.pi * width ** 2) ** -0.25 * np.exp(
                1j * p * x / hb - (x - x0) ** 2 / (2.0 * width ** 2))
            modes = np.stack([
                math.sqrt(2.0 / length) * np.sin(k * math.pi * x / length)
                for k in range(1, nmax + 1)])
            return np.trapezoid(modes * psi[None, :], x, axis=1)

        nmax = max(n for n, _ in self.quantum_numbers)
        mmax = max(m for _, m in self.quantum_numbers)
        cx = overlaps_1d(self.a, r0[0], p0[0], nmax)
        cy = overlaps_1d(self.b, r0[1], p0[1], mmax)
        c = np.array([cx[n - 1] * cy[m - 1]
                      for n, m in self.quantum_numbers])
        captured = float(np.sum(np.abs(c) ** 2))
        if captured < threshold:
            raise QuantumError(
                f"captured norm {captured:.5f} < {threshold}; raise "
                "n_states or hbar_eff")
        return SpectralState(c / math.sqrt(captured), captured)

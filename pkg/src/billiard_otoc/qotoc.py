"""Quantum out-of-time-ordered correlators on a billiard eigenbasis.

A Gaussian wave packet is decomposed into billiard eigenstates; position and
momentum matrix elements then give the commutator B(t) = [x(t), P] with
x(t)_nm = X_nm exp(i (E_n - E_m) t / hbar), and

    C(t) = -<[x(t), P]^2> = || B(t) |psi> ||^2,
    L(t) = <psi| ln( B(t)^dag B(t) / hbar^2 ) |psi>.

Early-time exponential growth of C is fitted on a log-linear window with the
validity rule that the rate must exceed five inverse window lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import EigenBasis, assemble_full

#: minimum acceptable overlap of the packet with the truncated basis
CAPTURE_THRESHOLD = 0.999

#: operator-log eigenvalue floor, relative to the largest eigenvalue
EPS_LOG = 1e-12


class QuantumError(RuntimeError):
    pass


@dataclass(frozen=True)
class WavePacketSpec:
    """Minimal-uncertainty Gaussian packet, |p0| = 1 in billiard units."""

    r0: np.ndarray
    p0: np.ndarray
    sigma: float
    hbar_eff: float

    def __post_init__(self):
        object.__setattr__(self, "r0", np.asarray(self.r0, float))
        object.__setattr__(self, "p0", np.asarray(self.p0, float))
        if self.sigma <= 0 or self.hbar_eff <= 0:
            raise QuantumError("sigma and hbar_eff must be positive")
        if abs(np.hypot(*self.p0) - 1.0) > 1e-9:
            raise QuantumError("packet momentum must be a unit vector")

    def validate_margin(self, domain):
        margin = 3.0 * self.sigma * math.sqrt(self.hbar_eff)
        d = domain.distance_to_boundary(self.r0)
        if d < margin:
            raise QuantumError(
                f"packet center {d:.4f} from the wall; needs at least "
                f"3*sigma*sqrt(hbar_eff) = {margin:.4f} so tail clipping "
                "is negligible")

    def values(self, pts):
        """Normalized free-space packet sampled at the given points."""
        pts = np.atleast_2d(pts)
        dr = pts - self.r0
        norm = 1.0 / (self.sigma * math.sqrt(math.pi * self.hbar_eff))
        phase = (pts @ self.p0) / self.hbar_eff
        gauss = np.sum(dr * dr, axis=1) / (2.0 * self.sigma ** 2
                                           * self.hbar_eff)
        return norm * np.exp(1j * phase - gauss)


@dataclass
class SpectralState:
    coefficients: np.ndarray   # complex, unit norm
    captured_norm: float

    def __post_init__(self):
        n = float(np.sum(np.abs(self.coefficients) ** 2))
        if abs(n - 1.0) > 1e-12:
            raise QuantumError("state not normalized after projection")


# degree-5 Gauss rule on the reference triangle (barycentric coords, weights)
_G7_W = np.array([9 / 40] + [(155 - math.sqrt(15)) / 1200] * 3
                 + [(155 + math.sqrt(15)) / 1200] * 3)
_a1 = (6 - math.sqrt(15)) / 21
_a2 = (6 + math.sqrt(15)) / 21
_G7_L = np.array(
    [[1 / 3, 1 / 3, 1 / 3],
     [1 - 2 * _a1, _a1, _a1], [_a1, 1 - 2 * _a1, _a1], [_a1, _a1, 1 - 2 * _a1],
     [1 - 2 * _a2, _a2, _a2], [_a2, 1 - 2 * _a2, _a2], [_a2, _a2, 1 - 2 * _a2]])


def _packet_load_vector(spec, mesh):
    """f_i = integral of basis function phi_i times the exact packet.

    Element-wise degree-5 Gauss quadrature of the analytic Gaussian (rather
    than a mass-weighted product with nodal samples): the resulting norm
    deficit measures the true distance of the packet from the FEM space
    instead of being dominated by second-order quadrature error.
    """
    t = mesh.triangles
    p = mesh.nodes[t]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    f = np.zeros(mesh.n_nodes, dtype=complex)
    for q in range(len(_G7_W)):
        lam = _G7_L[q]
        xq = np.einsum("k,mkd->md", lam, p)
        vals = spec.values(xq) * (_G7_W[q] * area)
        for i in range(3):
            np.add.at(f, t[:, i], lam[i] * vals)
    return f


def project_packet(spec: WavePacketSpec, basis: EigenBasis, domain,
                   threshold=CAPTURE_THRESHOLD) -> SpectralState:
    """Expand the packet over the reliable part of the eigenbasis.

    Coefficients are exact-quadrature inner products of the piecewise-linear
    eigenfunctions with the analytic packet.  The eigenvectors are
    orthonormal in the solver's discrete inner product, not exactly in L2,
    so the captured norm is computed as the true L2 norm of the orthogonal
    projection onto their span (through the small Gram system) against the
    exact unit norm of the free-space Gaussian before renormalizing.
    """
    spec.validate_margin(domain)
    if abs(spec.hbar_eff - basis.hbar_eff) > 1e-12 * spec.hbar_eff:
        raise QuantumError("packet and basis disagree on hbar_eff")
    mesh = basis.mesh
    f = _packet_load_vector(spec, mesh)
    nrel = basis.n_reliable
    W = basis.vectors[:, :nrel]
    _, Ml2 = assemble_full(mesh, blend=1.0)
    gram = W.T @ (Ml2 @ W)
    b = W.T @ f
    c = np.linalg.solve(gram, b)
    captured = float(np.real(np.vdot(b, c)))
    if captured < threshold:
        raise QuantumError(
            f"captured norm {captured:.5f} < {threshold}; increase the "
            "number of states or hbar_eff")
    return SpectralState(c / np.linalg.norm(c), captured)


# ---------------------------------------------------------------------------
# operator matrices
# ---------------------------------------------------------------------------

@dataclass
class OperatorMatrices:
    """x and p_x matrix elements over the reliable basis subset.

    P is purely imaginary antisymmetric: P = i * p_factor with p_factor real
    antisymmetric, built from the energy-difference identity
    P_nm = i (E_n - E_m) X_nm / hbar (mass 1).  The direct derivative
    quadrature is kept as a consistency diagnostic.
    """

    X: np.ndarray
    p_factor: np.ndarray
    p_median_discrepancy: float


def _position_weighted_mass(mesh, axis=0):
    """Sparse quadrature matrix for integrals of x * phi_i * phi_j.

    Uses the exact cubic rule on linear elements:
    int lam_i lam_j lam_k = A/60 for distinct indices, A/30 for a pair,
    A/10 when all equal.
    """
    t = mesh.triangles
    p = mesh.nodes[t]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    x = p[:, :, axis]                                   # (m, 3)
    w = np.ones((3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                eq = (i == j) + (j == k) + (i == k)
                w[i, j, k] = {0: 1.0, 1: 2.0, 3: 6.0}[eq]
    # element matrix: E_ij = (A/60) * sum_k x_k w[i,j,k]
    Ee = np.einsum("mk,ijk->mij", x, w) * (area / 60.0)[:, None, None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((Ee.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _derivative_matrix(mesh, axis=0):
    """Sparse quadrature matrix for integrals of phi_i * d(phi_j)/dx."""
    t = mesh.triangles
    p = mesh.nodes[t]
    b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                  p[:, 2, 1] - p[:, 0, 1],
                  p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0],
                  p[:, 0, 0] - p[:, 2, 0],
                  p[:, 1, 0] - p[:, 0, 0]], axis=1)
    grad = b if axis == 0 else c
    # int phi_i dphi_j = (A/3) * grad_j / (2A) = grad_j / 6 for each i
    Ee = np.repeat(grad[:, None, :], 3, axis=1) / 6.0
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((Ee.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def build_operator_matrices(basis: EigenBasis) -> OperatorMatrices:
    mesh = basis.mesh
    nrel = basis.n_reliable
    V = basis.vectors[:, :nrel]
    Xg = _position_weighted_mass(mesh, axis=0)
    X = V.T @ (Xg @ V)
    X = 0.5 * (X + X.T)   # symmetric by construction, enforce exactly
    E = basis.energies[:nrel]
    p_ed = (E[:, None] - E[None, :]) * X / basis.hbar_eff
    Dg = _derivative_matrix(mesh, axis=0)
    d = V.T @ (Dg @ V)
    p_dq = -basis.hbar_eff * 0.5 * (d - d.T)  # antisymmetrize; i * p_dq = P
    # compare only elements that are not symmetry-forbidden zeros: below
    # ~1e-3 of the largest element the entries are pure discretization noise
    scale = np.max(np.abs(p_ed)) if np.any(p_ed) else 1.0
    mask = np.abs(p_ed) > 1e-3 * scale
    np.fill_diagonal(mask, False)
    if np.any(mask):
        disc = np.abs(p_dq[mask] - p_ed[mask]) / np.abs(p_ed[mask])
        med = float(np.median(disc))
    else:
        med = float("nan")
    return OperatorMatrices(X, p_ed, med)


# ---------------------------------------------------------------------------
# time evolution
# ---------------------------------------------------------------------------

@dataclass
class OtocSeries:
    times: np.ndarray
    c: np.ndarray                   # C(t) >= 0
    l: np.ndarray = None            # L(t), optional
    hbar_eff: float = float("nan")
    n_states: int = 0
    captured_norm: float = float("nan")

    def to_csv(self):
        rows = ["t,C_over_hbar2,L,lnC_over_hbar2"]
        h2 = self.hbar_eff ** 2
        for k in range(len(self.times)):
            lv = self.l[k] if self.l is not None else float("nan")
            rows.append(",".join("%.17g" % v for v in (
                self.times[k], self.c[k] / h2, lv,
                math.log(self.c[k] / h2) if self.c[k] > 0 else float("-inf"))))
        return "\n".join(rows) + "\n"


def _commutator_apply(X, Pf, u, c):
    """B(t) |psi> with B = [x(t), i Pf] and x(t) = diag(u) X diag(u*)."""
    a = Pf @ c
    xa = u * (X @ (np.conj(u) * a))
    xc = u * (X @ (np.conj(u) * c))
    return 1j * (xa - Pf @ xc)


def otoc(times, matrices: OperatorMatrices, energies, state: SpectralState,
         hbar_eff, with_log=False) -> OtocSeries:
    """C(t) (and optionally L(t)) of the packet over a time grid."""
    times = np.asarray(times, float)
    if times[0] != 0.0:
        raise QuantumError("time grid must include t = 0 first")
    E = np.asarray(energies, float)
    c0 = state.coefficients
    X, Pf = matrices.X, matrices.p_factor
    if not (len(E) == len(c0) == X.shape[0]):
        raise QuantumError("dimension mismatch between basis, matrices and "
                           "state")
    C = np.empty(len(times))
    L = np.empty(len(times)) if with_log else None
    for k, t in enumerate(times):
        u = np.exp(1j * E * t / hbar_eff)
        b = _commutator_apply(X, Pf, u, c0)
        C[k] = float(np.real(b @ np.conj(b)))
        if with_log:
            L[k] = _log_expectation(X, Pf, u, c0, hbar_eff)
    return OtocSeries(times, C, L, hbar_eff, len(E), state.captured_norm)


def _log_expectation(X, Pf, u, c0, hbar_eff):
    xt = (u[:, None] * np.conj(u)[None, :]) * X
    B = 1j * (xt @ Pf - Pf @ xt)
    Mt = (B.conj().T @ B) / hbar_eff ** 2
    mu, W = np.linalg.eigh(Mt)
    floor = EPS_LOG * max(float(mu[-1]), 1e-300)
    mu = np.maximum(mu, floor)
    amp2 = np.abs(W.conj().T @ c0) ** 2
    return float(amp2 @ np.log(mu))


def log_otoc(times, matrices, energies, state, hbar_eff,
             max_dense_dim=4000):
    """L(t) alone; errors out if the dense eigendecomposition is too big."""
    if matrices.X.shape[0] > max_dense_dim:
        raise QuantumError(
            f"basis dimension {matrices.X.shape[0]} too large for dense "
            "operator logarithms; reduce N or coarsen the time grid")
    series = otoc(times, matrices, energies, state, hbar_eff, with_log=True)
    return series


# ---------------------------------------------------------------------------
# growth-rate fitting and semiclassical times
# ---------------------------------------------------------------------------

@dataclass
class GrowthFit:
    rate: float                 # fitted 2*lambda-tilde
    intercept: float
    window: tuple
    valid: bool


def fit_log_growth(times, ln_values, window) -> GrowthFit:
    """Least-squares line through (t, ln value) samples in the window."""
    times = np.asarray(times, float)
    ln_values = np.asarray(ln_values, float)
    ta, tb = float(window[0]), float(window[1])
    if tb <= ta:
        raise QuantumError("empty fit window")
    m = (times >= ta - 1e-12) & (times <= tb + 1e-12)
    if np.sum(m) < 5:
        raise QuantumError("need at least 5 samples in the fit window")
    if not np.all(np.isfinite(ln_values[m])):
        raise QuantumError("non-finite values in the fit window")
    A = np.c_[times[m], np.ones(int(np.sum(m)))]
    coef, *_ = np.linalg.lstsq(A, ln_values[m], rcond=None)
    rate = float(coef[0])
    valid = rate >= 5.0 / (tb - ta)
    return GrowthFit(rate, float(coef[1]), (ta, tb), valid)


def fit_growth_rate(series: OtocSeries, window) -> GrowthFit:
    times = np.asarray(series.times, float)
    ta, tb = window
    m = (times >= ta - 1e-12) & (times <= tb + 1e-12)
    if np.any(series.c[m] <= 0):
        raise QuantumError("nonpositive C(t) in the fit window")
    return fit_log_growth(times, np.log(series.c), window)


def ehrenfest_time(hbar_eff, lam_cl):
    """Semiclassical window t_E = ln(1/hbar_eff) / lambda_cl."""
    if lam_cl <= 0:
        raise QuantumError("Ehrenfest time undefined for lambda_cl <= 0")
    if hbar_eff <= 0:
        raise QuantumError("hbar_eff must be positive")
    return math.log(1.0 / hbar_eff) / lam_cl

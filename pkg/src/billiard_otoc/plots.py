"""Matplotlib figures for harness runs.

Every function writes a PNG next to the CSV data it visualizes and returns
the path written.  The Agg backend is forced so runs work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_domain(path, domain, mesh=None, r0=None):
    """Boundary outline, optionally with the mesh and packet center."""
    fig, ax = plt.subplots(figsize=(5, 5))
    if mesh is not None:
        ax.triplot(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles,
                   lw=0.3, color="0.7")
    pts = domain.boundary_polyline(400)
    ax.plot(pts[:, 0], pts[:, 1], "k-", lw=1.2)
    if r0 is not None:
        ax.plot([r0[0]], [r0[1]], "r*", ms=10)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _finish(fig, path)


def plot_quantum_otoc(path, series_by_hbar, classical=None, t_e=None):
    """ln(C/hbar^2) per hbar_eff, with optional classical overlay."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for hb, ser in sorted(series_by_hbar.items()):
        with np.errstate(divide="ignore"):
            lnc = np.log(ser.c / hb ** 2)
        ax.plot(ser.times, lnc, label=f"hbar_eff = {hb:g}")
        if ser.l is not None:
            ax.plot(ser.times, ser.l, "--", lw=0.8,
                    label=f"L(t), hbar_eff = {hb:g}")
    if classical is not None:
        ax.plot(classical.times, np.log(np.maximum(classical.c_cl, 1e-300)),
                "k:", lw=1.5, label="ln C_cl")
    if t_e is not None and np.isfinite(t_e):
        ax.axvline(t_e, color="0.5", lw=0.8)
        ax.text(t_e, ax.get_ylim()[1], " t_E", va="top")
    ax.set_xlabel("t")
    ax.set_ylabel("ln(C / hbar_eff^2)")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_classical_otoc(path, series, lyapunov=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    lnc = np.log(np.maximum(series.c_cl, 1e-300))
    ax.plot(series.times, lnc, label="ln C_cl")
    ax.plot(series.times, series.l_cl, "--", label="L_cl")
    if lyapunov is not None:
        t = np.asarray(lyapunov.window)
        ax.plot(t, 2.0 * lyapunov.lam * t + lnc[0], "k:",
                label=f"2 lambda_cl = {2 * lyapunov.lam:.3g}")
    ax.set_xlabel("t")
    ax.set_ylabel("ln C_cl")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_rate_table(path, rows):
    """Growth rate vs hbar_eff from a sweep; rows are (hbar, rate, valid)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    hb = np.array([r[0] for r in rows])
    rate = np.array([r[1] for r in rows])
    ok = np.array([r[2] for r in rows], dtype=bool)
    ax.semilogx(hb[ok], rate[ok], "o-", label="valid fits")
    if np.any(~ok):
        ax.semilogx(hb[~ok], rate[~ok], "x", color="0.5", label="invalid")
    ax.set_xlabel("hbar_eff")
    ax.set_ylabel("fitted 2 lambda-tilde")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_weyl(path, report):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(report.eps, report.counted, drawstyle="steps-post",
            label="counted N(eps)")
    ax.plot(report.eps, report.predicted, "k--", label="Weyl two-term")
    ax.set_xlabel("eps = 2E / hbar_eff^2")
    ax.set_ylabel("N(eps)")
    ax.legend(fontsize=8)
    return _finish(fig, path)

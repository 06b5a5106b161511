"""Matplotlib figures for run reports (files only, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PHI_DISPLAY_MIN = 0.1


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_convergence(report, path):
    """Allen-Cahn error, step size and volume fraction against pseudo-time."""
    t = np.array([s.t for s in report.steps])
    fig, ax = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    if len(t):
        ax[0].semilogy(t, [s.E_AC for s in report.steps], label="E_AC")
        ax[0].semilogy(t, [s.E_dphi for s in report.steps], "--", label="E_dphi")
        ax[0].semilogy(t, [s.E_du for s in report.steps], ":", label="E_du")
        ax[0].legend()
        ax[1].semilogy(t, [s.dt for s in report.steps])
        ax[2].plot(t, [s.v for s in report.steps])
    ax[0].set_ylabel("error")
    ax[1].set_ylabel("dt")
    ax[2].set_ylabel("volume fraction")
    ax[2].set_xlabel("t / T_phi")
    ax[0].set_title(f"status: {report.status}")
    return _save(fig, path)


def plot_phi(mesh, phi, path, title=""):
    """Phase field on the grid (mid-depth slice in 3D), hidden below 0.1."""
    divs = mesh.divisions
    if mesh.dim == 2:
        grid = phi.reshape(divs[1] + 1, divs[0] + 1)
        x = np.linspace(0, mesh.extents[0], divs[0] + 1)
        y = np.linspace(0, mesh.extents[1], divs[1] + 1)
        xlabel, ylabel = "X", "Y"
    else:
        full = phi.reshape(divs[2] + 1, divs[1] + 1, divs[0] + 1)
        grid = full[:, divs[1] // 2, :]
        x = np.linspace(0, mesh.extents[0], divs[0] + 1)
        y = np.linspace(0, mesh.extents[2], divs[2] + 1)
        xlabel, ylabel = "X", "Z"
        title = (title + " (mid-depth slice)").strip()
    masked = np.ma.masked_less(grid, PHI_DISPLAY_MIN)
    fig, ax = plt.subplots(figsize=(7, 7 * (y[-1] / x[-1]) + 1))
    im = ax.pcolormesh(x, y, masked, shading="gouraud", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_aspect("equal")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8, label="phi")
    return _save(fig, path)


def plot_laws(phi, curves: dict, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in curves.items():
        ax.plot(phi, values, label=name)
    ax.axvspan(0.0, 1.0, color="0.92", zorder=0)
    ax.set_xlabel("phi")
    ax.set_ylabel("scalar stiffness")
    ax.set_ylim(-2, 14)
    ax.legend()
    return _save(fig, path)


def plot_sweep(param, values, rows, path):
    """Volume fraction and Newton totals across a parameter sweep."""
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    v = [r.get("v_sol", np.nan) for r in rows]
    n = [r.get("newton_total", np.nan) for r in rows]
    ax[0].plot(values, v, "o-")
    ax[0].set_ylabel("v_sol")
    ax[1].plot(values, n, "s-")
    ax[1].set_ylabel("Newton iterations")
    for a in ax:
        a.set_xlabel(param)
    return _save(fig, path)

"""PNG figures from a plain report document (Agg backend, no display needed)."""
from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def decay_figure(verified, path):
    """``|E(t, s, xi)|`` against ``1 + t`` on log axes, one curve per frequency, with fitted lines."""
    fits = [r for r in verified["decay_fits"] if "samples" in r]
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    cmap = plt.get_cmap("viridis")
    for i, r in enumerate(fits):
        t = np.asarray(r["samples"]["t"])
        v = np.asarray(r["samples"]["norm"])
        c = cmap(i / max(len(fits) - 1, 1))
        ax.loglog(1 + t, v, ".", color=c, ms=3)
        ax.loglog(1 + t, np.exp(r["intercept"]) * (1 + t) ** r["exponent"], "-", color=c, lw=0.8,
                  label=f"|xi|={r['xi_norm']:.2g}: {r['exponent']:.3f}")
    ax.set_xlabel("1 + t")
    ax.set_ylabel("|E(t, s, xi)|")
    ax.set_title("Decay fits")
    if 0 < len(fits) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def surface_figure(surface, path):
    """Radial samples of one slowness-surface branch (polar plot for n = 2, scatter for n = 3)."""
    rows = np.asarray(surface["table"]["rows"], dtype=float)
    cols = surface["table"]["columns"]
    r = rows[:, cols.index("r")]
    if cols[0] == "angle":
        fig = plt.figure(figsize=(5, 5))
        ax = fig.add_subplot(projection="polar")
        ax.plot(np.append(rows[:, 0], rows[0, 0]), np.append(r, r[0]), "-")
        if np.any(np.isfinite(r)):
            ax.set_rmax(1.15 * np.nanmax(r))
    else:
        pol, az = rows[:, 0], rows[:, 1]
        x = r * np.sin(pol) * np.cos(az)
        y = r * np.sin(pol) * np.sin(az)
        z = r * np.cos(pol)
        fig = plt.figure(figsize=(5, 5))
        ax = fig.add_subplot(projection="3d")
        ax.scatter(x, y, z, s=4)
    g = surface["gamma"]
    ax.set_title(f"branch {surface['branch']} at t={surface['t']:g}, gamma={g if g is not None else 'n/a'}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def mu_figure(predicted, path):
    """Bars of the large-time exponents ``mu_j`` with the predicted ``kappa``s for comparison."""
    mu = predicted["mu"]["mu_j"]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.bar([f"mu_{j + 1}" for j in range(len(mu))], mu, color="tab:blue")
    k = predicted.get("kappa")
    if k:
        for name, v, c in (("kappa+", k["kappa_plus"], "tab:green"), ("kappa-", k["kappa_minus"], "tab:red")):
            if math.isfinite(v):
                ax.axhline(v, color=c, ls="--", lw=1, label=name)
        ax.legend(fontsize=8)
    ax.set_ylabel("exponent")
    ax.set_title("Predicted exponents")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_figures(report, fig_dir):
    """Write every figure the report has data for; returns the paths."""
    os.makedirs(fig_dir, exist_ok=True)
    paths = []
    pred = report.get("predicted")
    if pred and "mu" in pred:
        p = os.path.join(fig_dir, "exponents.png")
        mu_figure(pred, p)
        paths.append(p)
    ver = report.get("verified")
    if ver and any("samples" in r for r in ver["decay_fits"]):
        p = os.path.join(fig_dir, "decay_fits.png")
        decay_figure(ver, p)
        paths.append(p)
    for s in report.get("surfaces") or []:
        p = os.path.join(fig_dir, f"surface_branch{s['branch']}.png")
        surface_figure(s, p)
        paths.append(p)
    return paths

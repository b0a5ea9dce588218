"""SVG figures for the CLI reports (matplotlib, Agg backend, reproducible output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update(
    {
        "svg.hashsalt": "oscbc",
        "svg.fonttype": "none",
        "figure.figsize": (8.0, 6.0),
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 11,
    }
)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def tail_profile(heights, deviations, path, rate=None, label="v"):
    """Semilog tangential-sup deviation from the tail constant."""
    heights = np.asarray(heights)
    dev = np.asarray(deviations)
    fig, ax = plt.subplots()
    pos = dev > 0
    ax.semilogy(heights[pos], dev[pos], "-", color="tab:blue", lw=1.5, label=f"sup |{label} - mu|")
    if rate is not None and pos.any():
        i = np.flatnonzero(pos)[len(np.flatnonzero(pos)) // 3]
        ref = dev[i] * np.exp(-rate * (heights - heights[i]))
        ax.semilogy(heights, ref, "--", color="tab:red", lw=1.0, label=f"fitted rate {rate:.4g}")
    ax.set_xlabel("height y.e")
    ax.set_ylabel("deviation")
    ax.legend()
    _save(fig, path)


def deviation_curve(eps, deviations, path, delta=None):
    """Blow-up deviations against epsilon on log axes."""
    fig, ax = plt.subplots()
    ax.loglog(eps, np.maximum(deviations, 1e-300), "-o", color="tab:blue", lw=1.5, label="deviation")
    if delta is not None:
        ax.axhline(delta, color="tab:red", ls="--", lw=1.0, label=f"delta = {delta:g}")
    ax.invert_xaxis()
    ax.set_xlabel("epsilon")
    ax.set_ylabel("|u_eps - g_bar|")
    ax.legend()
    _save(fig, path)


def exit_growth(R, means, std_errors, path, reference=None):
    """Capped mean exit time against strip height, with 3-s.e. bars."""
    fig, ax = plt.subplots()
    ax.errorbar(R, means, yerr=3 * np.asarray(std_errors), fmt="o-", color="tab:blue", capsize=3, label="Monte Carlo")
    if reference is not None:
        ax.plot(R, reference, "x--", color="tab:red", label="closed form")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("strip height R")
    ax.set_ylabel("mean exit time")
    ax.legend()
    _save(fig, path)


def wr_overlay(x, numeric, exact, path):
    """Discrete W_R against its closed form."""
    fig, (ax, bx) = plt.subplots(2, 1, sharex=True, gridspec_kw={"height_ratios": [3, 1]})
    ax.plot(x, exact, "-", color="tab:red", lw=2.0, label="closed form")
    ax.plot(x, numeric, "--", color="tab:blue", lw=1.0, label="finite differences")
    ax.set_ylabel("W_R")
    ax.legend()
    bx.plot(x, np.asarray(numeric) - np.asarray(exact), color="k", lw=1.0)
    bx.set_xlabel("x")
    bx.set_ylabel("error")
    _save(fig, path)

"""
Time-periodic half-space problems ``v_s + F(D2v) = 0`` with ``v = phi(s)`` at the boundary.

One period of implicit Euler defines the period map ``v(., 0) -> v(., 1)``;
its fixed point is found with Anderson-accelerated iteration, seeded from
the time mean of ``phi``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cell_problem import TailReport, _Rung, refine_tail
from .elliptic_solver import _frame_coefficients, assemble, howard
from .operator import OperatorSpec
from .strip_grid import BoundaryData, GridField, StripGrid, build_strip

__all__ = ["SpaceTimeField", "PeriodReport", "solve_time_periodic", "mu_parabolic", "step_count"]


@dataclass
class PeriodReport:
    sweeps: int
    seam_gap: float
    converged: bool
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sweeps": self.sweeps,
            "seam_gap": self.seam_gap,
            "converged": self.converged,
            "history": list(self.history),
        }


@dataclass
class SpaceTimeField:
    """Values at times ``s_n = n dt``, n = 0 .. nsteps-1; shape ``(nsteps, nt, nn)``."""

    values: np.ndarray
    grid: StripGrid
    dt: float
    report: Optional[PeriodReport] = None

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    def at_step(self, n: int) -> GridField:
        return GridField(self.values[n % self.values.shape[0]], self.grid)

    @property
    def converged(self) -> bool:
        return self.report is not None and self.report.converged

    def tangential_oscillation(self) -> float:
        v = self.values
        return float((v.max(axis=1) - v.min(axis=1)).max())

    def to_csv(self, path, tangential_index: int = 0) -> None:
        """Slice ``(x, s, value)`` along the normal at one tangential node."""
        heights = self.grid.heights
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "s", "value"])
            for n, s in enumerate(self.times):
                for j, x in enumerate(heights):
                    w.writerow([repr(float(x)), repr(float(s)), repr(float(self.values[n, tangential_index, j]))])


def step_count(dt: float, period: float = 1.0) -> int:
    n = period / dt
    k = int(round(n))
    if k < 1 or abs(k - n) > 1e-9 * max(1.0, n):
        raise ValueError(f"dt={dt:g} does not divide the period {period:g}")
    return k


def _check_operator(spec: OperatorSpec) -> None:
    if not spec.drift_free:
        raise ValueError("the time-periodic cell operator must not depend on the gradient (b = 0)")
    if not spec.y_independent:
        raise ValueError("the time-periodic cell operator must not depend on y")


def _anderson(G, x0, tol, max_sweeps, depth=5):
    """Anderson mixing for ``x = G(x)``; falls back to plain steps when it stalls."""
    x = x0
    gx = G(x)
    fx = gx - x
    hist = [float(np.abs(fx).max())]
    dX, dF = [], []
    sweeps = 1
    while hist[-1] > tol and sweeps < max_sweeps:
        if dF:
            Fm = np.stack(dF, axis=1)
            gamma = np.linalg.lstsq(Fm, fx, rcond=None)[0]
            x_new = gx - (np.stack(dX, axis=1) + Fm) @ gamma
        else:
            x_new = gx
        g_new = G(x_new)
        f_new = g_new - x_new
        sweeps += 1
        r = float(np.abs(f_new).max())
        if not math.isfinite(r) or r > 10 * hist[-1]:
            # restart from the last plain iterate
            dX, dF = [], []
            x_new = gx
            g_new = G(x_new)
            f_new = g_new - x_new
            sweeps += 1
            r = float(np.abs(f_new).max())
        else:
            dX.append(g_new - gx)
            dF.append(f_new - fx)
            if len(dF) > depth:
                dX.pop(0)
                dF.pop(0)
        x, gx, fx = x_new, g_new, f_new
        hist.append(r)
    return x, hist, sweeps


def solve_time_periodic(
    Ftilde: OperatorSpec,
    phi: BoundaryData,
    R: float,
    h: float,
    dt: Optional[float] = None,
    tol: float = 1e-8,
    max_sweeps: int = 400,
) -> SpaceTimeField:
    """Periodic-in-time strip solution by iterating the one-period map."""
    _check_operator(Ftilde)
    if phi.kind != "time-periodic":
        raise ValueError("phi must be time-periodic boundary data")
    dt = h if dt is None else float(dt)
    nsteps = step_count(dt)
    grid = build_strip(Ftilde, R, h)
    coeffs = [_frame_coefficients(p, grid, k) for k, p in enumerate(Ftilde.pieces)]
    scheme = assemble(grid, coeffs, "neumann-zero", shift=1.0 / dt)
    traces = phi.at_time(dt * np.arange(1, nsteps + 1))
    nt = grid.tangential_count

    def sweep(v, keep=False):
        out = []
        for n in range(nsteps):
            v = howard(scheme, np.full(nt, traces[n]), source=v / dt, tol=tol, initial=v).values
            if keep:
                out.append(v)
        return v, out

    def G(x):
        return sweep(x.reshape(grid.shape))[0].ravel()

    x0 = np.full(grid.size, phi.mean_value())
    x, hist, sweeps = _anderson(G, x0, tol, max_sweeps)
    v1, frames = sweep(x.reshape(grid.shape), keep=True)
    seam = float(np.abs(v1 - x.reshape(grid.shape)).max())
    values = np.stack([frames[-1]] + frames[:-1])
    rep = PeriodReport(sweeps + 1, seam, seam <= tol, hist + [seam])
    return SpaceTimeField(values, grid, dt, rep)


def mu_parabolic(
    Ftilde: OperatorSpec,
    phi: BoundaryData,
    mu_tol: float = 1e-3,
    R0: float = 4.0,
    h0: Optional[float] = None,
    dt0: Optional[float] = None,
    tol: float = 1e-8,
    max_doublings: int = 3,
) -> TailReport:
    """Tail constant of the time-periodic cell problem.

    Same ladder as the elliptic case; ``dt`` is halved together with ``h``.
    """
    _check_operator(Ftilde)
    if h0 is None:
        h0 = 0.01 if Ftilde.dim == 1 else Ftilde.tangential_period / 20
    ratio = 1.0 if dt0 is None else dt0 / h0

    def rung(R, h):
        v = solve_time_periodic(Ftilde, phi, R, h, ratio * h, tol)
        samples = np.moveaxis(v.values, 2, -1)
        mu_val = float(v.values[:, :, -1].mean())
        return _Rung(R, h, mu_val, v.grid.heights, samples, v.converged)

    rep = refine_tail(rung, R0, h0, mu_tol, phi.sup_bound(), max_doublings)
    rep.extras["dt_used"] = ratio * rep.h_used
    return rep

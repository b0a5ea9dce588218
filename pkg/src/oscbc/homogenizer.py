"""
Epsilon problems with oscillating Dirichlet data and their boundary blow-up.

For each epsilon on a dyadic ladder the physical problem is solved on a
strip one fast period wide (elliptic) or on an interval (parabolic), then
sampled a distance ``eps * R`` from the boundary and compared with the
homogenized datum obtained from the cell problem.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cell_problem import SubsolutionCertificate, TailReport, almost_periodic_mu, subsolution_diagnostic, mu
from .elliptic_solver import NonMonotoneSchemeError, assemble, howard
from .operator import EpsProblem
from .parabolic_cell import mu_parabolic
from .strip_grid import GridField, StripGrid, _divides

__all__ = [
    "BlowupReport",
    "solve_epsilon",
    "homogenized_boundary",
    "blowup_check",
    "parabolic_blowup_check",
    "solve_parabolic_epsilon",
]

DEFAULT_LADDER = (1 / 8, 1 / 16, 1 / 32)


@dataclass
class BlowupReport:
    x: list
    eps: list
    R: float
    values: list
    gbar: float
    deviations: list
    delta: float
    verdict: str
    subsolution: Optional[str] = None
    t: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def monotone_last_two(self) -> bool:
        d = self.deviations
        return len(d) < 2 or d[-1] <= d[-2]

    @property
    def monotone(self) -> bool:
        d = self.deviations
        return all(b <= a for a, b in zip(d, d[1:]))

    def to_dict(self) -> dict:
        out = {
            "x": self.x,
            "t": self.t,
            "eps": self.eps,
            "R": self.R,
            "values": self.values,
            "gbar": self.gbar,
            "deviations": self.deviations,
            "delta": self.delta,
            "monotone": self.monotone,
            "monotone_last_two": self.monotone_last_two,
            "subsolution": self.subsolution,
            "verdict": self.verdict,
        }
        out.update(self.extras)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "value", "deviation"])
            for e, v, d in zip(self.eps, self.values, self.deviations):
                w.writerow([repr(float(e)), repr(float(v)), repr(float(d))])


def _check_resolution(eps: float, h_fine: float) -> None:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if h_fine > eps / 16 * (1 + 1e-12):
        raise ValueError(f"h_fine={h_fine:g} under-resolves the fast scale; need h_fine <= eps/16 = {eps / 16:g}")


def _physical_grid(problem: EpsProblem, eps: float, h: float) -> StripGrid:
    piece = problem.piece
    dim = piece.dim
    spec = problem.frozen_spec(np.zeros(dim))
    nn = _divides(problem.H, h)
    if nn is None:
        raise ValueError(f"h={h:g} does not divide H={problem.H:g}")
    if dim == 1:
        return StripGrid(1, 1, nn + 1, h, problem.H, spec.normal.copy(), None, 1.0)
    width = eps * spec.tangential_period if problem.width is None else float(problem.width)
    nt = _divides(width, h)
    if nt is None:
        raise ValueError(f"h={h:g} does not divide the window width {width:g}")
    return StripGrid(2, nt, nn + 1, h, problem.H, spec.normal.copy(), spec.tangent.copy(), width, spec.lattice)


def solve_epsilon(
    problem: EpsProblem,
    eps: float,
    h_fine: Optional[float] = None,
    tol: Optional[float] = None,
) -> GridField:
    """Discrete solution of the epsilon problem on ``0 <= x.e <= H``.

    Dirichlet ``g(x/eps, x)`` at the bottom, Neumann-zero at the top, with
    the zeroth-order term on the diagonal.  ``h_fine`` defaults to eps/16.
    """
    if problem.family == "parabolic":
        raise ValueError("use solve_parabolic_epsilon for the parabolic family")
    h = eps / 16 if h_fine is None else float(h_fine)
    _check_resolution(eps, h)
    grid = _physical_grid(problem, eps, h)
    pts = grid.points()
    flat = pts.reshape(-1, grid.dim)
    fast = pts / eps
    Q = grid.frame()
    A = problem.piece.A_at(fast) * problem.A_slow(flat).reshape(grid.shape)[..., None, None]
    Af = np.einsum("ai,...ij,jb->...ab", Q, A, Q)
    diag = np.einsum("...aa->...a", Af)
    if np.max(np.abs(Af - diag[..., None] * np.eye(grid.dim)), initial=0.0) > 1e-12 * max(1.0, problem.piece.Lam):
        raise ValueError("diffusion must be diagonal in the strip axes")
    c = (1.0 / eps) if problem.family == "fast-drift" else 1.0
    b = c * problem.piece.b_at(fast) * problem.b_slow(flat).reshape(grid.shape)[..., None]
    coeffs = [(np.moveaxis(diag, -1, 0), np.moveaxis(b @ Q, -1, 0))]
    source = 0.0 if problem.f is None else np.asarray(problem.f(pts, fast), dtype=float)
    try:
        scheme = assemble(grid, coeffs, "neumann-zero", shift=problem.zeroth_order, source=source)
    except NonMonotoneSchemeError as exc:
        raise NonMonotoneSchemeError(f"eps={eps:g}: {exc}") from exc
    bpts = grid.boundary_points()
    trace = problem.g_amp(bpts) * problem.psi(bpts / eps) + problem.g_offset(bpts)
    return howard(scheme, trace, tol=tol)


def homogenized_boundary(
    problem: EpsProblem,
    x,
    mu_tol: float = 1e-3,
    return_report: bool = False,
    **kw,
):
    """Homogenized Dirichlet value at the boundary point ``x``.

    Periodic data go through the lattice cell problem, almost-periodic data
    through the widened-window solver (frozen operator must be y-independent).
    With ``return_report`` the tail report and subsolution certificate come back too;
    an uncertified subsolution verdict does not stop the computation.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    spec = problem.frozen_spec(x)
    psi = problem.frozen_trace(x)
    cert = subsolution_diagnostic(spec)
    rep: Optional[TailReport] = None
    if not psi.terms:
        value = psi.constant
    elif psi.kind == "almost-periodic":
        rep = almost_periodic_mu(spec, psi, mu_tol=mu_tol, **kw)
        value = rep.mu
    else:
        rep = mu(spec, psi, mu_tol=mu_tol, **kw)
        value = rep.mu
    if return_report:
        return value, rep, cert
    return value


def _verdict(devs, delta, cert: Optional[SubsolutionCertificate]) -> str:
    if cert is not None and cert.verdict != "certified":
        return "finding"
    ok = devs[-1] <= delta and (len(devs) < 2 or devs[-1] <= devs[-2])
    return "pass" if ok else "fail"


def blowup_check(
    problem: EpsProblem,
    x=None,
    R: float = 1.0,
    delta: float = 0.05,
    eps_ladder: Sequence[float] = DEFAULT_LADDER,
    h_ratio: int = 16,
    gbar: Optional[float] = None,
    tol: Optional[float] = None,
) -> BlowupReport:
    """Compare ``u_eps(x_eps + eps R e)`` with the homogenized value along the ladder."""
    if h_ratio < 16:
        raise ValueError("h_ratio must be at least 16")
    dim = problem.piece.dim
    x = np.zeros(dim) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    spec = problem.frozen_spec(x)
    if abs(float(x @ spec.normal)) > 1e-12:
        raise ValueError("x must lie on the boundary x.e = 0")
    if gbar is None:
        gbar, _, cert = homogenized_boundary(problem, x, return_report=True)
    else:
        cert = subsolution_diagnostic(spec)
    values, devs = [], []
    for eps in eps_ladder:
        u = solve_epsilon(problem, eps, eps / h_ratio, tol)
        if not u.report.converged:
            raise RuntimeError(f"eps={eps:g}: solver did not converge (residual {u.report.residual:.2e})")
        g = u.grid
        s = 0.0
        if dim > 1:
            # nearest boundary node to x, on the periodic window
            s = round(float(x @ spec.tangent) / g.h) % g.tangential_count * g.h
        val = u.interpolate(s, eps * R)
        values.append(val)
        devs.append(abs(val - gbar))
    return BlowupReport(
        x=list(map(float, x)),
        eps=list(map(float, eps_ladder)),
        R=float(R),
        values=values,
        gbar=float(gbar),
        deviations=devs,
        delta=float(delta),
        verdict=_verdict(devs, delta, cert),
        subsolution=cert.verdict,
    )


def solve_parabolic_epsilon(
    problem: EpsProblem,
    eps: float,
    t_stop: float,
    m: int = 16,
    h_ratio: int = 16,
    record_from: float = 0.0,
    probe: Optional[float] = None,
):
    """Implicit Euler for ``u_t + Ftilde(D2u) = 0`` on ``[0, length]``.

    ``dt = eps^2 / m`` and ``h = eps / h_ratio``.  Returns the final field and,
    when ``probe`` is a position, the probed values at steps with
    ``t >= record_from`` together with their times.
    """
    if problem.family != "parabolic":
        raise ValueError("needs the parabolic family")
    if int(m) != m or m < 8:
        raise ValueError("fast time is under-resolved; need dt = eps^2/m with integer m >= 8")
    spec = problem.Ftilde
    if not spec.drift_free or spec.dim != 1:
        raise ValueError("parabolic problems need a one-dimensional operator without drift")
    h = eps / h_ratio
    nn = _divides(problem.length, h)
    if nn is None:
        raise ValueError(f"h={h:g} does not divide the interval length {problem.length:g}")
    dt = eps**2 / m
    nsteps = int(round(t_stop / dt))
    if abs(nsteps * dt - t_stop) > 1e-9 * max(1.0, t_stop):
        raise ValueError("t_stop must be a whole number of time steps eps^2/m")
    grid = StripGrid(1, 1, nn + 1, h, problem.length, spec.normal.copy(), None, 1.0)
    pts = grid.points()
    coeffs = []
    for p in spec.pieces:
        a = np.einsum("i,...ij,j->...", spec.normal, p.A_at(pts), spec.normal)[None]
        coeffs.append((a, np.zeros_like(a)))
    scheme = assemble(grid, coeffs, "dirichlet", shift=1.0 / dt, top_value=0.0)
    x = grid.heights
    v = np.asarray(problem.u0(x), dtype=float).reshape(grid.shape) if problem.u0 is not None else np.zeros(grid.shape)
    probes, times = [], []
    for n in range(1, nsteps + 1):
        tau = n / m  # fast time t / eps^2
        left = float(problem.g_left.at_time(tau))
        right = float(problem.g_right.at_time(tau))
        v = howard(scheme, np.array([left]), source=v / dt, initial=v, top_value=right).values
        t = n * dt
        if probe is not None and t >= record_from - 1e-12:
            probes.append(GridField(v, grid).interpolate(0.0, probe))
            times.append(t)
    return GridField(v, grid), np.array(probes), np.array(times)


def parabolic_blowup_check(
    problem: EpsProblem,
    x: str = "left",
    t: float = 0.5,
    R: float = 2.0,
    delta: float = 0.05,
    eps_ladder: Sequence[float] = (1 / 8, 1 / 16),
    m: int = 16,
    h_ratio: int = 16,
    gbar: Optional[float] = None,
) -> BlowupReport:
    """Period-averaged ``u_eps`` at distance ``eps R`` from an endpoint versus the cell tail."""
    if x not in ("left", "right"):
        raise ValueError("x must be 'left' or 'right'")
    if not 0.0 < t < problem.T:
        raise ValueError("t must lie strictly inside (0, T)")
    data = problem.g_left if x == "left" else problem.g_right
    if gbar is None:
        gbar = mu_parabolic(problem.Ftilde, data).mu
    values, devs = [], []
    for eps in eps_ladder:
        dt = eps**2 / m
        # t_eps: grid time nearest t; average over the m steps of the fast period centred there
        k = int(round(t / dt))
        first = max(1, k - m // 2)
        last = first + m - 1
        dist = eps * R
        pos = dist if x == "left" else problem.length - dist
        _, probes, _ = solve_parabolic_epsilon(
            problem, eps, last * dt, m, h_ratio, record_from=first * dt, probe=pos
        )
        avg = float(probes[-m:].mean())
        values.append(avg)
        devs.append(abs(avg - gbar))
    return BlowupReport(
        x=[0.0 if x == "left" else float(problem.length)],
        eps=list(map(float, eps_ladder)),
        R=float(R),
        values=values,
        gbar=float(gbar),
        deviations=devs,
        delta=float(delta),
        verdict=_verdict(devs, delta, None),
        t=float(t),
        extras={"m": m, "h_ratio": h_ratio},
    )

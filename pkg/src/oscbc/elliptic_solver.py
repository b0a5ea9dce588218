"""
Monotone finite differences for ``F(D2v, Dv, y) = 0`` on strip grids.

Each linear piece is discretized with three-point second differences along
the grid axes and a first difference for the drift that is centred where the
cell Peclet condition ``h |b| <= 2 a`` holds and upwinded elsewhere, so every
neighbour weight is non-negative.  The HJB maximum is resolved by Howard
(policy) iteration: freeze the maximizing piece per node, solve the linear
system exactly, re-select, repeat until the policy is stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .operator import LinearPiece, OperatorSpec, eval_operator
from .strip_grid import GridField, StripGrid, build_strip

__all__ = [
    "DiscreteScheme",
    "SolveReport",
    "NonMonotoneSchemeError",
    "discretize",
    "assemble",
    "solve_dirichlet",
    "wr_solve",
    "wr_closed_form",
    "comparison_check",
    "strict_subsolution_margin",
]

CLOSURES = ("neumann-zero", "dirichlet-extrapolated", "dirichlet")
DRIFT_MODES = ("hybrid", "upwind", "centered")
# stencil slots: +tangent, -tangent, +normal, -normal
SLOTS = ("tp", "tm", "np", "nm")


class NonMonotoneSchemeError(ValueError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    residual_history: list = field(default_factory=list)
    policy_changes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "residual_history": list(self.residual_history),
            "policy_changes": list(self.policy_changes),
        }


@dataclass
class DiscreteScheme:
    """Per-piece stencil weights on a strip.

    ``weights[k, s]`` is the (non-negative) weight of neighbour slot ``s`` for
    piece ``k``; the discrete operator at an interior node reads
    ``diag * v - sum_s weights[s] * v_s``.  Only rows ``1 .. nn-2`` are used.
    """

    grid: StripGrid
    closure: str
    weights: np.ndarray
    diag: np.ndarray
    shift: np.ndarray
    source: np.ndarray
    centered: np.ndarray
    drift: str = "hybrid"
    top_value: Optional[float] = None
    _lu: dict = field(default_factory=dict, repr=False)

    @property
    def n_pieces(self) -> int:
        return self.weights.shape[0]

    def apply(self, v: np.ndarray, source: Optional[np.ndarray] = None) -> np.ndarray:
        """Piece values ``L_k v - source`` at interior nodes, shape (K, nt, nn-2)."""
        src = self.source if source is None else source
        c = v[:, 1:-1]
        nb = {
            "tp": np.roll(v, -1, axis=0)[:, 1:-1],
            "tm": np.roll(v, 1, axis=0)[:, 1:-1],
            "np": v[:, 2:],
            "nm": v[:, :-2],
        }
        out = self.diag[:, :, 1:-1] * c[None] - src[None, :, 1:-1]
        for s, slot in enumerate(SLOTS):
            out = out - self.weights[:, s, :, 1:-1] * nb[slot][None]
        return out


def _select(vals: np.ndarray, scale: float) -> np.ndarray:
    """Lowest piece index among the (near-)maximizers."""
    if vals.shape[0] == 1:
        return np.zeros(vals.shape[1:], dtype=np.int64)
    best = vals.max(axis=0)
    tie = 64 * np.finfo(float).eps * scale
    return np.argmax(vals >= best[None] - tie, axis=0)


def assemble(
    grid: StripGrid,
    coeffs,
    closure: str = "neumann-zero",
    shift=0.0,
    source=0.0,
    drift: str = "hybrid",
    top_value: Optional[float] = None,
) -> DiscreteScheme:
    """Build a scheme from per-node diagonal coefficients.

    ``coeffs`` is a list over pieces of ``(a, b)`` with arrays of shape
    ``(naxes, nt, nn)`` holding the diagonal diffusion and drift components
    along the grid axes (tangent then normal in 2-d, normal only in 1-d).
    """
    if closure not in CLOSURES:
        raise ValueError(f"closure must be one of {CLOSURES}")
    if drift not in DRIFT_MODES:
        raise ValueError(f"drift must be one of {DRIFT_MODES}")
    if closure == "dirichlet" and top_value is None:
        raise ValueError("closure 'dirichlet' needs top_value")
    h = grid.h
    shape = grid.shape
    K = len(coeffs)
    weights = np.zeros((K, 4, *shape))
    centered = np.zeros((K, grid.dim, *shape), dtype=bool)
    axis_slots = [(0, 1), (2, 3)] if grid.dim == 2 else [(2, 3)]
    for k, (a, b) in enumerate(coeffs):
        a = np.broadcast_to(np.asarray(a, dtype=float), (grid.dim, *shape))
        b = np.broadcast_to(np.asarray(b, dtype=float), (grid.dim, *shape))
        for d, (sp, sm) in enumerate(axis_slots):
            if drift == "hybrid":
                cen = h * np.abs(b[d]) <= 2.0 * a[d]
            else:
                cen = np.full(shape, drift == "centered")
            centered[k, d] = cen
            diff = a[d] / h**2
            wp = diff + np.where(cen, b[d] / (2 * h), np.maximum(b[d], 0.0) / h)
            wm = diff + np.where(cen, -b[d] / (2 * h), np.maximum(-b[d], 0.0) / h)
            for w, slot, name in ((wp, sp, "+"), (wm, sm, "-")):
                bad = w < -1e-12 * np.maximum(diff, 1.0)
                if np.any(bad[:, 1:-1]):
                    i, j = np.argwhere(bad[:, 1:-1])[0]
                    raise NonMonotoneSchemeError(
                        f"piece {k}: negative weight {w[i, j + 1]:.3e} on axis {d}{name} "
                        f"at node ({i}, {j + 1})"
                    )
                weights[k, slot] = np.maximum(w, 0.0)
    shift = np.broadcast_to(np.asarray(shift, dtype=float), shape).copy()
    source = np.broadcast_to(np.asarray(source, dtype=float), shape).copy()
    diag = weights.sum(axis=1) + shift[None]
    if np.any(diag[:, :, 1:-1] <= 0):
        raise NonMonotoneSchemeError("diagonal weight must be positive at interior nodes")
    return DiscreteScheme(grid, closure, weights, diag, shift, source, centered, drift, top_value)


def _frame_coefficients(piece: LinearPiece, grid: StripGrid, k: int = 0):
    pts = grid.points()
    Q = grid.frame()
    A = piece.A_at(pts)
    Af = np.einsum("ai,...ij,jb->...ab", Q, A, Q)
    off = Af - np.einsum("...aa->...a", Af)[..., None] * np.eye(grid.dim)
    if np.max(np.abs(off), initial=0.0) > 1e-12 * max(1.0, piece.Lam):
        raise ValueError(
            f"piece {k} has a diffusion matrix that is not diagonal in the grid axes; "
            "cross-derivative stencils are not supported"
        )
    a = np.moveaxis(np.einsum("...aa->...a", Af), -1, 0)
    b = np.moveaxis(piece.b_at(pts) @ Q, -1, 0)
    return a, b


def discretize(
    spec: OperatorSpec,
    grid: StripGrid,
    closure: str = "neumann-zero",
    drift: str = "hybrid",
    top_value: Optional[float] = None,
) -> DiscreteScheme:
    """Monotone scheme for every piece of ``spec`` on ``grid``."""
    coeffs = [_frame_coefficients(p, grid, k) for k, p in enumerate(spec.pieces)]
    return assemble(grid, coeffs, closure, drift=drift, top_value=top_value)


def _pattern(grid: StripGrid):
    nt, nn = grid.shape
    idx = np.arange(nt * nn).reshape(nt, nn)
    inner = idx[:, 1:-1]
    nbr = {
        "tp": np.roll(idx, -1, axis=0)[:, 1:-1],
        "tm": np.roll(idx, 1, axis=0)[:, 1:-1],
        "np": idx[:, 2:],
        "nm": idx[:, :-2],
    }
    return idx, inner, nbr


def _matrix(scheme: DiscreteScheme, policy: np.ndarray) -> sparse.csc_matrix:
    g = scheme.grid
    idx, inner, nbr = _pattern(g)
    sel = policy[None, None]
    diag = np.take_along_axis(scheme.diag[:, :, 1:-1], policy[None], axis=0)[0]
    w = np.take_along_axis(scheme.weights[:, :, :, 1:-1], np.broadcast_to(sel, (1, 4) + policy.shape), axis=0)[0]
    rows = [inner.ravel()]
    cols = [inner.ravel()]
    data = [diag.ravel()]
    for s, slot in enumerate(SLOTS):
        if g.dim == 1 and slot in ("tp", "tm"):
            continue
        rows.append(inner.ravel())
        cols.append(nbr[slot].ravel())
        data.append(-w[s].ravel())
    bottom = idx[:, 0]
    top = idx[:, -1]
    rows += [bottom, top]
    cols += [bottom, top]
    data += [np.ones(g.tangential_count), np.ones(g.tangential_count)]
    if scheme.closure == "neumann-zero":
        rows.append(top)
        cols.append(idx[:, -2])
        data.append(-np.ones(g.tangential_count))
    n = g.size
    A = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return A.tocsc()


def _lu(scheme: DiscreteScheme, policy: np.ndarray):
    key = policy.tobytes()
    hit = scheme._lu.get(key)
    if hit is None:
        if len(scheme._lu) > 8:
            scheme._lu.clear()
        mat = _matrix(scheme, policy)
        hit = (spla.splu(mat), mat)
        scheme._lu[key] = hit
    return hit


def howard(
    scheme: DiscreteScheme,
    trace: np.ndarray,
    source: Optional[np.ndarray] = None,
    tol: Optional[float] = None,
    max_iter: int = 200,
    initial: Optional[np.ndarray] = None,
    top_value: Optional[float] = None,
):
    """Policy iteration for ``max_k (L_k v) = source`` with Dirichlet bottom ``trace``."""
    g = scheme.grid
    tol = (1e-8 if g.dim == 1 else 1e-6) if tol is None else tol
    if tol <= 0:
        raise ValueError("tol must be positive")
    trace = np.broadcast_to(np.asarray(trace, dtype=float), (g.tangential_count,))
    if not np.all(np.isfinite(trace)):
        raise ValueError("trace must be finite")
    src = scheme.source if source is None else np.asarray(source, dtype=float)
    rhs = np.zeros(g.shape)
    rhs[:, 1:-1] = src[:, 1:-1]
    rhs[:, 0] = trace
    if scheme.closure == "neumann-zero":
        rhs[:, -1] = 0.0
    else:
        tv = top_value if top_value is not None else scheme.top_value
        if tv is None:
            tv = float(trace.mean())
        rhs[:, -1] = tv
    v = np.repeat(trace[:, None], g.normal_count, axis=1) if initial is None else initial.copy()
    scale = float(scheme.diag.max()) * max(1.0, float(np.abs(rhs).max()))
    policy = _select(scheme.apply(v, src), scale)
    history, changes = [], []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lu, mat = _lu(scheme, policy)
        x = lu.solve(rhs.ravel())
        x += lu.solve(rhs.ravel() - mat @ x)  # one refinement step
        v = x.reshape(g.shape)
        vals = scheme.apply(v, src)
        res = float(np.abs(vals.max(axis=0)).max()) if vals.size else 0.0
        new = _select(vals, scale)
        nchg = int(np.count_nonzero(new != policy))
        history.append(res)
        changes.append(nchg)
        if nchg == 0 or res <= tol * 1e-3:
            converged = res <= tol
            break
        policy = new
    report = SolveReport(it, history[-1], converged, history, changes)
    return GridField(v, g, report)


def solve_dirichlet(
    scheme: DiscreteScheme, trace, tol: Optional[float] = None, max_iter: int = 200
) -> GridField:
    """Solve ``F = 0`` with bottom data ``trace``; the field carries a SolveReport.

    Non-convergence is reported through ``field.report.converged`` rather than
    raised, since it is itself a diagnostic signal.
    """
    if np.any(scheme.source != 0.0):
        raise ValueError("solve_dirichlet only handles the homogeneous equation")
    return howard(scheme, trace, tol=tol, max_iter=max_iter)


def wr_closed_form(x, b: float, R: float, a: float = 1.0) -> np.ndarray:
    """Exact solution of ``-a W'' - b W' = 1`` on (0, R) with zero end values."""
    x = np.asarray(x, dtype=float)
    c = b / a
    K = R / (-math.expm1(-c * R))
    return (K * (-np.expm1(-c * x)) - x) / b


def wr_solve(b: float, R: float, h: float, a: float = 1.0) -> GridField:
    """Discrete mean capped exit time from (0, R): ``-a W'' - b W' = 1``, ``W(0) = W(R) = 0``."""
    if b == 0:
        raise ValueError("b must be nonzero")
    spec = OperatorSpec((LinearPiece.constant([[a]], [b]),))
    grid = build_strip(spec, R, h)
    coeffs = [_frame_coefficients(spec.pieces[0], grid)]
    scheme = assemble(grid, coeffs, "dirichlet", source=1.0, top_value=0.0)
    return howard(scheme, np.zeros(1), tol=1e-8)


def comparison_check(scheme: DiscreteScheme, trace1, trace2, tol: Optional[float] = None) -> dict:
    """Solve for two traces and test ``max (v1 - v2)^+ <= max (psi1 - psi2)^+``."""
    v1 = solve_dirichlet(scheme, trace1, tol=tol)
    v2 = solve_dirichlet(scheme, trace2, tol=tol)
    if not (v1.report.converged and v2.report.converged):
        raise RuntimeError("solver did not converge in comparison_check")
    t = (1e-8 if scheme.grid.dim == 1 else 1e-6) if tol is None else tol
    interior = float(np.max(np.maximum(v1.values - v2.values, 0.0)))
    boundary = float(np.max(np.maximum(np.asarray(trace1) - np.asarray(trace2), 0.0)))
    slack = 1e-10 + 2 * t
    return {
        "interior_gap": interior,
        "boundary_gap": boundary,
        "slack": slack,
        "excess": interior - boundary,
        "contraction": interior <= boundary + slack,
    }


def strict_subsolution_margin(spec: OperatorSpec, grid: StripGrid, L: float, alpha: float) -> float:
    """Minimum over interior nodes of ``-F`` at the discrete samples of ``alpha exp(L y.e)``."""
    if L <= 0 or alpha <= 0:
        raise ValueError("L and alpha must be positive")
    h = grid.h
    w = alpha * np.exp(L * grid.heights)
    w = np.broadcast_to(w, grid.shape)
    d2 = np.zeros((grid.dim, grid.tangential_count, grid.normal_count - 2))
    d1 = np.zeros_like(d2)
    d2[-1] = (w[:, 2:] - 2 * w[:, 1:-1] + w[:, :-2]) / h**2
    d1[-1] = (w[:, 2:] - w[:, :-2]) / (2 * h)
    if grid.dim == 2:
        d2[0] = (np.roll(w, -1, 0) - 2 * w + np.roll(w, 1, 0))[:, 1:-1] / h**2
        d1[0] = (np.roll(w, -1, 0) - np.roll(w, 1, 0))[:, 1:-1] / (2 * h)
    Q = grid.frame()
    M = np.einsum("ia,a...,ja->...ij", Q, d2, Q)
    p = np.einsum("ia,a...->...i", Q, d1)
    y = grid.points()[:, 1:-1, :]
    return float(np.min(-eval_operator(spec, M, p, y)))

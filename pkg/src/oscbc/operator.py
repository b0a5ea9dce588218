"""
Admissible nonlinearities F(M, p, y) built as finite maxima of linear operators.

Every operator is of Hamilton-Jacobi-Bellman type,

    F(M, p, y) = max_k ( -tr(A_k(y) M) - b_k(y) . p ),

which is convex in (M, p), vanishes at (0, 0) and is uniformly elliptic with
constant min_k nu_k.  Coefficient fields are finite trigonometric sums so that
lattice periodicity is exact and can be checked symbolically.

The module also provides the two linear model families used for
homogenization, with their rescaled (k = 2) cell limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TrigField",
    "LinearPiece",
    "OperatorSpec",
    "EpsProblem",
    "eval_operator",
    "slow_drift_family",
    "fast_drift_family",
    "laplacian",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrigField:
    """Scalar field ``c + sum_j a_j cos(2 pi k_j . y + phi_j)``.

    ``terms`` holds ``(amplitude, frequency, phase)`` triples, the frequency
    being a tuple of length N (spatial fields) or a scalar (temporal data).
    """

    constant: float = 0.0
    terms: tuple = ()

    def __post_init__(self):
        clean = []
        for amp, freq, phase in self.terms:
            freq = tuple(float(f) for f in np.atleast_1d(freq))
            clean.append((float(amp), freq, float(phase)))
        object.__setattr__(self, "terms", tuple(clean))
        object.__setattr__(self, "constant", float(self.constant))

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape[:-1], self.constant)
        for amp, freq, phase in self.terms:
            if amp == 0.0:
                continue
            out = out + amp * np.cos(TWO_PI * (y @ np.asarray(freq)) + phase)
        return out

    @property
    def is_constant(self) -> bool:
        return all(amp == 0.0 or not any(freq) for amp, freq, _ in self.terms)

    def mean_value(self) -> float:
        """Average over any period (zero-frequency terms kept)."""
        return self.constant + sum(
            amp * math.cos(phase) for amp, freq, phase in self.terms if not any(freq)
        )

    def sup_bound(self) -> float:
        return abs(self.constant) + sum(abs(a) for a, _, _ in self.terms)

    def shifted(self, tau) -> "TrigField":
        """Return y -> self(y + tau)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        terms = tuple(
            (a, k, ph + TWO_PI * float(np.dot(k, tau))) for a, k, ph in self.terms
        )
        return TrigField(self.constant, terms)

    def scaled(self, factor: float, offset: float = 0.0) -> "TrigField":
        terms = tuple((factor * a, k, ph) for a, k, ph in self.terms)
        return TrigField(factor * self.constant + offset, terms)

    def frequencies(self):
        return [np.asarray(k) for a, k, _ in self.terms if a != 0.0]

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "terms": [
                {"amplitude": a, "freq": list(k), "phase": ph} for a, k, ph in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, data) -> "TrigField":
        if isinstance(data, (int, float)):
            return cls(float(data))
        terms = tuple(
            (t["amplitude"], tuple(t["freq"]), t.get("phase", 0.0))
            for t in data.get("terms", [])
        )
        return cls(data.get("constant", 0.0), terms)


def _as_field(value) -> TrigField:
    if isinstance(value, TrigField):
        return value
    return TrigField(float(value))


def _cell_samples(lattice: np.ndarray, per_axis: int = 9) -> np.ndarray:
    """Sample points covering one lattice cell, shape (m, N)."""
    n = lattice.shape[0]
    ticks = np.arange(per_axis) / per_axis
    grids = np.meshgrid(*([ticks] * n), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=-1)
    return coords @ lattice


@dataclass(frozen=True)
class LinearPiece:
    """One linear operator ``-tr(A(y) M) - b(y) . p``.

    Parameters
    ----------
    A : N x N nested sequence of TrigField (or floats), symmetric.
    b : length-N sequence of TrigField (or floats).
    nu, Lam : ellipticity bounds ``nu Id <= A(y) <= Lam Id``.  When omitted they
        are set from the sampled eigenvalue range.
    """

    A: tuple
    b: tuple
    nu: Optional[float] = None
    Lam: Optional[float] = None

    def __post_init__(self):
        A = tuple(tuple(_as_field(v) for v in row) for row in self.A)
        n = len(A)
        if any(len(row) != n for row in A):
            raise ValueError("A must be a square array of coefficient fields")
        b = tuple(_as_field(v) for v in self.b) if self.b is not None else ()
        if not b:
            b = tuple(TrigField(0.0) for _ in range(n))
        if len(b) != n:
            raise ValueError(f"b has length {len(b)}, expected {n}")
        for i in range(n):
            for j in range(i + 1, n):
                if A[i][j] != A[j][i]:
                    raise ValueError(f"A is not symmetric: entry ({i},{j}) differs from ({j},{i})")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

        pts = _cell_samples(np.eye(n), 17 if n == 1 else 9)
        eig = np.linalg.eigvalsh(self.A_at(pts))
        lo, hi = float(eig.min()), float(eig.max())
        nu = lo if self.nu is None else float(self.nu)
        Lam = hi if self.Lam is None else float(self.Lam)
        if nu <= 0:
            raise ValueError(f"ellipticity lower bound must be positive, got nu={nu}")
        if nu > Lam:
            raise ValueError(f"nu={nu} exceeds Lam={Lam}")
        if lo < nu - 1e-12 or hi > Lam + 1e-12:
            raise ValueError(
                f"sampled eigenvalues [{lo}, {hi}] violate the bounds [{nu}, {Lam}]"
            )
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "Lam", Lam)

    @classmethod
    def constant(cls, A, b=None, nu=None, Lam=None) -> "LinearPiece":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        b = np.zeros(n) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        return cls(
            tuple(tuple(TrigField(v) for v in row) for row in A),
            tuple(TrigField(v) for v in b),
            nu,
            Lam,
        )

    @property
    def dim(self) -> int:
        return len(self.A)

    def A_at(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        n = self.dim
        out = np.empty(y.shape[:-1] + (n, n))
        for i in range(n):
            for j in range(n):
                out[..., i, j] = self.A[i][j](y)
        return out

    def b_at(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.stack([bi(y) for bi in self.b], axis=-1)

    @property
    def drift_free(self) -> bool:
        return all(bi.sup_bound() == 0.0 for bi in self.b)

    @property
    def y_independent(self) -> bool:
        return all(f.is_constant for row in self.A for f in row) and all(
            f.is_constant for f in self.b
        )

    def drift_bound(self) -> float:
        return math.sqrt(sum(bi.sup_bound() ** 2 for bi in self.b))

    def fields(self):
        for row in self.A:
            yield from row
        yield from self.b

    def to_dict(self) -> dict:
        return {
            "A": [[f.to_dict() for f in row] for row in self.A],
            "b": [f.to_dict() for f in self.b],
            "nu": self.nu,
            "Lam": self.Lam,
        }

    @classmethod
    def from_dict(cls, data) -> "LinearPiece":
        A = tuple(tuple(TrigField.from_dict(v) for v in row) for row in data["A"])
        b = tuple(TrigField.from_dict(v) for v in data.get("b", []))
        return cls(A, b, data.get("nu"), data.get("Lam"))


@dataclass(frozen=True)
class OperatorSpec:
    """HJB operator ``max_k L_k`` together with its geometric frame.

    ``lattice`` rows are the basis vectors f_1..f_N; the first N-1 span the
    boundary hyperplane, which must be orthogonal to ``normal``.
    """

    pieces: tuple
    lattice: np.ndarray = None
    normal: np.ndarray = None
    form: str = field(default="", compare=False)
    kappa: float = field(default=0.0, compare=False)
    lipschitz_p: float = field(default=0.0, compare=False)

    def __post_init__(self):
        pieces = tuple(self.pieces)
        if not pieces:
            raise ValueError("an operator needs at least one linear piece")
        n = pieces[0].dim
        if any(p.dim != n for p in pieces):
            raise ValueError("all pieces must share the same dimension")
        normal = np.eye(n)[-1] if self.normal is None else np.asarray(self.normal, float)
        normal = normal / np.linalg.norm(normal)
        if self.lattice is None:
            lattice = _default_lattice(normal)
        else:
            lattice = np.atleast_2d(np.asarray(self.lattice, dtype=float))
        if lattice.shape != (n, n):
            raise ValueError(f"lattice must be {n}x{n}")
        if abs(np.linalg.det(lattice)) < 1e-12:
            raise ValueError("lattice vectors are linearly dependent")
        if n > 1 and np.max(np.abs(lattice[:-1] @ normal)) > 1e-12:
            raise ValueError("tangential lattice vectors must be orthogonal to the normal")
        pts = _cell_samples(lattice, 17 if n == 1 else 9)
        for k, piece in enumerate(pieces):
            eig = np.linalg.eigvalsh(piece.A_at(pts))
            if eig.min() < piece.nu - 1e-12 or eig.max() > piece.Lam + 1e-12:
                raise ValueError(f"piece {k}: ellipticity bounds fail on the lattice cell")
            for f in piece.fields():
                for freq in f.frequencies():
                    z = lattice @ freq
                    if np.max(np.abs(z - np.round(z))) > 1e-12:
                        raise ValueError(
                            f"piece {k}: frequency {tuple(freq)} is not lattice-periodic"
                        )
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "lattice", lattice)
        object.__setattr__(self, "form", "single-linear" if len(pieces) == 1 else "hjb-max")
        object.__setattr__(self, "kappa", min(p.nu for p in pieces))
        object.__setattr__(self, "lipschitz_p", max(p.drift_bound() for p in pieces))

    @property
    def dim(self) -> int:
        return self.pieces[0].dim

    @property
    def tangent(self) -> Optional[np.ndarray]:
        if self.dim == 1:
            return None
        return self.lattice[0] / np.linalg.norm(self.lattice[0])

    @property
    def tangential_period(self) -> float:
        return 1.0 if self.dim == 1 else float(np.linalg.norm(self.lattice[0]))

    @property
    def drift_free(self) -> bool:
        return all(p.drift_free for p in self.pieces)

    @property
    def y_independent(self) -> bool:
        return all(p.y_independent for p in self.pieces)

    def cell_samples(self, per_axis: int = 16) -> np.ndarray:
        return _cell_samples(self.lattice, per_axis)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "normal": self.normal.tolist(),
            "lattice": self.lattice.tolist(),
            "pieces": [p.to_dict() for p in self.pieces],
        }

    @classmethod
    def from_dict(cls, data) -> "OperatorSpec":
        pieces = tuple(LinearPiece.from_dict(p) for p in data["pieces"])
        return cls(pieces, data.get("lattice"), data.get("normal"))


def _default_lattice(normal: np.ndarray) -> np.ndarray:
    n = normal.size
    if n == 1:
        return np.eye(1)
    if n == 2:
        return np.array([[normal[1], -normal[0]], [normal[0], normal[1]]])
    raise ValueError("only N <= 2 has a default lattice")


def laplacian(dim: int = 2, scale: float = 1.0, **kw) -> OperatorSpec:
    """``-scale * tr(M)`` as a single-piece spec."""
    return OperatorSpec((LinearPiece.constant(scale * np.eye(dim)),), **kw)


def eval_operator(spec: OperatorSpec, M, p, y) -> np.ndarray:
    """Evaluate ``F(M, p, y) = max_k (-tr(A_k(y) M) - b_k(y) . p)``.

    Leading axes of ``M`` (..., N, N), ``p`` (..., N) and ``y`` (..., N)
    broadcast against each other.
    """
    n = spec.dim
    M = np.asarray(M, dtype=float)
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if M.shape[-2:] != (n, n) or p.shape[-1:] != (n,) or y.shape[-1:] != (n,):
        raise ValueError(
            f"dimension mismatch: expected M (...,{n},{n}), p (...,{n}), y (...,{n}); "
            f"got {M.shape}, {p.shape}, {y.shape}"
        )
    vals = [
        -np.einsum("...ij,...ji->...", piece.A_at(y), M)
        - np.einsum("...i,...i->...", piece.b_at(y), p)
        for piece in spec.pieces
    ]
    out = vals[0]
    for v in vals[1:]:
        out = np.maximum(out, v)
    return out[()] if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# epsilon-problems
# --------------------------------------------------------------------------


def _one(x):
    return np.ones(np.shape(x)[:-1])


def _zero(x):
    return np.zeros(np.shape(x)[:-1])


@dataclass
class EpsProblem:
    """Boundary-layer homogenization problem indexed by epsilon.

    Elliptic families solve, on the strip ``0 < x.e < H``,

        -tr(A(x, x/eps) D2u) - c_eps b(x, x/eps) . Du + u = f(x, x/eps)

    with ``c_eps = 1`` for family "slow-drift" and ``1/eps`` for "fast-drift", and
    ``u = g(x/eps, x)`` on the boundary.  The slow variable enters through
    scalar factors: ``A = A_slow(x) A0(y)``, ``b = b_slow(x) b0(y)``,
    ``g = g_amp(x) psi(y) + g_offset(x)``.  ``f`` is any vectorized
    callable ``f(x, y)``.

    The "parabolic" family holds the data of an interval problem
    ``u_t + Ftilde(D2u) = 0`` with ``u = g(x, t/eps^2)`` at both endpoints.
    """

    family: str
    piece: Optional[LinearPiece] = None
    psi: object = None
    lattice: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    H: float = 1.0
    width: Optional[float] = None
    A_slow: Callable = _one
    b_slow: Callable = _one
    g_amp: Callable = _one
    g_offset: Callable = _zero
    f: Optional[Callable] = None
    zeroth_order: float = 1.0
    # parabolic data
    Ftilde: Optional[OperatorSpec] = None
    g_left: object = None
    g_right: object = None
    u0: Optional[Callable] = None
    length: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.family not in ("slow-drift", "fast-drift", "parabolic"):
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def drift_scale_power(self) -> int:
        return 1 if self.family == "fast-drift" else 0

    def frozen_spec(self, x) -> OperatorSpec:
        """Rescaled cell-limit operator with the slow variable frozen at ``x``."""
        if self.family == "parabolic":
            return self.Ftilde
        x = np.atleast_1d(np.asarray(x, dtype=float))
        alpha = float(self.A_slow(x[None, :])[0])
        A = tuple(tuple(f.scaled(alpha) for f in row) for row in self.piece.A)
        if self.family == "slow-drift":
            b = tuple(TrigField(0.0) for _ in A)
        else:
            beta = float(self.b_slow(x[None, :])[0])
            b = tuple(f.scaled(beta) for f in self.piece.b)
        nu = alpha * self.piece.nu
        Lam = alpha * self.piece.Lam
        return OperatorSpec((LinearPiece(A, b, nu, Lam),), self.lattice, self.normal)

    def frozen_trace(self, x):
        """Boundary datum ``g(., x)`` as BoundaryData."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        amp = float(self.g_amp(x[None, :])[0])
        off = float(self.g_offset(x[None, :])[0])
        return self.psi.scaled(amp, off)


def _family(tag, A, b, f, psi, lattice, normal, nu, Lam, **kw) -> EpsProblem:
    A = np.asarray(A, dtype=object) if not isinstance(A, LinearPiece) else A
    if isinstance(A, LinearPiece):
        piece = A
    else:
        n = A.shape[0]
        b = [0.0] * n if b is None else b
        piece = LinearPiece(
            tuple(tuple(row) for row in A.tolist()), tuple(b), nu, Lam
        )
    if psi is None:
        from .strip_grid import BoundaryData

        psi = BoundaryData("lattice-periodic", 0.0)
    prob = EpsProblem(tag, piece=piece, psi=psi, lattice=lattice, normal=normal, f=f, **kw)
    prob.frozen_spec(np.zeros(piece.dim))  # validates lattice compatibility
    return prob


def slow_drift_family(A, b=None, f=None, psi=None, lattice=None, normal=None, nu=None, Lam=None, **kw):
    """Linear problem with O(1) drift; its cell limit is ``-tr(A(x, y) M)``."""
    return _family("slow-drift", A, b, f, psi, lattice, normal, nu, Lam, **kw)


def fast_drift_family(A, b=None, f=None, psi=None, lattice=None, normal=None, nu=None, Lam=None, **kw):
    """Linear problem with 1/eps drift; its cell limit keeps ``-b(x, y) . p``."""
    return _family("fast-drift", A, b, f, psi, lattice, normal, nu, Lam, **kw)


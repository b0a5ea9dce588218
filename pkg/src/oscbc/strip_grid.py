"""
Uniform grids on truncated half-strips and boundary traces sampled on them.

A strip is the tangential torus spanned by the first N-1 lattice vectors
times the normal segment [0, R].  Nodes are indexed ``(i, j)`` with ``i``
running around the torus (no duplicated seam node) and ``j`` along the
normal; one-dimensional strips carry a single tangential node.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .operator import OperatorSpec, TrigField

__all__ = [
    "BoundaryData",
    "StripGrid",
    "GridField",
    "build_strip",
    "sample_trace",
    "IncommensurateGridError",
]

_MAGIC = b"OB"
_KINDS = ("lattice-periodic", "almost-periodic", "time-periodic")


class IncommensurateGridError(ValueError):
    """Raised when a spacing does not divide the strip height or the period."""

    def __init__(self, message, suggested_h):
        super().__init__(f"{message}; nearest admissible h = {suggested_h:g}")
        self.suggested_h = suggested_h


def _divides(length: float, h: float) -> Optional[int]:
    n = length / h
    k = round(n)
    if k >= 1 and abs(k * h - length) <= 1e-12 * max(1.0, length):
        return k
    return None


def _nearest_admissible(h: float, lengths) -> float:
    """Largest spacing not above ``h`` dividing every length (lengths rational-ish)."""
    base = min(lengths)
    for k in range(max(1, math.ceil(base / h)), 10 ** 6):
        cand = base / k
        if all(_divides(L, cand) for L in lengths):
            return cand
    return h


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet trace as a finite trigonometric sum.

    Spatial kinds evaluate ``c + sum a cos(2 pi k . y + phi)`` at points
    ``y`` of the boundary hyperplane; the time-periodic kind evaluates
    ``c + sum a cos(2 pi m s + phi)`` with integer ``m``.
    """

    kind: str
    constant: float = 0.0
    terms: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown boundary data kind {self.kind!r}")
        trig = TrigField(self.constant, self.terms)
        object.__setattr__(self, "terms", trig.terms)
        object.__setattr__(self, "constant", trig.constant)
        if self.kind == "time-periodic":
            for _, k, _ in trig.terms:
                if len(k) != 1 or abs(k[0] - round(k[0])) > 1e-12:
                    raise ValueError("time-periodic data needs integer temporal frequencies")

    @property
    def field(self) -> TrigField:
        return TrigField(self.constant, self.terms)

    @property
    def spatial(self) -> bool:
        return self.kind != "time-periodic"

    def __call__(self, y) -> np.ndarray:
        return self.field(y)

    def at_time(self, s) -> np.ndarray:
        if self.spatial:
            raise ValueError("at_time needs time-periodic data")
        s = np.asarray(s, dtype=float)
        return self.field(s[..., None])

    def sup_bound(self) -> float:
        return self.field.sup_bound()

    def mean_value(self) -> float:
        return self.field.mean_value()

    def shifted(self, tau) -> "BoundaryData":
        f = self.field.shifted(tau)
        return BoundaryData(self.kind, f.constant, f.terms)

    def scaled(self, factor: float, offset: float = 0.0) -> "BoundaryData":
        f = self.field.scaled(factor, offset)
        return BoundaryData(self.kind, f.constant, f.terms)

    def __add__(self, c: float) -> "BoundaryData":
        return self.scaled(1.0, float(c))

    def check_lattice(self, spec: OperatorSpec) -> None:
        """Reject lattice-periodic data whose frequencies leave the dual lattice."""
        if self.kind != "lattice-periodic":
            return
        tang = spec.lattice[:-1]
        for _, k, _ in self.terms:
            z = tang @ np.asarray(k)
            if z.size and np.max(np.abs(z - np.round(z))) > 1e-12:
                raise ValueError(
                    f"frequency {k} is not periodic on the tangential lattice; "
                    "declare the data almost-periodic"
                )

    def to_dict(self) -> dict:
        d = self.field.to_dict()
        d["kind"] = self.kind
        return d

    @classmethod
    def from_dict(cls, data) -> "BoundaryData":
        f = TrigField.from_dict(data)
        return cls(data.get("kind", "lattice-periodic"), f.constant, f.terms)


@dataclass(frozen=True)
class StripGrid:
    dim: int
    tangential_count: int
    normal_count: int
    h: float
    R: float
    normal: np.ndarray
    tangent: Optional[np.ndarray] = None
    period: float = 1.0
    lattice: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def shape(self):
        return (self.tangential_count, self.normal_count)

    @property
    def size(self) -> int:
        return self.tangential_count * self.normal_count

    @property
    def heights(self) -> np.ndarray:
        return self.h * np.arange(self.normal_count)

    @property
    def arclengths(self) -> np.ndarray:
        return self.h * np.arange(self.tangential_count)

    def frame(self) -> np.ndarray:
        """Columns are the grid axes in R^N: (tangent, normal) or (normal,)."""
        if self.dim == 1:
            return self.normal.reshape(1, 1)
        return np.column_stack([self.tangent, self.normal])

    def points(self) -> np.ndarray:
        """Node coordinates in R^N, shape (nt, nn, N)."""
        n = self.heights
        pts = n[None, :, None] * self.normal[None, None, :]
        if self.dim > 1:
            s = self.arclengths
            pts = pts + s[:, None, None] * self.tangent[None, None, :]
        return np.broadcast_to(pts, self.shape + (self.dim,)).copy()

    def boundary_points(self) -> np.ndarray:
        return self.points()[:, 0, :]


@dataclass
class GridField:
    """Node values on a strip, shape ``grid.shape``."""

    values: np.ndarray
    grid: StripGrid
    report: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} on grid {self.grid.shape}")

    @property
    def top(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def bottom(self) -> np.ndarray:
        return self.values[:, 0]

    def translated(self, shift: int) -> "GridField":
        """Field y -> v(y + shift*h*tangent), exact on the torus."""
        return GridField(np.roll(self.values, -shift, axis=0), self.grid)

    def interpolate(self, s: float, n: float) -> float:
        """Multilinear interpolation at arclength ``s`` and height ``n``."""
        g = self.grid
        if not 0.0 <= n <= g.R + 1e-12:
            raise ValueError(f"height {n} outside [0, {g.R}]")
        fj = min(n / g.h, g.normal_count - 1.0)
        j0 = min(int(math.floor(fj)), g.normal_count - 2) if g.normal_count > 1 else 0
        tj = fj - j0
        if g.dim == 1:
            col = self.values[0]
            return float((1 - tj) * col[j0] + tj * col[min(j0 + 1, g.normal_count - 1)])
        fi = (s / g.h) % g.tangential_count
        i0 = int(math.floor(fi)) % g.tangential_count
        i1 = (i0 + 1) % g.tangential_count
        ti = fi - math.floor(fi)
        v = self.values
        lo = (1 - ti) * v[i0, j0] + ti * v[i1, j0]
        hi = (1 - ti) * v[i0, j0 + 1] + ti * v[i1, j0 + 1]
        return float((1 - tj) * lo + tj * hi)

    def to_csv(self, path) -> None:
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"y{k + 1}" for k in range(self.grid.dim)] + ["value"])
            for i in range(self.grid.tangential_count):
                for j in range(self.grid.normal_count):
                    w.writerow([repr(float(c)) for c in pts[i, j]] + [repr(float(self.values[i, j]))])

    def to_bytes(self) -> bytes:
        """Binary block: 16-byte header then little-endian float64 values.

        Header layout: magic ``b"OB"``, dim (u8), reserved (u8), tangential
        count (u16), normal count (u16), h (f64).
        """
        g = self.grid
        header = _MAGIC + struct.pack("<BBHHd", g.dim, 0, g.tangential_count, g.normal_count, g.h)
        return header + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @staticmethod
    def read_block(blob: bytes):
        """Decode a binary block into ``(dim, nt, nn, h, values)``."""
        if blob[:2] != _MAGIC:
            raise ValueError("not a field block")
        dim, _, nt, nn, h = struct.unpack("<BBHHd", blob[2:16])
        vals = np.frombuffer(blob[16:], dtype="<f8").reshape(nt, nn)
        return dim, nt, nn, h, vals


def build_strip(spec: OperatorSpec, R: float, h: float, period: Optional[float] = None) -> StripGrid:
    """Uniform strip grid of height ``R`` and spacing ``h``.

    ``period`` overrides the tangential torus length (default: the length of
    the first lattice vector); almost-periodic windows use this.
    """
    if R <= 0 or h <= 0:
        raise ValueError("R and h must be positive")
    lengths = [R]
    if spec.dim > 1:
        period = spec.tangential_period if period is None else float(period)
        lengths.append(period)
    nn = _divides(R, h)
    nt = _divides(period, h) if spec.dim > 1 else 1
    if nn is None or nt is None:
        raise IncommensurateGridError(
            f"h={h:g} does not divide {' and '.join(f'{L:g}' for L in lengths)}",
            _nearest_admissible(h, lengths),
        )
    return StripGrid(
        dim=spec.dim,
        tangential_count=nt,
        normal_count=nn + 1,
        h=float(h),
        R=float(R),
        normal=spec.normal.copy(),
        tangent=None if spec.dim == 1 else spec.tangent.copy(),
        period=1.0 if spec.dim == 1 else period,
        lattice=spec.lattice,
    )


def sample_trace(data: BoundaryData, grid: StripGrid) -> np.ndarray:
    """Trace values at the ``j = 0`` nodes, shape ``(nt,)``."""
    if not data.spatial:
        raise ValueError("sample_trace needs spatial boundary data")
    return np.asarray(data(grid.boundary_points()), dtype=float)

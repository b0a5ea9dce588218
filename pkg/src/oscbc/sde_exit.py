"""
Monte Carlo exit times of ``dX = b(X) dt + sqrt(2) sigma(X) dB`` from the strip ``0 < X.e < R_cap``.

With the explicit sqrt(2), ``a = sigma sigma^T`` and the generator is
``tr(a D2) + b . D``, so the mean exit time solves ``-tr(a D2W) - b . DW = 1``.

Time stepping is Euler-Maruyama with a distance-adapted step: ``dt`` near the
boundary, growing up to ``dt_max`` where a step cannot plausibly reach the
boundary (distance above six noise standard deviations plus the drift
excursion).  Exit is detected after each step, without bridge correction.
Each chunk of paths draws from its own Philox stream spawned from the seed,
so results do not depend on how chunks are scheduled.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .operator import LinearPiece, TrigField

__all__ = ["DiffusionSpec", "ExitStats", "simulate_exit", "exit_growth_probe", "GrowthReport"]

_SAFETY = 6.0


def _as_field(v) -> TrigField:
    return v if isinstance(v, TrigField) else TrigField(float(v))


@dataclass(frozen=True)
class DiffusionSpec:
    b: tuple
    sigma: tuple
    dt: float = 5e-5
    n_paths: int = 100_000
    seed: int = 0
    R_cap: float = 10.0
    normal: Optional[tuple] = None
    dt_max: float = 0.05
    chunk: int = 8192

    def __post_init__(self):
        b = tuple(_as_field(f) for f in np.atleast_1d(np.asarray(self.b, dtype=object)))
        sig = np.asarray(self.sigma, dtype=object)
        if sig.ndim == 0:
            sig = sig.reshape(1, 1)
        n = len(b)
        if sig.shape != (n, n):
            raise ValueError(f"sigma must be {n}x{n}")
        sig = tuple(tuple(_as_field(f) for f in row) for row in sig.tolist())
        e = np.zeros(n) if self.normal is None else np.asarray(self.normal, dtype=float)
        if self.normal is None:
            e[-1] = 1.0
        if abs(np.linalg.norm(e) - 1) > 1e-12:
            raise ValueError("normal must be a unit vector")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "normal", tuple(float(c) for c in e))
        if not (self.dt > 0 and self.dt_max >= self.dt):
            raise ValueError("need 0 < dt <= dt_max")
        if self.n_paths < 2 or self.R_cap <= 0 or self.chunk < 1:
            raise ValueError("n_paths >= 2, R_cap > 0 and chunk >= 1 required")
        if self.dt * self.drift_bound() > 0.1 * self.R_cap / 10:
            raise ValueError("dt * sup|b| exceeds a tenth of the length scale R_cap/10")

    @classmethod
    def from_piece(cls, piece: LinearPiece, **kw) -> "DiffusionSpec":
        """Diffusion for a piece with constant ``A`` (sigma its Cholesky factor)."""
        if any(not f.is_constant for row in piece.A for f in row):
            raise ValueError("from_piece needs a constant diffusion matrix; pass sigma explicitly")
        A = np.array([[f.constant for f in row] for row in piece.A])
        return cls(b=piece.b, sigma=np.linalg.cholesky(A).tolist(), **kw)

    @property
    def dim(self) -> int:
        return len(self.b)

    def b_at(self, y) -> np.ndarray:
        return np.stack([f(y) for f in self.b], axis=-1)

    def sigma_at(self, y) -> np.ndarray:
        return np.stack([np.stack([f(y) for f in row], axis=-1) for row in self.sigma], axis=-2)

    def a_at(self, y) -> np.ndarray:
        s = self.sigma_at(y)
        return s @ np.swapaxes(s, -1, -2)

    def drift_bound(self) -> float:
        e = np.asarray(self.normal)
        return float(sum(abs(c) * f.sup_bound() for c, f in zip(e, self.b)))

    def normal_diffusion_bound(self) -> float:
        """Upper bound of ``|sigma^T e|^2`` over y."""
        e = np.asarray(self.normal)
        cols = [sum(abs(e[j]) * self.sigma[j][k].sup_bound() for j in range(self.dim)) for k in range(self.dim)]
        return float(sum(c * c for c in cols))

    def check_against(self, piece: LinearPiece, y) -> float:
        """Max deviation of ``sigma sigma^T`` from the piece's ``A`` at points ``y``."""
        return float(np.max(np.abs(self.a_at(y) - piece.A_at(y))))

    def is_constant(self) -> bool:
        return all(f.is_constant for f in self.b) and all(f.is_constant for row in self.sigma for f in row)

    def to_dict(self) -> dict:
        return {
            "b": [f.to_dict() for f in self.b],
            "sigma": [[f.to_dict() for f in row] for row in self.sigma],
            "dt": self.dt,
            "dt_max": self.dt_max,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "R_cap": self.R_cap,
            "normal": list(self.normal),
            "chunk": self.chunk,
        }


@dataclass
class ExitStats:
    mean: float
    std_error: float
    bottom_fraction: float
    bottom_mean: Optional[float]
    bottom_std_error: Optional[float]
    n_paths: int
    n_exited: int
    aborted: bool
    x0: list
    R_cap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def as_tuple(self):
        return self.mean, self.std_error, self.bottom_fraction


def _step_bound(d, c, B):
    """Largest ``dt`` with ``d >= c sqrt(dt) + B dt``."""
    if B > 0:
        s = (-c + np.sqrt(c * c + 4 * B * d)) / (2 * B)
    else:
        s = d / c
    return s * s


def _run_chunk(spec: DiffusionSpec, x0, m: int, seq: np.random.SeedSequence, t_max: float):
    rng = np.random.Generator(np.random.Philox(seq))
    e = np.asarray(spec.normal)
    N = spec.dim
    const = spec.is_constant()
    if const:
        b0 = spec.b_at(np.zeros(N))
        s0 = spec.sigma_at(np.zeros(N))
    c = _SAFETY * math.sqrt(2.0 * max(spec.normal_diffusion_bound(), 1e-300))
    B = spec.drift_bound()
    x = np.tile(np.asarray(x0, dtype=float), (m, 1))
    t = np.zeros(m)
    alive = np.arange(m)
    tau = np.full(m, np.nan)
    bottom = np.zeros(m, dtype=bool)
    root2 = math.sqrt(2.0)
    while alive.size:
        n = x @ e
        d = np.minimum(n, spec.R_cap - n)
        dt = np.clip(_step_bound(d, c, B), spec.dt, spec.dt_max)
        dW = rng.standard_normal((alive.size, N)) * np.sqrt(dt)[:, None]
        if const:
            x = x + b0 * dt[:, None] + root2 * dW @ s0.T
        else:
            x = x + spec.b_at(x) * dt[:, None] + root2 * np.einsum("pij,pj->pi", spec.sigma_at(x), dW)
        t = t + dt
        n = x @ e
        out = (n <= 0.0) | (n >= spec.R_cap)
        if out.any():
            idx = alive[out]
            tau[idx] = t[out]
            bottom[idx] = n[out] <= 0.0
            keep = ~out
            x, t, alive = x[keep], t[keep], alive[keep]
        if alive.size and t.min() >= t_max:
            break
    return tau, bottom


def simulate_exit(spec: DiffusionSpec, x0, threads: int = 1) -> ExitStats:
    """Mean capped exit time, its standard error and the bottom-exit fraction from ``x0``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (spec.dim,):
        raise ValueError(f"x0 must have {spec.dim} components")
    n0 = float(x0 @ np.asarray(spec.normal))
    if not 0.0 < n0 < spec.R_cap:
        raise ValueError(f"x0.e = {n0:g} is not inside (0, {spec.R_cap:g})")
    t_max = 100.0 * spec.R_cap**2
    sizes = [spec.chunk] * (spec.n_paths // spec.chunk)
    if spec.n_paths % spec.chunk:
        sizes.append(spec.n_paths % spec.chunk)
    seqs = np.random.SeedSequence(spec.seed).spawn(len(sizes))
    jobs = list(zip(sizes, seqs))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda j: _run_chunk(spec, x0, j[0], j[1], t_max), jobs))
    else:
        parts = [_run_chunk(spec, x0, m, s, t_max) for m, s in jobs]
    tau = np.concatenate([p[0] for p in parts])
    bottom = np.concatenate([p[1] for p in parts])
    done = np.isfinite(tau)
    k = int(done.sum())
    if k == 0:
        raise RuntimeError(f"no path exited before t_max = {t_max:g}")
    tt = tau[done]
    mean = float(tt.mean())
    se = float(tt.std(ddof=1) / math.sqrt(k)) if k > 1 else math.inf
    bt = tau[done & bottom]
    bm = float(bt.mean()) if bt.size else None
    bse = float(bt.std(ddof=1) / math.sqrt(bt.size)) if bt.size > 1 else None
    return ExitStats(
        mean=mean,
        std_error=se,
        bottom_fraction=float(bottom[done].mean()),
        bottom_mean=bm,
        bottom_std_error=bse,
        n_paths=spec.n_paths,
        n_exited=k,
        aborted=k < spec.n_paths,
        x0=list(map(float, x0)),
        R_cap=spec.R_cap,
    )


@dataclass
class GrowthReport:
    R: list
    stats: list
    exponent: float
    verdict: str
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "means": [s.mean for s in self.stats],
            "std_errors": [s.std_error for s in self.stats],
            "bottom_means": [s.bottom_mean for s in self.stats],
            "bottom_fractions": [s.bottom_fraction for s in self.stats],
            "exponent": self.exponent,
            "verdict": self.verdict,
            **self.extras,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["R", "mean", "std_error", "bottom_fraction", "bottom_mean"])
            for R, s in zip(self.R, self.stats):
                w.writerow([repr(R), repr(s.mean), repr(s.std_error), repr(s.bottom_fraction), repr(s.bottom_mean)])


def exit_growth_probe(
    spec: DiffusionSpec,
    R_list: Sequence[float] = (10.0, 20.0, 40.0),
    x0=None,
    growth_threshold: float = 0.8,
    saturation: float = 0.05,
    threads: int = 1,
) -> GrowthReport:
    """Fit the growth of the capped mean exit time in the strip height.

    A log-log exponent above ``growth_threshold`` points to a failure of the
    coercive-subsolution condition; a relative change below ``saturation``
    over the last two heights is compatible with it.  Growth whose first and
    last 3-s.e. bands overlap is reported as inconclusive.  Without
    drift no verdict is given (Brownian exit times grow without any failure).
    """
    R_list = [float(R) for R in R_list]
    if len(R_list) < 3 or any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be increasing with at least three entries")
    if x0 is None:
        x0 = np.asarray(spec.normal) * 1.0
    stats = []
    for R in R_list:
        s = DiffusionSpec(
            spec.b, spec.sigma, spec.dt, spec.n_paths, spec.seed, R, spec.normal, spec.dt_max, spec.chunk
        )
        stats.append(simulate_exit(s, x0, threads))
    means = np.array([s.mean for s in stats])
    ses = np.array([s.std_error for s in stats])
    exponent = float(np.polyfit(np.log(R_list), np.log(means), 1)[0])
    rel = abs(means[-1] - means[-2]) / abs(means[-2])
    separated = abs(means[-1] - means[0]) > 3 * (ses[-1] + ses[0])
    if spec.drift_bound() == 0.0:
        verdict = "no-verdict"
    elif exponent >= growth_threshold:
        verdict = "probable-failure" if separated else "inconclusive"
    elif rel < saturation:
        verdict = "compatible"
    else:
        verdict = "inconclusive"
    return GrowthReport(R_list, stats, exponent, verdict, {"last_relative_change": float(rel), "heuristic": True})

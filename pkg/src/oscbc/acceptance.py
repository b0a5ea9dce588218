"""
Acceptance suite: twelve numbered criteria with pinned tolerances and time budgets.

Each ``criterion_N`` returns a :class:`Criterion` holding measured values next
to their targets.  The ``verify`` command and the test-suite both run these.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .cell_problem import almost_periodic_mu, subsolution_diagnostic, liouville_check, mu
from .elliptic_solver import comparison_check, discretize, wr_closed_form, wr_solve
from .homogenizer import blowup_check, parabolic_blowup_check
from .operator import EpsProblem, LinearPiece, OperatorSpec, slow_drift_family, laplacian
from .parabolic_cell import mu_parabolic, solve_time_periodic
from .strip_grid import BoundaryData, build_strip, sample_trace

__all__ = ["Check", "Criterion", "CRITERIA", "run_criterion", "run_all", "random_trig"]


@dataclass
class Check:
    """One measured quantity and the rule it must satisfy.

    ``relation`` is one of ``abs`` (|measured - target| <= tolerance),
    ``le`` (measured <= tolerance), ``ge`` (measured >= tolerance),
    ``range`` (target[0] <= measured <= target[1]) or ``equal``.
    """

    name: str
    measured: Any
    relation: str
    tolerance: Any = None
    target: Any = None

    @property
    def passed(self) -> bool:
        m = self.measured
        if self.relation == "equal":
            return m == self.target
        if m is None or not math.isfinite(m):
            return False
        if self.relation == "abs":
            return abs(m - self.target) <= self.tolerance
        if self.relation == "le":
            return m <= self.tolerance
        if self.relation == "ge":
            return m >= self.tolerance
        if self.relation == "range":
            return self.target[0] <= m <= self.target[1]
        raise ValueError(f"unknown relation {self.relation!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "relation": self.relation,
            "target": self.target,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }

    def describe(self) -> str:
        m = self.measured
        ms = f"{m:.4g}" if isinstance(m, float) else str(m)
        if self.relation == "abs":
            rule = f"{self.target:.6g} +/- {self.tolerance:.3g}"
        elif self.relation == "le":
            rule = f"<= {self.tolerance:.3g}"
        elif self.relation == "ge":
            rule = f">= {self.tolerance:.3g}"
        elif self.relation == "range":
            rule = f"in [{self.target[0]:g}, {self.target[1]:g}]"
        else:
            rule = f"== {self.target}"
        return f"{self.name}={ms} ({rule})"


@dataclass
class Criterion:
    number: int
    title: str
    budget: float
    checks: list = field(default_factory=list)
    runtime: float = 0.0
    details: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def within_budget(self) -> bool:
        return self.runtime <= self.budget

    @property
    def passed(self) -> bool:
        return self.error is None and self.within_budget and all(c.passed for c in self.checks)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        failed = [c for c in self.checks if not c.passed]
        shown = failed if failed else self.checks[:3]
        body = "; ".join(c.describe() for c in shown)
        if self.error:
            body = f"error: {self.error}"
        more = "" if failed or len(self.checks) <= 3 else f"; +{len(self.checks) - 3} more"
        return f"[{tag}] {self.number:2d}. {self.title}: {body}{more} [{self.runtime:.2f}s / {self.budget:g}s]"

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "title": self.title,
            "budget_seconds": self.budget,
            "checks": [c.to_dict() for c in self.checks],
            "details": self.details,
            "error": self.error,
            "passed_checks": self.error is None and all(c.passed for c in self.checks),
        }


def random_trig(rng: np.random.Generator, n_terms=3, max_freq=3, dim=2, constant=None) -> BoundaryData:
    """Random lattice-periodic trig trace along the first axis."""
    c = float(rng.uniform(-1, 1)) if constant is None else constant
    terms = []
    for _ in range(int(rng.integers(1, n_terms + 1))):
        k = float(rng.integers(1, max_freq + 1))
        freq = (k,) + (0.0,) * (dim - 1)
        terms.append((float(rng.uniform(-1, 1)), freq, float(rng.uniform(0, 2 * math.pi))))
    return BoundaryData("lattice-periodic", c, terms)


def _cos_trace(dim=2):
    return BoundaryData("lattice-periodic", 0.0, [(1.0, (1.0,) + (0.0,) * (dim - 1), 0.0)])


def criterion_1(seed=0):
    c = Criterion(1, "W_R closed form (b=1, R=10, h=1e-3)", 1.0)
    W = wr_solve(1.0, 10.0, 1e-3)
    x = W.grid.heights
    err = float(np.max(np.abs(W.values[0] - wr_closed_form(x, 1.0, 10.0))))
    c.checks.append(Check("max_node_error", err, "le", 1e-4))
    c.details["W(5)"] = float(W.interpolate(0.0, 5.0))
    return c


def criterion_2(seed=0):
    c = Criterion(2, "K_R ~ R", 5.0)
    for R in (10.0, 20.0, 40.0):
        W = wr_solve(1.0, R, 1e-3)
        x = W.grid.heights
        phi = 1 - np.exp(-x)
        y = W.values[0] + x
        K = float(phi @ y / (phi @ phi))
        c.checks.append(Check(f"K_R/R (R={R:g})", K / R, "range", target=[0.99, 1.01]))
    return c


def criterion_3(seed=0, pairs=20):
    c = Criterion(3, "comparison contraction, Laplacian half-plane", 120.0)
    spec = laplacian(2)
    grid = build_strip(spec, 2.0, 0.05)
    scheme = discretize(spec, grid)
    rng = np.random.default_rng(seed + 3)
    worst = -math.inf
    for _ in range(pairs):
        t1 = sample_trace(random_trig(rng), grid)
        t2 = sample_trace(random_trig(rng), grid)
        for a, b in ((t1, t2), (t2, t1)):
            worst = max(worst, comparison_check(scheme, a, b, tol=1e-10)["excess"])
    c.checks.append(Check("max_excess", float(worst), "le", 1e-6))
    c.details["pairs"] = pairs
    return c


def criterion_4(seed=0):
    c = Criterion(4, "tail constant, cosine oracle", 60.0)
    rep = mu(laplacian(2), _cos_trace())
    c.checks += [
        Check("mu", rep.mu, "abs", 1e-3, 0.0),
        Check("decay_rate", rep.decay_rate, "abs", 0.05 * 2 * math.pi, 2 * math.pi),
        Check("verdict", rep.verdict, "equal", target="converged"),
    ]
    c.details["report"] = rep.to_dict()
    return c


def criterion_5(seed=0, count=10):
    c = Criterion(5, "mean-value oracle, constant diagonal specs", 300.0)
    rng = np.random.default_rng(seed + 5)
    for i in range(count):
        a = rng.uniform(0.5, 2.0, 2)
        spec = OperatorSpec((LinearPiece.constant(np.diag(a)),))
        psi = random_trig(rng)
        rep = mu(spec, psi)
        c.checks.append(Check(f"mu-mean #{i}", rep.mu, "abs", 1e-3, psi.mean_value()))
    return c


def criterion_6(seed=0):
    c = Criterion(6, "almost-periodic mu", 300.0)
    psi = BoundaryData(
        "almost-periodic", 0.0, [(0.5, (1.0, 0.0), 0.0), (0.5, (math.sqrt(2.0), 0.0), 0.0)]
    )
    rep = almost_periodic_mu(laplacian(2), psi, eps_ap=0.05, mu_tol=2e-3, n_translates=10, seed=seed)
    c.checks += [
        Check("mu", rep.mu, "abs", 2e-3, 0.0),
        Check("translate_excess", rep.extras["translate_excess"], "le", 2e-3),
        Check("translates", len(rep.extras["translates"]), "equal", target=10),
    ]
    c.details["almost_period"] = rep.extras["almost_period"]
    c.details["window"] = rep.extras["window"]
    return c


def criterion_7(seed=0):
    c = Criterion(7, "coercive-subsolution diagnostic trichotomy", 120.0)
    a = subsolution_diagnostic(laplacian(2))
    inward = OperatorSpec((LinearPiece.constant(np.eye(2), [0.0, -1.0]),))
    b = subsolution_diagnostic(inward)
    one_d = subsolution_diagnostic(OperatorSpec((LinearPiece.constant([[1.0]], [1.0]),)))
    c.checks += [
        Check("b=0 verdict", f"{a.verdict}({a.data['case']})", "equal", target="certified(a)"),
        Check("b.e=-1 verdict", f"{b.verdict}({b.data['case']})", "equal", target="certified(b)"),
        Check("1-d b=+1 verdict", one_d.verdict, "equal", target="uncertified"),
        Check("1-d b=+1 growth exponent", one_d.data["growth_exponent"], "ge", 0.8),
    ]
    c.details["growth"] = one_d.to_dict()
    return c


def criterion_8(seed=0):
    c = Criterion(8, "Liouville constancy on the periodic box", 120.0)
    hjb = OperatorSpec(
        (LinearPiece.constant(np.diag([1.0, 2.0])), LinearPiece.constant(np.diag([2.0, 0.5])))
    )
    for name, spec in (("laplacian", laplacian(2)), ("two-piece HJB", hjb)):
        rep = liouville_check(spec, h=0.05, box_period=1.0, seed=seed)
        c.checks.append(Check(f"{name} oscillation ratio", rep["ratio"], "le", 1e-6))
        c.details[name] = rep
    return c


def criterion_9(seed=0):
    c = Criterion(9, "elliptic blow-up identity, slow-drift family", 600.0)
    R = 0.625
    prob = slow_drift_family(np.eye(2), psi=_cos_trace())
    rep = blowup_check(prob, R=R, delta=0.05, eps_ladder=(1 / 8, 1 / 16, 1 / 32), gbar=0.0)
    c.checks += [
        Check("exp(-2 pi R)", math.exp(-2 * math.pi * R), "le", 0.025),
        Check("deviation at eps=1/32", rep.deviations[-1], "le", 0.05),
        Check("deviations non-increasing", rep.monotone, "equal", target=True),
    ]
    c.details["report"] = rep.to_dict()
    return c


def criterion_10(seed=0):
    c = Criterion(10, "parabolic cell oracle", 120.0)
    heat = laplacian(1)
    phi = BoundaryData("time-periodic", 0.0, [(1.0, (1.0,), 0.0)])
    rep = mu_parabolic(heat, phi)
    tol = 1e-8
    v2 = solve_time_periodic(laplacian(2), phi, 2.0, 0.05, tol=tol)
    c.checks += [
        Check("mu", rep.mu, "abs", 1e-3, 0.0),
        Check("decay_rate", rep.decay_rate, "abs", 0.05 * math.sqrt(math.pi), math.sqrt(math.pi)),
        Check("seam gap", v2.report.seam_gap, "le", 10 * tol),
        Check("tangential oscillation", v2.tangential_oscillation(), "le", 10 * tol),
    ]
    c.details["report"] = rep.to_dict()
    return c


def criterion_11(seed=0):
    c = Criterion(11, "parabolic blow-up, heat on an interval", 600.0)
    g = BoundaryData("time-periodic", 0.4, [(0.6, (1.0,), 0.0)])
    prob = EpsProblem(
        "parabolic", Ftilde=laplacian(1), g_left=g, g_right=g, u0=lambda x: np.full_like(x, 0.4), length=1.0, T=1.0
    )
    R = 2.125  # exp(-sqrt(pi) R) <= delta / 2
    rep = parabolic_blowup_check(prob, "left", t=0.5, R=R, delta=0.05, eps_ladder=(1 / 8, 1 / 16))
    c.checks += [
        Check("gbar", rep.gbar, "abs", 1e-3, 0.4),
        Check("deviation at eps=1/16", rep.deviations[-1], "le", 0.05),
    ]
    c.details["report"] = rep.to_dict()
    return c


_SDE_CONFIG = """\
command = "sde"
seed = {seed}

[diffusion]
b = [1.0]
sigma = [[1.0]]
R_cap = 10.0
x0 = [5.0]
n_paths = 100000
"""


def criterion_12(seed=0):
    from .cli import run

    c = Criterion(12, "SDE cross-check against W_R", 120.0)
    exact = float(wr_closed_form(5.0, 1.0, 10.0))
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "sde.toml"
        cfg.write_text(_SDE_CONFIG.format(seed=seed + 12))
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            run(["sde", "--config", str(cfg), "--out", str(out)])
            blobs.append((out / "summary.json").read_bytes())
        stats = json.loads(blobs[0])["results"]["exit"]
    c.checks += [
        Check("MC mean", stats["mean"], "abs", 3 * stats["std_error"], exact),
        Check("byte-identical summary", blobs[0] == blobs[1], "equal", target=True),
    ]
    c.details["stats"] = stats
    return c


CRITERIA = {
    n: f
    for n, f in enumerate(
        (
            criterion_1,
            criterion_2,
            criterion_3,
            criterion_4,
            criterion_5,
            criterion_6,
            criterion_7,
            criterion_8,
            criterion_9,
            criterion_10,
            criterion_11,
            criterion_12,
        ),
        start=1,
    )
}


def run_criterion(number: int, seed: int = 0) -> Criterion:
    fn = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        crit = fn(seed)
    except Exception as exc:  # reported, not raised: one broken criterion must not hide the rest
        crit = Criterion(number, fn.__name__, math.inf, error=f"{type(exc).__name__}: {exc}")
    crit.runtime = time.perf_counter() - t0
    return crit


def run_all(numbers=None, seed: int = 0, echo=None) -> list:
    out = []
    for n in numbers or sorted(CRITERIA):
        crit = run_criterion(n, seed)
        if echo is not None:
            echo(crit.line())
        out.append(crit)
    return out

"""
Batch front-end.

Usage::

    oscbc cell       --config cell.toml       [--out DIR] [--seed N] [--threads N]
    oscbc parabolic  --config parabolic.toml
    oscbc homogenize --config blowup.toml
    oscbc sde        --config sde.toml --threads 4
    oscbc verify     [--config verify.toml]

Configs are TOML with strictly checked keys.  Every run writes
``summary.json`` (schema 1), CSV tables and SVG figures into the output
directory, plus ``timing.log`` with wall-clock times (kept out of the JSON
so identical configs give byte-identical summaries).

Exit status: 0 when every verdict is pass/converged, 2 when a diagnostic
verdict occurs, 1 on error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import acceptance
from .cell_problem import almost_periodic_mu, subsolution_diagnostic, liouville_check, mu
from .elliptic_solver import wr_closed_form
from .homogenizer import blowup_check, parabolic_blowup_check
from .operator import EpsProblem, LinearPiece, OperatorSpec, slow_drift_family, fast_drift_family, laplacian
from .parabolic_cell import mu_parabolic
from .sde_exit import DiffusionSpec, exit_growth_probe, simulate_exit
from .strip_grid import BoundaryData

__all__ = ["main", "run", "load_config", "ConfigError", "SCHEMA"]

SCHEMA = 1
COMMANDS = ("cell", "parabolic", "homogenize", "sde", "verify")
OK_VERDICTS = {"converged", "certified", "pass", "compatible", "no-verdict", True}

_PIECE = {"A": list, "b": list, "nu": (int, float), "Lam": (int, float)}
_TERMS = {"amplitude": (int, float), "freq": list, "phase": (int, float)}
SCHEMA_KEYS = {
    "command": str,
    "seed": int,
    "out": str,
    "threads": int,
    "operator": {
        "preset": str,
        "dim": int,
        "scale": (int, float),
        "normal": list,
        "lattice": list,
        "pieces": [_PIECE],
    },
    "boundary": {"kind": str, "constant": (int, float), "terms": [_TERMS]},
    "ladder": {
        "mu_tol": (int, float),
        "R0": (int, float),
        "h0": (int, float),
        "dt0": (int, float),
        "tol": (int, float),
        "max_doublings": int,
    },
    "almost_periodic": {"eps_ap": (int, float), "n_translates": int},
    "diagnostics": {"subsolution": bool, "liouville": bool, "liouville_h": (int, float), "box_period": (int, float)},
    "problem": {"family": str, "H": (int, float), "width": (int, float), "u0": (int, float), "length": (int, float), "T": (int, float)},
    "blowup": {
        "x": list,
        "R": (int, float),
        "delta": (int, float),
        "eps": list,
        "h_ratio": int,
        "t": (int, float),
        "m": int,
        "endpoint": str,
    },
    "diffusion": {
        "b": list,
        "sigma": list,
        "dt": (int, float),
        "dt_max": (int, float),
        "n_paths": int,
        "R_cap": (int, float),
        "x0": list,
        "chunk": int,
    },
    "growth": {"R": list, "x0": list},
    "verify": {"criteria": list},
}
REQUIRED = {
    "cell": ("operator", "boundary"),
    "parabolic": ("operator", "boundary"),
    "homogenize": ("operator", "boundary", "problem", "blowup"),
    "sde": ("diffusion",),
    "verify": (),
}


class ConfigError(ValueError):
    pass


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    """Line number of ``key`` inside ``[section]`` (best effort, for messages)."""
    current = ""
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[\[?\s*([^\]]+?)\s*\]\]?", s)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return no
    return None


def _type_ok(val, rule) -> bool:
    rules = rule if isinstance(rule, tuple) else (rule,)
    if isinstance(val, bool):  # TOML booleans are ints to Python
        return bool in rules
    return isinstance(val, rules)


def _validate(table: dict, schema: dict, where: str, text: str) -> None:
    for key, val in table.items():
        if key not in schema:
            line = _line_of(text, where, key)
            loc = f" (line {line})" if line else ""
            name = f"[{where}]" if where else "top level"
            raise ConfigError(f"unknown key {key!r} in {name}{loc}")
        rule = schema[key]
        sub = f"{where}.{key}" if where else key
        if isinstance(rule, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{sub} must be a table")
            _validate(val, rule, sub, text)
        elif isinstance(rule, list):
            if not isinstance(val, list) or not all(isinstance(v, dict) for v in val):
                raise ConfigError(f"{sub} must be an array of tables")
            for v in val:
                _validate(v, rule[0], sub, text)
        elif not _type_ok(val, rule):
            raise ConfigError(f"{sub} has the wrong type ({type(val).__name__})")


def load_config(path) -> dict:
    """Parse and strictly validate a TOML experiment config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _validate(cfg, SCHEMA_KEYS, "", text)
    cmd = cfg.get("command")
    if cmd is not None and cmd not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {cmd!r}")
    return cfg


def _operator(block: dict) -> OperatorSpec:
    preset = block.get("preset")
    kw = {k: block[k] for k in ("normal", "lattice") if k in block}
    if preset is not None:
        if "pieces" in block:
            raise ConfigError("[operator] takes either preset or pieces, not both")
        if preset != "laplacian":
            raise ConfigError(f"unknown operator preset {preset!r}")
        return laplacian(block.get("dim", 2), block.get("scale", 1.0), **kw)
    if "pieces" not in block:
        raise ConfigError("[operator] needs preset or [[operator.pieces]]")
    for k, p in enumerate(block["pieces"]):
        for v in [x for row in p.get("A", []) for x in row] + list(p.get("b", [])):
            _check_field(v, f"operator.pieces[{k}]")
    pieces = tuple(LinearPiece.from_dict(p) for p in block["pieces"])
    return OperatorSpec(pieces, **kw)


def _check_field(value, where: str) -> None:
    """Coefficient entries are numbers or ``{constant, terms}`` tables."""
    if isinstance(value, bool) or not isinstance(value, (int, float, dict)):
        raise ConfigError(f"{where}: coefficient entries are numbers or tables")
    if isinstance(value, dict):
        extra = set(value) - {"constant", "terms"}
        if extra:
            raise ConfigError(f"{where}: unknown coefficient keys {sorted(extra)}")
        for t in value.get("terms", []):
            extra = set(t) - set(_TERMS)
            if extra:
                raise ConfigError(f"{where}: unknown term keys {sorted(extra)}")


def _boundary(block: dict, default_kind="lattice-periodic") -> BoundaryData:
    data = dict(block)
    data.setdefault("kind", default_kind)
    return BoundaryData.from_dict(data)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _check(name, measured, relation, tolerance=None, target=None):
    return acceptance.Check(name, measured, relation, tolerance, target).to_dict()


class _Run:
    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.timings = []
        self.verdicts = []

    def timed(self, label, fn, *a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        self.timings.append((label, time.perf_counter() - t0))
        return res

    def finish(self, command, cfg, seed, results, checks):
        ok = all(v in OK_VERDICTS for v in self.verdicts) and all(c["passed"] for c in checks)
        summary = {
            "schema": SCHEMA,
            "command": command,
            "seed": seed,
            "config": cfg,
            "results": results,
            "checks": checks,
            "verdicts": [str(v) for v in self.verdicts],
            "status": "pass" if ok else "diagnostic",
        }
        text = json.dumps(_clean(summary), indent=2, sort_keys=True)
        (self.out / "summary.json").write_text(text + "\n")
        with open(self.out / "timing.log", "w") as fh:
            for label, dt in self.timings:
                fh.write(f"{label}\t{dt:.3f}\n")
        return 0 if ok else 2


def _tail_outputs(run: _Run, rep, stem: str):
    from . import plots

    rep.profile_to_csv(run.out / f"{stem}.csv")
    heights, dev = rep.profile
    plots.tail_profile(heights, dev, run.out / f"{stem}.svg", rep.decay_rate)


def _tail_checks(rep, sup):
    checks = [
        _check("richardson_gap", rep.richardson_gap, "le", rep.mu_tol),
        _check("|mu| bound", abs(rep.mu), "le", sup + rep.mu_tol),
    ]
    if rep.decay_rate is not None:
        checks.append(_check("decay fit residual", rep.fit_residual, "le", 0.1 * rep.fit_range))
    return checks


def cmd_cell(cfg, seed, run: _Run, threads: int):
    spec = _operator(cfg["operator"])
    psi = _boundary(cfg["boundary"])
    lad = cfg.get("ladder", {})
    kw = {k: lad[k] for k in ("R0", "h0", "tol") if k in lad}
    mu_tol = lad.get("mu_tol", 1e-3 if psi.kind != "almost-periodic" else 2e-3)
    if psi.kind == "almost-periodic":
        ap = cfg.get("almost_periodic", {})
        rep = run.timed(
            "almost_periodic_mu", almost_periodic_mu, spec, psi,
            ap.get("eps_ap", 0.05), mu_tol, n_translates=ap.get("n_translates", 10), seed=seed, **kw,
        )
    else:
        rep = run.timed("mu", mu, spec, psi, mu_tol, max_doublings=lad.get("max_doublings", 3), **kw)
    run.verdicts.append(rep.verdict)
    results = {"tail": rep.to_dict()}
    checks = _tail_checks(rep, psi.sup_bound())
    if "translate_excess" in rep.extras:
        checks.append(_check("translate_excess", rep.extras["translate_excess"], "le", mu_tol))
    diag = cfg.get("diagnostics", {})
    if diag.get("subsolution", True):
        cert = run.timed("subsolution_diagnostic", subsolution_diagnostic, spec)
        results["subsolution"] = cert.to_dict()
        run.verdicts.append(cert.verdict)
    if diag.get("liouville", False):
        lv = run.timed(
            "liouville_check", liouville_check, spec, diag.get("liouville_h", 0.05), diag.get("box_period", 1.0), seed
        )
        results["liouville"] = lv
        checks.append(_check("liouville oscillation ratio", lv["ratio"], "le", 1e-6))
    _tail_outputs(run, rep, "tail")
    return results, checks


def cmd_parabolic(cfg, seed, run: _Run, threads: int):
    spec = _operator(cfg["operator"])
    phi = _boundary(cfg["boundary"], "time-periodic")
    lad = cfg.get("ladder", {})
    kw = {k: lad[k] for k in ("R0", "h0", "dt0", "tol", "max_doublings") if k in lad}
    rep = run.timed("mu_parabolic", mu_parabolic, spec, phi, lad.get("mu_tol", 1e-3), **kw)
    run.verdicts.append(rep.verdict)
    _tail_outputs(run, rep, "tail")
    return {"tail": rep.to_dict()}, _tail_checks(rep, phi.sup_bound())


def cmd_homogenize(cfg, seed, run: _Run, threads: int):
    from . import plots

    prob_cfg = cfg["problem"]
    family = prob_cfg.get("family", "slow-drift")
    spec = _operator(cfg["operator"])
    bl = cfg["blowup"]
    delta = bl.get("delta", 0.05)
    if family == "parabolic":
        g = _boundary(cfg["boundary"], "time-periodic")
        u0 = prob_cfg.get("u0", g.mean_value())
        prob = EpsProblem(
            "parabolic", Ftilde=spec, g_left=g, g_right=g, u0=lambda x: np.full_like(x, u0),
            length=prob_cfg.get("length", 1.0), T=prob_cfg.get("T", 1.0),
        )
        rep = run.timed(
            "parabolic_blowup_check", parabolic_blowup_check, prob, bl.get("endpoint", "left"),
            bl.get("t", 0.5), bl.get("R", 2.125), delta, bl.get("eps", [1 / 8, 1 / 16]),
            bl.get("m", 16), bl.get("h_ratio", 16),
        )
    else:
        if len(spec.pieces) != 1:
            raise ConfigError("epsilon problems take a single linear piece")
        psi = _boundary(cfg["boundary"])
        make = slow_drift_family if family == "slow-drift" else fast_drift_family if family == "fast-drift" else None
        if make is None:
            raise ConfigError(f"unknown family {family!r}")
        kw = {k: prob_cfg[k] for k in ("H", "width") if k in prob_cfg}
        prob = make(spec.pieces[0], psi=psi, lattice=spec.lattice, normal=spec.normal, **kw)
        rep = run.timed(
            "blowup_check", blowup_check, prob, bl.get("x"), bl.get("R", 1.0), delta,
            bl.get("eps", [1 / 8, 1 / 16, 1 / 32]), bl.get("h_ratio", 16),
        )
    run.verdicts.append(rep.verdict)
    rep.to_csv(run.out / "deviations.csv")
    plots.deviation_curve(rep.eps, rep.deviations, run.out / "deviations.svg", delta)
    checks = [_check("deviation at smallest eps", rep.deviations[-1], "le", delta)]
    return {"blowup": rep.to_dict()}, checks


def cmd_sde(cfg, seed, run: _Run, threads: int):
    from . import plots

    d = cfg["diffusion"]
    kw = {k: d[k] for k in ("dt", "dt_max", "n_paths", "R_cap", "chunk") if k in d}
    spec = DiffusionSpec(b=d["b"], sigma=d["sigma"], seed=seed, **kw)
    x0 = d.get("x0", [spec.R_cap / 2])
    stats = run.timed("simulate_exit", simulate_exit, spec, x0, threads)
    results = {"diffusion": spec.to_dict(), "exit": stats.to_dict()}
    checks = [_check("paths exited", stats.n_exited, "ge", stats.n_paths)]
    one_d_const = spec.dim == 1 and spec.is_constant()
    if one_d_const:
        b = spec.b[0].constant
        a = spec.sigma[0][0].constant ** 2
        x = float(x0[0])
        ref = float(wr_closed_form(x, b, spec.R_cap, a)) if b != 0 else x * (spec.R_cap - x) / (2 * a)
        results["exit"]["pde_value"] = ref
        checks.append(_check("MC mean vs PDE", stats.mean, "abs", 3 * stats.std_error, ref))
    g = cfg.get("growth")
    if g is not None:
        gx0 = g.get("x0", [1.0] if spec.dim == 1 else None)
        rep = run.timed("exit_growth_probe", exit_growth_probe, spec, g.get("R", [10.0, 20.0, 40.0]), gx0, threads=threads)
        results["growth"] = rep.to_dict()
        run.verdicts.append(rep.verdict)
        rep.to_csv(run.out / "growth.csv")
        ref = None
        if one_d_const and spec.b[0].constant != 0:
            ref = [float(wr_closed_form(float(gx0[0]), spec.b[0].constant, R, a)) for R in rep.R]
        plots.exit_growth(rep.R, [s.mean for s in rep.stats], [s.std_error for s in rep.stats], run.out / "growth.svg", ref)
    return results, checks


def cmd_verify(cfg, seed, run: _Run, threads: int):
    numbers = cfg.get("verify", {}).get("criteria") or sorted(acceptance.CRITERIA)
    bad = [n for n in numbers if n not in acceptance.CRITERIA]
    if bad:
        raise ConfigError(f"unknown acceptance criteria {bad}")
    crits = acceptance.run_all(numbers, seed, echo=print)
    for c in crits:
        run.timings.append((f"criterion {c.number}", c.runtime))
        run.verdicts.append(c.passed)
    checks = []
    for c in crits:
        for ch in c.checks:
            d = ch.to_dict()
            d["name"] = f"{c.number}: {d['name']}"
            checks.append(d)
        checks.append(_check(f"{c.number}: runtime within budget", c.within_budget, "equal", target=True))
    with open(run.out / "acceptance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["criterion", "title", "passed", "budget_seconds"])
        for c in crits:
            w.writerow([c.number, c.title, c.passed, c.budget])
    return {"criteria": [c.to_dict() for c in crits]}, checks


DISPATCH = {
    "cell": cmd_cell,
    "parabolic": cmd_parabolic,
    "homogenize": cmd_homogenize,
    "sde": cmd_sde,
    "verify": cmd_verify,
}


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("oscbc") / "configs" / name))


class _Parser(argparse.ArgumentParser):
    # exit code 2 means "diagnostic" here, so usage errors must not use it
    def error(self, message):
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oscbc", description="Boundary-layer homogenization experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="TOML experiment config (verify defaults to the bundled suite)")
    p.add_argument("--out", help="output directory (default: config 'out' or ./results)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads for Monte Carlo chunks")
    return p


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.config is None:
        if args.command != "verify":
            raise ConfigError(f"{args.command} needs --config")
        cfg_path = bundled_config("verify.toml")
    else:
        cfg_path = Path(args.config)
    cfg = load_config(cfg_path)
    if cfg.get("command", args.command) != args.command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}")
    missing = [s for s in REQUIRED[args.command] if s not in cfg]
    if missing:
        raise ConfigError(f"{args.command} config needs sections {missing}")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    threads = args.threads if args.threads is not None else cfg.get("threads", 1)
    out = Path(args.out or cfg.get("out", "results"))
    r = _Run(out)
    results, checks = DISPATCH[args.command](cfg, seed, r, max(1, threads))
    return r.finish(args.command, cfg, seed, results, checks)


def main(argv=None) -> int:
    try:
        code = run(argv)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"oscbc: error: {exc}", file=sys.stderr)
        code = 1
    return code


if __name__ == "__main__":
    sys.exit(main())

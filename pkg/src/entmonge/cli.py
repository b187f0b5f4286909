"""Command line entry point ``entmonge``.

Every subcommand reads a JSON config (``--config``), writes its outputs under
``output_dir`` together with a ``run.json`` manifest, and exits with

====  =============================
0     success
2     validation failure
3     budget exceeded
4     solver non-convergence
5     configuration error
====  =============================
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__, kernels
from .errors import BudgetExceeded, ConfigError, EntMongeError, NonConvergence, SingularFit
from .experiments import (
    FIXED_GRID_NOTE,
    SCHEDULE_NOTE,
    check_eps_list,
    default_schedule,
    full_eot,
    run_ce_directional,
    run_ce_sharpness,
    run_expand,
    run_selection,
    run_validate,
)
from .instances import ProductInstance, load_instance
from .measures import DEFAULT_MAX_ATOMS, GridSpec, fmt
from .rayeot import disintegrate, extract_factorization, solve_ray

EXIT_OK, EXIT_INVALID, EXIT_BUDGET, EXIT_NONCONV, EXIT_CONFIG = 0, 2, 3, 4, 5

_KNOWN_KEYS = {
    "instance", "d", "shift", "grid", "eps_list", "schedule", "seed", "output_dir",
    "thread_budget", "h", "h_trans", "constrained", "replay", "s_star_h", "max_atoms",
    "fixed_grid_eps", "eps", "hs",
}


@dataclass
class ExperimentConfig:
    instance: object = "two_boxes"
    d: int = 2
    shift: float = 3.0
    grid: GridSpec = field(default_factory=lambda: GridSpec(0.25, 0.25))
    eps_list: list = field(default_factory=lambda: [0.4, 0.2, 0.1])
    schedule: Optional[list] = None
    seed: int = 0
    output_dir: str = "out"
    thread_budget: int = 1
    h: float = 0.125
    h_trans: float = 0.5
    constrained: bool = True
    replay: Optional[str] = None
    s_star_h: Optional[float] = 1 / 256
    max_atoms: int = DEFAULT_MAX_ATOMS
    fixed_grid_eps: list = field(default_factory=list)
    eps: Optional[float] = None
    hs: list = field(default_factory=lambda: [0.5, 0.25])
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: v for k, v in doc.items() if k not in ("grid", "schedule", "eps_list")}
        cfg = cls(**kw, raw=dict(doc))
        try:
            if "grid" in doc:
                g = doc["grid"]
                cfg.grid = GridSpec(float(g["h_long"]), float(g["h_trans"]))
            if "eps_list" in doc:
                cfg.eps_list = check_eps_list(doc["eps_list"])
            if "schedule" in doc and doc["schedule"] is not None:
                sched = doc["schedule"]
                if isinstance(sched, dict):
                    cols = [sched["eps"], sched["h_long"], sched["h_trans"]]
                    if len({len(c) for c in cols}) != 1:
                        raise ConfigError("schedule lists must have equal length")
                    sched = list(zip(*cols))
                cfg.schedule = [(float(e), float(hl), float(ht)) for e, hl, ht in sched]
                check_eps_list([s[0] for s in cfg.schedule])
            cfg.d = int(cfg.d)
            cfg.thread_budget = int(cfg.thread_budget)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        if cfg.thread_budget < 1:
            raise ConfigError("thread_budget must be >= 1")
        env = os.environ.get("THREADS")
        if env:
            try:
                cfg.thread_budget = max(1, int(env))
            except ValueError:
                raise ConfigError(f"THREADS must be an integer, got {env!r}") from None
        return cfg

    def load(self) -> ProductInstance:
        try:
            return load_instance(self.instance, self.d, self.shift)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad instance: {exc}") from None


def read_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg} at line {exc.lineno} column {exc.colno}") from None
    return ExperimentConfig.from_dict(doc)


# --- output helpers -----------------------------------------------------------

def _clean(x):
    """JSON-ready copy with non-finite floats as strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())


# --- commands -----------------------------------------------------------------

def cmd_validate(cfg: ExperimentConfig, out: Path) -> int:
    inst = cfg.load()
    res = run_validate(inst, cfg.hs)
    write_json(out / "validate.json", res)
    return EXIT_OK if res["report"]["ok"] else EXIT_INVALID


def _read_replay(path: str) -> list[tuple[float, float]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [(float(r["eps"]), float(r["eot"])) for r in rows]
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad replay file {path}: {exc}") from None


def cmd_expand(cfg: ExperimentConfig, out: Path) -> int:
    inst = cfg.load()
    replay = _read_replay(cfg.replay) if cfg.replay else None
    res = run_expand(inst, cfg.grid, cfg.eps_list, cfg.thread_budget, replay=replay,
                     s_star_h=cfg.s_star_h, max_atoms=cfg.max_atoms)
    fit = res.fit
    pred = fit.predict(fit.eps)
    rows = [(e, p.eot, y, fp, r) for e, p, y, fp, r in zip(fit.eps, res.points, fit.y, pred, fit.residuals)]
    write_csv(out / "expansion.csv", ["eps", "eot", "y", "fit_pred", "residual"], rows)
    write_json(out / "fit.json", res.fit_json())
    return EXIT_OK


def cmd_selection(cfg: ExperimentConfig, out: Path) -> int:
    inst = cfg.load()
    notes = []
    if cfg.schedule is None:
        sched = default_schedule(cfg.eps_list)
        notes.append(SCHEDULE_NOTE)
    else:
        sched = cfg.schedule
    if cfg.fixed_grid_eps:
        notes.append(FIXED_GRID_NOTE)
        warnings.warn(FIXED_GRID_NOTE, UserWarning, stacklevel=2)
    rows = run_selection(inst, sched, cfg.thread_budget, cfg.grid if cfg.fixed_grid_eps else None,
                         check_eps_list(cfg.fixed_grid_eps) if cfg.fixed_grid_eps else (),
                         max_atoms=cfg.max_atoms)
    write_csv(out / "selection.csv", ["eps", "h", "discrepancy", "w1_or_nan"],
              [(r.eps, r.h_long, r.discrepancy, r.w1) for r in rows])
    write_json(out / "selection.json", {
        "rows": [r.__dict__ for r in rows],
        "notes": notes,
    })
    return EXIT_OK


def cmd_ce_directional(cfg: ExperimentConfig, out: Path) -> int:
    inst = cfg.load()
    rep = run_ce_directional(inst, cfg.h, cfg.h_trans, threads=cfg.thread_budget)
    write_json(out / "ce_directional.json", rep)
    return EXIT_OK if rep["passed"] else EXIT_INVALID


def cmd_ce_sharpness(cfg: ExperimentConfig, out: Path) -> int:
    inst = cfg.load()
    rep = run_ce_sharpness(inst, cfg.h, cfg.eps_list, cfg.thread_budget, max_atoms=cfg.max_atoms)
    write_json(out / "ce_sharpness.json", rep)
    return EXIT_OK if rep["passed"] else EXIT_INVALID


def cmd_ray_solve(cfg: ExperimentConfig, out: Path) -> int:
    inst = cfg.load()
    fam = disintegrate(inst, GridSpec(cfg.h, cfg.h_trans))
    sol = solve_ray(fam, cfg.h, inst.d, constrained=cfg.constrained, threads=cfg.thread_budget)
    (out / "ray.csv").write_text(sol.to_csv())
    fac = extract_factorization(sol)
    write_json(out / "ray.json", {
        "objective": sol.objective,
        "constrained": sol.constrained,
        "monotone_mass_violation": sol.monotone_mass_violation,
        "iters": sol.iters,
        "marginal_err": sol.marginal_err,
        "factorization_residual": fac.max_residual,
        "cyclic_residual": fac.max_cyclic_residual,
    })
    return EXIT_OK


def cmd_eot_solve(cfg: ExperimentConfig, out: Path) -> int:
    inst = cfg.load()
    eps = cfg.eps if cfg.eps is not None else cfg.eps_list[0]
    res = full_eot(inst, cfg.grid, eps, cfg.thread_budget, max_atoms=cfg.max_atoms)
    (out / "plan.csv").write_text(res.plan.to_csv())
    write_json(out / "eot.json", {
        "eps": eps, "objective": res.objective, "iters": res.iters,
        "marginal_err": res.marginal_err, "converged": res.converged,
    })
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "expand": cmd_expand,
    "selection": cmd_selection,
    "ce-directional": cmd_ce_directional,
    "ce-sharpness": cmd_ce_sharpness,
    "ray-solve": cmd_ray_solve,
    "eot-solve": cmd_eot_solve,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entmonge", description="Entropic Monge plan experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--output-dir", default=None, help="overrides output_dir of the config")
    return p


def _manifest(cmd: str, cfg: ExperimentConfig, status: int, wall: float, error: Optional[str]) -> dict:
    return {
        "command": cmd,
        "config": cfg.raw,
        "thread_budget": cfg.thread_budget,
        "status": status,
        "error": error,
        "versions": {
            "entmonge": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "backend": kernels.BACKEND,
        },
        "wall_time_s": wall,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = read_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output_dir:
        cfg.output_dir = args.output_dir
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    error = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", NonConvergence)
            status = COMMANDS[args.command](cfg, out)
    except BudgetExceeded as exc:
        status, error = EXIT_BUDGET, exc
    except NonConvergence as exc:
        status, error = EXIT_NONCONV, exc
    except (ConfigError, SingularFit) as exc:
        status, error = EXIT_CONFIG, exc
    except EntMongeError as exc:
        # invalid instances, infeasible ray data and the like
        status, error = EXIT_INVALID, exc
    if error is not None:
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
    write_json(out / "run.json", _manifest(args.command, cfg, status, time.perf_counter() - t0,
                                           None if error is None else f"{type(error).__name__}: {error}"))
    return status


if __name__ == "__main__":
    sys.exit(main())

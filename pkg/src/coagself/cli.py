"""Command-line front end.

Exit codes: 0 success, 1 numerical failure (non-convergence, collapsed
time step, unusable profile), 2 usage or configuration error. Results are
computed in full before anything is written, and every file is written
through a temporary file and a rename.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import dynamics as dyn
from . import transform as tr
from . import verify as vf
from ._io import atomic_write_text
from .errors import CoagError
from .kernel import CoagulationKernel, from_spec
from .profile import Grid, Profile, normalize_mass, profile_to_csv, read_csv
from .selfsim import BUILTIN_SEEDS, SolveSettings, builtin_seed, solve

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Parsed options of one invocation; ``outputs`` lists every file to be written."""

    command: str
    options: dict
    outputs: list = field(default_factory=list)


# -- parser ----------------------------------------------------------------------

def _common(threads: bool = True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value file supplying defaults for this command")
    p.add_argument("--kernel", default="constant", help="constant, brownian or power:<eps>:<alpha>")
    if threads:
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    return p


def _grid_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--x-min", type=float, default=None)
    p.add_argument("--x-max", type=float, default=None)
    p.add_argument("--nodes", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coagself", description="Self-similar coagulation profiles and their estimates.")
    parser.add_argument("--version", action="version", version=_version_text())
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[_common()], help="compute a self-similar profile")
    s.add_argument("--seed", default="exp", help=f"builtin seed {sorted(BUILTIN_SEEDS)} or a profile CSV")
    s.add_argument("--out", default="profile.csv")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--omega", type=float, default=0.5)
    s.add_argument("--max-iter", type=int, default=200)
    _grid_options(s)

    e = sub.add_parser("evolve", parents=[_common()], help="integrate the time-dependent equation")
    e.add_argument("--initial", default="exp", help=f"builtin initial density {sorted(BUILTIN_SEEDS)}")
    e.add_argument("--t-end", type=float, default=100.0)
    e.add_argument("--snapshots", type=int, default=10, help="number of equally spaced snapshot times")
    e.add_argument("--out", default="traj")
    e.add_argument("--max-change", type=float, default=dyn.MAX_RELATIVE_CHANGE)

    t = sub.add_parser("transform", parents=[_common(threads=False)], help="desingularized Laplace transform")
    t.add_argument("--profile", required=True)
    t.add_argument("--out", default="transform.csv")
    t.add_argument("--singularity-out", default="singularity.json")
    t.add_argument("--dense", action="store_true", help="use the dense q-grid")

    v = sub.add_parser("verify", parents=[_common()], help="estimate ledger report")
    v.add_argument("--profile", help="profile CSV; solved from --seed when omitted")
    v.add_argument("--seed", default="exp")
    v.add_argument("--out", default="report.json")

    c = sub.add_parser("contract", parents=[_common(threads=False)], help="contraction ratio of a profile pair")
    c.add_argument("--seeds", nargs=2, required=True, metavar=("A", "B"))
    c.add_argument("--mode", choices=("representation", "profile"), default="representation")
    c.add_argument("--out", default=None, help="optional JSON result")

    sc = sub.add_parser("scan", parents=[_common()], help="distance to the constant-kernel transform along eps")
    sc.add_argument("--eps", default="0.02,0.05,0.1,0.2")
    sc.add_argument("--alpha", type=float, default=1.0 / 3.0)
    sc.add_argument("--seed", default="exp")
    sc.add_argument("--out", default="delta.csv")
    return parser


def _version_text() -> str:
    import scipy

    return f"coagself {__version__} (python {platform.python_version()}, numpy {np.__version__}, scipy {scipy.__version__})"


# -- configuration -----------------------------------------------------------------

def _read_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _subparser(parser: argparse.ArgumentParser, name: str | None):
    """The subcommand parser ``name``, or the name-to-parser map for ``None``."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices if name is None else action.choices[name]
    raise KeyError(name)


def parse(argv) -> RunConfig:
    """Parse flags, folding in a config file; flags win over config values."""
    parser = build_parser()
    # required flags may come from the config file, so the first pass is lenient
    required = []
    for sp in _subparser(parser, None).values():
        for act in sp._actions:
            if act.required:
                required.append(act)
                act.required = False
    ns = parser.parse_args(argv)
    for act in required:
        act.required = True
    if ns.config:
        sp = _subparser(parser, ns.command)
        known = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
        conf = _read_config(ns.config)
        unknown = sorted(set(conf) - set(known))
        if unknown:
            raise UsageError(f"unknown config keys for {ns.command}: {', '.join(unknown)}")
        defaults = {}
        for key, raw in conf.items():
            act = known[key]
            if act.nargs in (2, "+", "*"):
                defaults[key] = raw.split()
            elif act.type is not None:
                try:
                    defaults[key] = act.type(raw)
                except ValueError:
                    raise UsageError(f"bad value for {key}: {raw!r}") from None
            elif isinstance(act, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = raw
        sp.set_defaults(**defaults)
        for act in sp._actions:
            if act.dest in defaults:
                act.required = False
    ns = parser.parse_args(argv)
    opts = vars(ns)
    cfg = RunConfig(ns.command, opts)
    if opts.get("threads", 1) < 1:
        raise UsageError("--threads must be >= 1")
    for key in ("out", "singularity_out"):
        if opts.get(key):
            cfg.outputs.append(Path(opts[key]))
    return cfg


def _check_writable(paths) -> None:
    for path in paths:
        parent = Path(path).resolve().parent
        while not parent.exists():
            parent = parent.parent
        if not os.access(parent, os.W_OK):
            raise UsageError(f"cannot write under {parent}")


def _kernel(spec: str) -> CoagulationKernel:
    try:
        return from_spec(spec)
    except CoagError as exc:
        raise UsageError(str(exc)) from None


def _grid(opts) -> Grid:
    g = Grid()
    try:
        return Grid(
            opts.get("x_min") or g.x_min,
            opts.get("x_max") or g.x_max,
            opts.get("nodes") or g.count,
        )
    except ValueError as exc:
        raise UsageError(f"bad grid: {exc}") from None


def _load_profile(name: str, grid: Grid | None = None) -> Profile:
    if name in BUILTIN_SEEDS:
        return builtin_seed(name, grid)
    try:
        return read_csv(name)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read profile {name}: {exc}") from None


# -- commands ----------------------------------------------------------------------

def _solve(cfg: RunConfig, k, mapper, grid=None):
    o = cfg.options
    try:
        settings = SolveSettings(omega=o.get("omega", 0.5), max_iterations=o.get("max_iter", 200), tolerance=o.get("tol", 1e-10))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = _load_profile(o["seed"], grid)
    return solve(k, seed, settings, mapper=mapper)


def cmd_solve(cfg: RunConfig, k, mapper) -> int:
    res = _solve(cfg, k, mapper, _grid(cfg.options))
    print(f"iterations={res.iterations} residual={res.residual:.3e} converged={res.converged} ({res.message})")
    if not res.converged:
        print("solver did not converge; nothing written", file=sys.stderr)
        return EXIT_NUMERICAL
    atomic_write_text(Path(cfg.options["out"]), profile_to_csv(res.profile))
    return EXIT_OK


def cmd_evolve(cfg: RunConfig, k, mapper) -> int:
    o = cfg.options
    if not o["t_end"] > 0.0 or o["snapshots"] < 0:
        raise UsageError("--t-end must be positive and --snapshots >= 0")
    name = o["initial"]
    if name not in BUILTIN_SEEDS:
        raise UsageError(f"unknown initial density {name!r}")
    func = BUILTIN_SEEDS[name]
    s0 = dyn.initial_state(func)
    s0 = dyn.State(s0.grid, s0.phi / s0.mass, 0.0)
    n = o["snapshots"]
    times = [o["t_end"] * i / n for i in range(1, n)] if n > 1 else []
    traj = dyn.evolve(k, s0, o["t_end"], max_change=o["max_change"], snapshots=times, mapper=mapper)
    out = Path(o["out"])
    files = {}
    for i, s in enumerate(traj.states):
        files[f"snapshot_{i:03d}.csv"] = s.to_csv()
    meta = {
        "kernel": k.label,
        "initial": name,
        "times": list(traj.times),
        "masses": list(traj.masses),
        "mass_drift": traj.mass_drift,
        "steps": traj.steps,
        "clip_events": traj.clip_events,
        "rejected_steps": traj.rejected_steps,
        "files": sorted(files),
    }
    files["meta.json"] = json.dumps(meta, sort_keys=True, indent=2) + "\n"
    for fname, text in files.items():
        atomic_write_text(out / fname, text)
    print(f"t_end={o['t_end']} steps={traj.steps} mass_drift={traj.mass_drift:.3e}")
    return EXIT_OK


def cmd_transform(cfg: RunConfig, k, mapper) -> int:
    o = cfg.options
    p = _load_profile(o["profile"])
    qgrid = tr.QGrid.dense() if o["dense"] else tr.QGrid.default()
    curve = tr.q_transform(p, qgrid, k)
    est = tr.locate_singularity(p, k)
    atomic_write_text(Path(o["out"]), curve.to_csv())
    atomic_write_text(Path(o["singularity_out"]), est.to_json())
    print(f"q_star={est.q_star:.9g} rate_check={est.rate_check:.3g} complete={est.complete}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, k, mapper) -> int:
    o = cfg.options
    if o["profile"]:
        p = _load_profile(o["profile"])
    else:
        res = _solve(cfg, k, mapper)
        if not res.converged:
            print(f"solver did not converge: {res.message}", file=sys.stderr)
            return EXIT_NUMERICAL
        p = res.profile
    report = vf.run_estimates(p, k)
    try:
        pu = tr.rescale_to_unit_singularity(normalize_mass(p), k)
        report.add(vf.check_g_estimates(pu, alpha=k.alpha or 1.0 / 3.0))
    except CoagError as exc:
        report.add([vf.Entry("g_estimates", f"skipped: {exc}", math.nan)])
    atomic_write_text(Path(o["out"]), report.to_json())
    print(f"checks={len(report.entries)} failures={report.failures()}")
    return EXIT_OK


def cmd_contract(cfg: RunConfig, k, mapper) -> int:
    o = cfg.options
    p1, p2 = (normalize_mass(_load_profile(s)) for s in o["seeds"])
    ratio = vf.contraction_probe(k, p1, p2, mode=o["mode"])
    print(f"ratio={ratio:.6g}")
    if o["out"]:
        data = {"kernel": k.label, "seeds": list(o["seeds"]), "mode": o["mode"], "ratio": ratio}
        atomic_write_text(Path(o["out"]), json.dumps(data, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_scan(cfg: RunConfig, k, mapper) -> int:
    o = cfg.options
    try:
        eps = [float(v) for v in o["eps"].split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --eps list {o['eps']!r}") from None
    if not eps:
        raise UsageError("--eps is empty")
    rows = vf.qclose_scan(eps, alpha=o["alpha"], seed=o["seed"], mapper=mapper)
    atomic_write_text(Path(o["out"]), vf.scan_to_csv(rows))
    for r in rows:
        print(f"eps={r.eps:g} delta={r.delta:.6g} delta_sup={r.delta_sup:.6g} converged={r.converged}")
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NUMERICAL


COMMANDS = {
    "solve": cmd_solve,
    "evolve": cmd_evolve,
    "transform": cmd_transform,
    "verify": cmd_verify,
    "contract": cmd_contract,
    "scan": cmd_scan,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse(argv)
        _check_writable(cfg.outputs)
        k = _kernel(cfg.options["kernel"])
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"coagself: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    threads = cfg.options.get("threads", 1)
    with ExitStack() as stack:
        # BLAS stays single-threaded so results are bitwise independent of --threads
        stack.enter_context(threadpool_limits(limits=1))
        mapper = map
        if threads > 1:
            mapper = stack.enter_context(ThreadPoolExecutor(max_workers=threads)).map
        try:
            return COMMANDS[cfg.command](cfg, k, mapper)
        except UsageError as exc:
            print(f"coagself: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (CoagError, FloatingPointError) as exc:
            print(f"coagself: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

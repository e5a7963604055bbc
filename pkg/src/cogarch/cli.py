"""Command line front end: ``cogarch simulate | converge | estimate``.

Settings come from flags, then an optional INI config file (``--config``,
keys in a ``[run]`` section named like the long flags with dashes replaced
by underscores), then built-in defaults.

Exit codes: 0 success, 1 criterion not met (study failed or the optimizer
did not converge; outputs are still written), 2 usage or input error,
3 numerical or feasibility failure.

Seeding: ``simulate`` draws its noise from ``seed``; ``converge`` uses seeds
``seed, seed + 1, ...``, one compound Poisson path per seed shared by every
mesh; ``estimate`` draws multistart jitter from ``SeedSequence([seed, 1])``.
"""

import argparse
import configparser
import hashlib
import json
import os
import sys

import numpy as np

from .convergence import convergence_study
from .estimation import estimate, read_series_csv
from .exceptions import CogarchError, DomainError, InfeasibleStartError, InvalidOrderError
from .levy import (
    CompoundPoissonSpec,
    Grid,
    NormalJumps,
    TruncationSchedule,
    TwoPointJumps,
    first_jump_innovations,
    levy_moments,
    sample_jump_path,
    truncation_sequence,
)
from .simulator import CogarchSpec, simulate_discrete, simulate_exact, stationarity_check, write_path_csv

EXIT_OK, EXIT_CRITERION, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "q": None,
    "p": None,
    "a": [0.038],
    "b": [0.053],
    "alpha0": 0.04,
    "rate": 1.0,
    "jump_dist": "normal",
    "jump_mean": 0.0,
    "jump_sd": 1.0,
    "x1": -1.0,
    "p1": 0.5,
    "x2": 1.0,
    "T": 10.0,
    "dt": 0.1,
    "knots": None,
    "c": 0.5,
    "gamma": 0.5,
    "seed": 0,
    "out": ".",
    "kind": "both",
    "validate": False,
    "meshes": [0.2, 0.1, 0.05, 0.025],
    "seeds": 50,
    "max_knots": 64,
    "iterations": 200,
    "data": None,
    "orders": [1, 1],
    "starts": 5,
    "max_iter": 2000,
    "tol": 1e-8,
    "mu": 1.0,
    "el1sq": 1.0,
}

_LIST_KEYS = {"a": float, "b": float, "meshes": float, "orders": int}
_SCALAR_TYPES = {
    "q": int, "p": int, "alpha0": float, "rate": float, "jump_dist": str, "jump_mean": float, "jump_sd": float,
    "x1": float, "p1": float, "x2": float, "T": float, "dt": float, "knots": str, "c": float, "gamma": float,
    "seed": int, "out": str, "kind": str, "seeds": int, "max_knots": int, "iterations": int, "data": str,
    "starts": int, "max_iter": int, "tol": float, "mu": float, "el1sq": float,
}


class UsageError(Exception):
    pass


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--q", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--a", type=float, nargs="+", help="a_1 ... a_p")
    g.add_argument("--b", type=float, nargs="+", help="b_1 ... b_q")
    g.add_argument("--alpha0", type=float)


def _add_noise_args(p):
    g = p.add_argument_group("noise")
    g.add_argument("--lambda", dest="rate", type=float, help="jump rate")
    g.add_argument("--jump-dist", choices=["normal", "twopoint"])
    g.add_argument("--jump-mean", type=float)
    g.add_argument("--jump-sd", type=float)
    g.add_argument("--x1", type=float)
    g.add_argument("--p1", type=float)
    g.add_argument("--x2", type=float)
    g.add_argument("--T", type=float, help="horizon")
    g.add_argument("--c", type=float, help="truncation schedule scale")
    g.add_argument("--gamma", type=float, help="truncation schedule decay")


def build_parser():
    parser = argparse.ArgumentParser(prog="cogarch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate exact and discrete paths")
    _add_model_args(sim)
    _add_noise_args(sim)
    sim.add_argument("--dt", type=float, help="uniform grid spacing")
    sim.add_argument("--knots", help="file with one grid time per line (overrides --dt)")
    sim.add_argument("--kind", choices=["exact", "discrete", "both"])
    sim.add_argument("--validate", action="store_true", default=None,
                     help="re-read the CSVs and check V = alpha0 + a'Y row-wise")

    conv = sub.add_parser("converge", help="mesh-refinement convergence study")
    _add_model_args(conv)
    _add_noise_args(conv)
    conv.add_argument("--meshes", type=float, nargs="+")
    conv.add_argument("--seeds", type=int, help="number of seeds")
    conv.add_argument("--max-knots", type=int)
    conv.add_argument("--iterations", type=int)

    est = sub.add_parser("estimate", help="pseudo-maximum-likelihood fit")
    est.add_argument("--data", help="CSV with header time,dG or time,level")
    est.add_argument("data_pos", nargs="?", metavar="DATA")
    est.add_argument("--orders", type=int, nargs=2, metavar=("P", "Q"))
    est.add_argument("--starts", type=int)
    est.add_argument("--max-iter", type=int)
    est.add_argument("--tol", type=float)
    est.add_argument("--mu", type=float)
    est.add_argument("--el1sq", type=float)

    for p in (sim, conv, est):
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--config", help="INI config file with a [run] section")
    return parser


def _read_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config: {exc}") from None
    if "run" not in cp:
        return {}
    out = {}
    for key, raw in cp["run"].items():
        key = key.replace("-", "_")
        if key == "lambda":
            key = "rate"
        try:
            if key in _LIST_KEYS:
                out[key] = [_LIST_KEYS[key](x) for x in raw.replace(",", " ").split()]
            elif key == "validate":
                out[key] = cp["run"].getboolean(key)
            elif key in _SCALAR_TYPES:
                out[key] = _SCALAR_TYPES[key](raw)
            else:
                raise UsageError(f"unknown config key {key!r}")
        except ValueError:
            raise UsageError(f"bad value for config key {key!r}: {raw!r}") from None
    return out


def resolve_config(args):
    """Merge flags over config-file values over defaults."""
    cfg = dict(DEFAULTS)
    cfg.update(_read_config(getattr(args, "config", None)))
    for key, value in vars(args).items():
        if key in ("config", "data_pos") or value is None:
            continue
        cfg[key] = value
    if getattr(args, "data_pos", None) is not None and getattr(args, "data", None) is None:
        cfg["data"] = args.data_pos
    cfg["command"] = args.command
    return cfg


def _model_from(cfg):
    b = cfg["b"]
    if cfg["q"] is not None and cfg["q"] != len(b):
        raise UsageError(f"--q {cfg['q']} does not match {len(b)} b coefficients")
    try:
        return CogarchSpec(cfg["a"], b, cfg["alpha0"], p=cfg["p"])
    except (InvalidOrderError, DomainError) as exc:
        raise UsageError(str(exc)) from None


def _noise_from(cfg):
    try:
        if cfg["jump_dist"] == "normal":
            jumps = NormalJumps(cfg["jump_mean"], cfg["jump_sd"])
        else:
            jumps = TwoPointJumps(cfg["x1"], cfg["p1"], cfg["x2"])
        return CompoundPoissonSpec(cfg["rate"], jumps)
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _schedule_from(cfg):
    try:
        return TruncationSchedule(cfg["c"], cfg["gamma"])
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _grid_from(cfg):
    if cfg["knots"]:
        if not os.path.exists(cfg["knots"]):
            raise UsageError(f"knots file not found: {cfg['knots']}")
        try:
            knots = np.loadtxt(cfg["knots"], ndmin=1)
            return Grid(knots)
        except (ValueError, DomainError) as exc:
            raise UsageError(f"bad knots file: {exc}") from None
    try:
        return Grid.uniform(cfg["T"], cfg["dt"])
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _dump_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def _sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _check_identity_csv(path, spec):
    data = np.genfromtxt(path, delimiter=",", names=True)
    Y = np.column_stack([data[f"Y{k + 1}"] for k in range(spec.q)])
    resid = np.abs(data["V"] - spec.variance(Y))
    return float(np.max(resid))


def cmd_simulate(cfg):
    spec = _model_from(cfg)
    noise_spec = _noise_from(cfg)
    schedule = _schedule_from(cfg)
    grid = _grid_from(cfg)
    mu = levy_moments(noise_spec)["mu_second"]
    report = stationarity_check(spec, mu)
    if not report.ok:
        print("stationarity check failed: " + "; ".join(report.reasons), file=sys.stderr)
        return EXIT_NUMERIC
    T = grid.horizon
    cfg["T"] = T
    noise = sample_jump_path(noise_spec, T, cfg["seed"])
    os.makedirs(cfg["out"], exist_ok=True)
    files = {}
    paths = {}
    if cfg["kind"] in ("exact", "both"):
        paths["exact"] = simulate_exact(spec, noise, grid, mu=mu, check=False)
    m = truncation_sequence(grid.n_cells, schedule)
    if cfg["kind"] in ("discrete", "both"):
        innov = first_jump_innovations(noise, grid, m, noise_spec)
        paths["discrete"] = simulate_discrete(spec, innov, mu=mu)
    for kind, path in paths.items():
        fname = os.path.join(cfg["out"], f"{kind}.csv")
        files[f"{kind}.csv"] = _sha256(write_path_csv(path, fname))
    manifest = {
        "command": "simulate",
        "config": cfg,
        "seed": cfg["seed"],
        "spec": spec.to_dict(),
        "noise": noise_spec.to_dict(),
        "mesh": grid.mesh,
        "n_knots": int(grid.knots.size),
        "n_jumps": len(noise),
        "threshold": m,
        "checksums": files,
    }
    if cfg["validate"]:
        resid = {kind: _check_identity_csv(os.path.join(cfg["out"], f"{kind}.csv"), spec) for kind in paths}
        manifest["validation"] = {k: {"max_abs_residual": v, "ok": v <= 1e-10 * max(1.0, spec.alpha0)}
                                  for k, v in resid.items()}
        if not all(v["ok"] for v in manifest["validation"].values()):
            _dump_json(manifest, os.path.join(cfg["out"], "manifest.json"))
            print("validation failed: V != alpha0 + a'Y", file=sys.stderr)
            return EXIT_NUMERIC
    _dump_json(manifest, os.path.join(cfg["out"], "manifest.json"))
    return EXIT_OK


def cmd_converge(cfg):
    meshes = cfg["meshes"]
    if len(meshes) < 3:
        raise UsageError("need at least 3 meshes")
    if any(b >= a for a, b in zip(meshes, meshes[1:])):
        raise UsageError("meshes must be strictly decreasing")
    if cfg["seeds"] < 20:
        raise UsageError("need at least 20 seeds")
    spec = _model_from(cfg)
    noise_spec = _noise_from(cfg)
    schedule = _schedule_from(cfg)
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["seeds"]))
    report = convergence_study(spec, noise_spec, cfg["T"], meshes, seeds, schedule,
                               max_knots=cfg["max_knots"], iterations=cfg["iterations"])
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "distances.csv"), "w", newline="") as fh:
        fh.write(report.to_csv())
    summary = report.summary()
    summary.update({"command": "converge", "config": cfg, "seed": cfg["seed"], "seeds": seeds,
                    "spec": spec.to_dict(), "noise": noise_spec.to_dict()})
    _dump_json(summary, os.path.join(cfg["out"], "summary.json"))
    return EXIT_OK if report.passed else EXIT_CRITERION


def cmd_estimate(cfg):
    if not cfg["data"]:
        raise UsageError("no data file given")
    if not os.path.exists(cfg["data"]):
        raise UsageError(f"data file not found: {cfg['data']}")
    try:
        series = read_series_csv(cfg["data"])
    except DomainError as exc:
        raise UsageError(f"{cfg['data']}: {exc}") from None
    orders = tuple(cfg["orders"])
    try:
        result = estimate(series, orders, n_starts=cfg["starts"], max_iter=cfg["max_iter"], tol=cfg["tol"],
                          mu=cfg["mu"], EL1sq=cfg["el1sq"], seed=cfg["seed"])
    except (InvalidOrderError, DomainError) as exc:
        raise UsageError(str(exc)) from None
    out = result.to_dict()
    out.update({"command": "estimate", "config": cfg, "n_observations": len(series)})
    os.makedirs(cfg["out"], exist_ok=True)
    _dump_json(out, os.path.join(cfg["out"], "estimate.json"))
    return EXIT_OK if result.converged else EXIT_CRITERION


COMMANDS = {"simulate": cmd_simulate, "converge": cmd_converge, "estimate": cmd_estimate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"cogarch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleStartError as exc:
        print(f"cogarch {args.command}: infeasible: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CogarchError as exc:
        print(f"cogarch {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Commands: ``simulate`` (JSON Lines of trajectory records), ``verify`` (CSV
acceptance report), ``estimate`` (scale constants as JSON) and ``oracle``
(exact small-chain computations as JSON). Every run writes a manifest with
the resolved configuration, thresholds, library versions and wall-clock
time; passing that manifest back through ``--config`` repeats the run.

Exit codes: 0 success, 1 suite failure, 2 usage error, 3 event cap reached.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone

import numba
import numpy as np
import scipy

from . import __version__, estimators, oracle
from .config import THRESHOLDS, RunConfig, packing_feasible
from .engine import ParticleConfig, StopRule, random_scattered, run_replicas
from .errors import CapacityError, EventCapExceeded, InsufficientSamples
from .lattice import TorusGeometry
from .suites import SUITES, SuiteOptions, rows_to_csv, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3

METHOD_ALIASES = {"exact": "exact_solve", "exact_solve": "exact_solve", "spectral": "spectral",
                  "mc": "monte_carlo", "monte_carlo": "monte_carlo"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


def _common(parser: argparse.ArgumentParser) -> None:
    # defaults are None so that only flags actually given override the config file
    parser.add_argument("--config", help="JSON config (or a manifest from an earlier run)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--d", type=int)
    parser.add_argument("--N", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out", help="output file (default: stdout); the manifest goes to OUT.manifest.json")


def _sim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--initial", choices=["full", "scattered", "pair", "explicit"])
    parser.add_argument("--n", type=int, help="particles for a scattered start")
    parser.add_argument("--a", type=float, help="minimum distance for a scattered start (default a_N)")
    parser.add_argument("--delta", type=int, nargs="+", help="pair offset (default e_1)")
    parser.add_argument("--sites", help="explicit start as JSON list of coordinate lists")
    parser.add_argument("--stop", choices=["full_coalescence", "reach_count", "reach_time"])
    parser.add_argument("--stop-value", type=float, dest="stop_value")
    parser.add_argument("--max-events", type=int, dest="max_events")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        raw = raw.get("config", raw)
    try:
        cfg = RunConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    overrides = {}
    for key in ("seed", "replicas", "d", "N", "workers", "initial", "n", "a", "delta",
                "stop", "stop_value", "max_events", "method"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "sites", None):
        overrides["sites"] = json.loads(args.sites)
    cfg = replace(cfg, **overrides)
    if cfg.method in METHOD_ALIASES:
        cfg = replace(cfg, method=METHOD_ALIASES[cfg.method])
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _versions() -> dict:
    return {"coalescing_walks": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(command: list[str], cfg: RunConfig, out: str | None, payload: bytes, started: float) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "thresholds": THRESHOLDS.to_dict(),
        "versions": _versions(),
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
        "output": out,
        "output_sha256": hashlib.sha256(payload).hexdigest(),
    }
    text = json.dumps(manifest, indent=2, sort_keys=True)
    if out:
        with open(out + ".manifest.json", "w") as fh:
            fh.write(text + "\n")
    else:
        print(text, file=sys.stderr)


def _emit(text: str, out: str | None) -> bytes:
    payload = text.encode()
    if out:
        with open(out, "wb") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
    return payload


# --------------------------------------------------------------------------
# commands


def initial_condition(cfg: RunConfig):
    """A fixed configuration, or a factory drawing a fresh one per replica."""
    g = TorusGeometry(cfg.d, cfg.N)
    if cfg.initial == "full":
        return ParticleConfig.full(g)
    if cfg.initial == "pair":
        delta = tuple(cfg.delta) if cfg.delta else g.unit(0)
        if g.index(delta) == 0:
            raise UsageError("pair offset must be nonzero on the torus")
        return ParticleConfig.from_sites(g, [g.point([0] * g.d), g.point(delta)])
    if cfg.initial == "explicit":
        try:
            return ParticleConfig.from_sites(g, [tuple(s) for s in cfg.sites])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    a = cfg.a if cfg.a is not None else estimators.choose_aN(g)
    if not packing_feasible(cfg.d, cfg.N, cfg.n, a):
        raise UsageError(f"{cfg.n} points at mutual distance {a} do not fit in the torus")
    try:
        # rejection sampling can still fail on tight packings; find out before the run
        random_scattered(g, cfg.n, a, np.random.default_rng(cfg.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return lambda rng: random_scattered(g, cfg.n, a, rng)


def stop_rule(cfg: RunConfig) -> StopRule:
    if cfg.stop == "reach_count":
        return StopRule.reach_count(int(cfg.stop_value))
    if cfg.stop == "reach_time":
        return StopRule.reach_time(cfg.stop_value)
    return StopRule.full_coalescence()


def cmd_simulate(cfg: RunConfig, out: str | None) -> tuple[int, bytes]:
    start = initial_condition(cfg)
    stop = stop_rule(cfg)
    n0 = cfg.n if callable(start) else start.count
    try:
        stop.bounds(n0)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    recs = run_replicas(start, stop, cfg.seed, cfg.replicas or 10, cfg.workers, cfg.max_events)
    return EXIT_OK, _emit("".join(r.to_json() + "\n" for r in recs), out)


def cmd_verify(suite: str, cfg: RunConfig, out: str | None) -> tuple[int, bytes]:
    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    opts = SuiteOptions(seed=cfg.seed, replicas=cfg.replicas, workers=cfg.workers)
    try:
        rows = run_suite(suite, opts)
    except InsufficientSamples as exc:
        raise UsageError(str(exc)) from exc
    code = EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL
    return code, _emit(rows_to_csv(rows), out)


def cmd_estimate(what: str, cfg: RunConfig, out: str | None) -> tuple[int, bytes]:
    if what == "vd":
        if cfg.d < 3:
            raise UsageError("v_d is defined for d >= 3 only (the walk is recurrent in d = 2)")
        walks = cfg.replicas or 400_000
        est = estimators.estimate_escape(cfg.d, walks=walks, seed=cfg.seed, workers=cfg.workers)
        report = {"d": cfg.d, "value": est.value, "se": est.se, "radii": list(est.radii),
                  "estimates": list(est.estimates), "ses": list(est.ses),
                  "stage_walks": list(est.stage_walks),
                  "note": "no return before leaving the ball of the largest radius; bias O(1/R)"}
    else:
        g = TorusGeometry(cfg.d, cfg.N)
        try:
            rep = estimators.estimate_theta(g, cfg.method, replicas=cfg.replicas or 10_000,
                                            seed=cfg.seed, workers=cfg.workers)
        except CapacityError as exc:
            raise UsageError(f"{exc}; use --method spectral") from exc
        report = rep.to_dict()
    return EXIT_OK, _emit(json.dumps(report, sort_keys=True) + "\n", out)


def cmd_oracle(op: str, cfg: RunConfig, args: argparse.Namespace, out: str | None) -> tuple[int, bytes]:
    g = TorusGeometry(cfg.d, cfg.N)
    params = {"d": cfg.d, "N": cfg.N}
    residual = None
    try:
        if op == "theta":
            value, residual = oracle.theta_exact(g)
        elif op == "adjacency_sum":
            params["n"] = args.n or 2
            value = oracle.lem9_sum(g, params["n"])
        elif op == "meeting":
            delta = tuple(args.delta) if args.delta else g.unit(0)
            params["delta"] = list(delta)
            res = oracle.meeting_times(g)
            value, residual = float(res.values[g.index(delta)]), res.residual
        else:
            delta = tuple(args.delta) if args.delta else g.unit(0)
            times = args.times or [oracle.theta_exact(g)[0]]
            params.update(delta=list(delta), times=list(times))
            value = oracle.pair_coalescence_law(g, [g.point([0] * g.d), g.point(delta)], times).tolist()
    except CapacityError as exc:
        raise UsageError(str(exc)) from exc
    record = {"operation": op, "parameters": params, "value": value, "residual": residual}
    return EXIT_OK, _emit(json.dumps(record, sort_keys=True) + "\n", out)


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coalescing-walks",
                                     description="Coalescing random walks on the torus and Kingman's coalescent")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run replicas and emit JSON Lines records")
    _common(p)
    _sim_flags(p)

    p = sub.add_parser("verify", help="run an acceptance suite and emit a CSV report")
    p.add_argument("suite", help=f"one of {', '.join(SUITES)}, or 'list'")
    _common(p)

    p = sub.add_parser("estimate", help="estimate theta_N or v_d")
    p.add_argument("what", choices=["theta", "vd"])
    p.add_argument("--method", choices=sorted(METHOD_ALIASES))
    _common(p)

    p = sub.add_parser("oracle", help="exact computations on small chains")
    p.add_argument("op", choices=["theta", "adjacency_sum", "meeting", "pair_law"])
    p.add_argument("--n", type=int, choices=[2, 3])
    p.add_argument("--delta", type=int, nargs="+")
    p.add_argument("--times", type=float, nargs="+", help="natural times for pair_law (default theta_N)")
    _common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify" and args.suite == "list":
        print("\n".join(SUITES))
        return EXIT_OK
    started = time.time()
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            command = ["simulate"]
            code, payload = cmd_simulate(cfg, args.out)
        elif args.command == "verify":
            command = ["verify", args.suite]
            code, payload = cmd_verify(args.suite, cfg, args.out)
        elif args.command == "estimate":
            command = ["estimate", args.what]
            code, payload = cmd_estimate(args.what, cfg, args.out)
        else:
            command = ["oracle", args.op]
            code, payload = cmd_oracle(args.op, cfg, args, args.out)
    except UsageError as exc:
        print(f"coalescing-walks: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EventCapExceeded as exc:
        print(f"coalescing-walks: event cap reached: {exc}", file=sys.stderr)
        return EXIT_CAP
    write_manifest(command, cfg, args.out, payload, started)
    return code


if __name__ == "__main__":
    sys.exit(main())

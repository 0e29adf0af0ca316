"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 tolerance breach in a check command.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ancestral as anc
from . import diffusion as dif
from . import dualities as dua
from . import generators as gen
from . import graphical as gr
from . import haldane as hal
from .ctmc import default_threads, parallel_map, stationary
from .generators import label_str
from .params import (
    FTW,
    ModelParams,
    ParamError,
    SelectionSpec,
    effective_branching_rate,
    load_diffusion_params,
    load_params,
    validate,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_TOLERANCE = 3

DEFAULT_TOLS = {
    "factorial": 1e-10,
    "ytilde": 1e-10,
    "siegmund": 1e-10,
    "conjugation": 1e-12,
    "descendant": 1e-10,
    "diffusion": 2e-3,
    "hinf": 1e-10,
    "simulate": 4.0,
}

FIG7_DEFAULT = {
    "N": 10000,
    "nu0": 0.005,
    "configs": [
        {"label": "genic", "rates": [[1, 0.005]]},
        {"label": "order3", "rates": [[3, 0.005 / 3]]},
        {"label": "mixture", "rates": [[1, 0.0025], [3, 0.005 / 6]]},
    ],
}


class CliError(Exception):
    """Invalid invocation; reported on stderr with exit code 2."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


def _csv(header: str, rows: Sequence[Sequence]) -> str:
    return "\n".join([header] + [",".join(str(c) for c in r) for r in rows]) + "\n"


def _require_file(path: str | None, flag: str) -> Path:
    if path is None:
        raise CliError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{flag}: file not found: {p}")
    return p


def _params(args) -> ModelParams:
    return load_params(_require_file(args.params, "--params"))


def _dparams(args):
    return load_diffusion_params(_require_file(args.dparams, "--dparams"))


def _tol(args, key: str) -> float:
    return DEFAULT_TOLS[key] if args.tol is None else args.tol


def _threads(args) -> int:
    return default_threads() if args.threads is None else max(1, args.threads)


def _grid(spec: str) -> list[float]:
    """Comma list, or lo:hi:n for n log-spaced points."""
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            return [float(x) for x in np.geomspace(float(lo), float(hi), int(n))]
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"cannot parse grid {spec!r}") from exc


# ---------------------------------------------------------------------------
# Subcommands


def cmd_stationary(args) -> int:
    p = _params(args)
    if args.process == "Y":
        dist = stationary(gen.build_Q_Y_ftw(p))
    elif args.process == "L":
        dist = stationary(gen.build_Q_L(p))
    else:
        if p.u > 0:
            raise CliError("R is absorbed in {0, DELTA} when u > 0; it has a stationary law only for u = 0")
        dist = stationary(gen.build_Q_R(p), closed_class=range(1, p.N + 1))
    _emit(dist.to_csv(), args.out)
    return EXIT_OK


def cmd_hinf(args) -> int:
    p = _params(args)
    routes = {
        "recursion": anc.h_inf_via_recursion,
        "pld": anc.h_inf_via_L,
        "ytilde": anc.h_inf_via_Ytilde,
    }
    names = list(routes) if args.method == "all" else [args.method]
    hs = {name: routes[name](p).h for name in names}
    k = range(p.N + 1)
    if args.method != "all":
        _emit(_csv("k,h_inf", [(i, _fmt(hs[args.method][i])) for i in k]), args.out)
        return EXIT_OK
    gap = max(float(np.max(np.abs(hs[a] - hs[b]))) for a in names for b in names if a < b)
    _emit(_csv("k," + ",".join(names), [(i, *(_fmt(hs[n][i]) for n in names)) for i in k]), args.out)
    tol = _tol(args, "hinf")
    print(f"max pairwise discrepancy {gap:.3e} (tol {tol:.1e})", file=sys.stderr)
    return EXIT_OK if gap <= tol else EXIT_TOLERANCE


def cmd_hr(args) -> int:
    p = _params(args)
    if args.r < 0:
        raise CliError("--r must be non-negative")
    h = anc.h_r_via_L(p, args.r).h
    _emit(_csv("k,h_r", [(i, _fmt(h[i])) for i in range(p.N + 1)]), args.out)
    return EXIT_OK


def cmd_duality(args) -> int:
    which = args.which
    if which == "diffusion":
        rep = dif.check_diffusion_duality(_dparams(args), n_max=args.n_max)
    else:
        p = _params(args)
        if which == "conjugation":
            rep = dua.check_conjugation(p, exact=True)
        else:
            if args.t is None or args.t < 0:
                raise CliError("--t must be given and non-negative")
            fn = {
                "factorial": dua.check_factorial_duality,
                "ytilde": dua.check_ytilde_L_duality,
                "siegmund": dua.check_siegmund_duality,
                "descendant": dua.check_descendant_equality,
            }[which]
            rep = fn(p, args.t)
    _emit(rep.to_json() + "\n", args.out)
    tol = _tol(args, which)
    print(f"{which}: max |residual| {rep.max_abs_residual:.3e} (tol {tol:.1e})", file=sys.stderr)
    return EXIT_OK if rep.passed(tol) else EXIT_TOLERANCE


def _fig7_configs(args) -> tuple[int, float, list[tuple[str, dict]]]:
    if args.configs is None:
        raw = FIG7_DEFAULT
    else:
        raw = json.loads(_require_file(args.configs, "--configs").read_text())
    try:
        N, nu0 = int(raw["N"]), float(raw["nu0"])
        configs = [(str(c["label"]), {int(m): float(r) for m, r in c["rates"]}) for c in raw["configs"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed fig7 config: {exc}") from exc
    bs = [effective_branching_rate(rates) for _, rates in configs]
    if not configs or any(not math.isclose(b, bs[0], rel_tol=1e-9) for b in bs):
        raise CliError(f"fig7 configs must share one effective branching rate, got {bs}")
    return N, nu0, configs


def fig7_rows(N: int, nu0: float, configs: list[tuple[str, dict]], ugrid: Sequence[float],
              threads: int = 1) -> list[tuple[float, float, float, str]]:
    """(u/b, mean unfit, mean unfit ancestor, label) for every config and grid point."""
    jobs = []
    for label, rates in configs:
        b = effective_branching_rate(rates)
        for x in ugrid:
            jobs.append((label, x, validate(ModelParams(N, x * b, nu0, SelectionSpec(FTW, rates)))))
    vals = parallel_map(lambda job: anc.fig7_point(job[2]), jobs, threads)
    return [(x, mu, mh, label) for (label, x, _), (mu, mh) in zip(jobs, vals)]


def cmd_fig7(args) -> int:
    N, nu0, configs = _fig7_configs(args)
    ugrid = _grid(args.ugrid)
    if not ugrid or min(ugrid) <= 0:
        raise CliError("--ugrid needs positive values")
    rows = fig7_rows(N, nu0, configs, ugrid, _threads(args))
    text = _csv("u_over_b,mean_unfit,mean_unfit_ancestor,config_label",
                [(_fmt(x), _fmt(a), _fmt(b), lab) for x, a, b, lab in rows])
    _emit(text, args.out)
    return EXIT_OK


def cmd_haldane(args) -> int:
    try:
        N_list = [int(float(x)) for x in args.N_list.split(",")]
    except ValueError as exc:
        raise CliError(f"cannot parse --N-list {args.N_list!r}") from exc
    try:
        rows = hal.haldane_scan(args.sigma, args.m, args.alpha, N_list)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    _emit(_csv("N,p_fix,haldane_prediction,ratio",
               [(r.N, _fmt(r.p_fix), _fmt(r.haldane_prediction), _fmt(r.ratio)) for r in rows]), args.out)
    return EXIT_OK


def cmd_diffusion_hinf(args) -> int:
    dp = _dparams(args)
    y = _grid(args.ygrid)
    h = dif.h_inf_diffusion(dp, y, args.n_max)
    _emit(_csv("y,h_inf", [(_fmt(a), _fmt(b)) for a, b in zip(y, h)]), args.out)
    return EXIT_OK


def _parse_state(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise CliError(f"cannot parse --start {text!r}") from exc


def cmd_simulate(args) -> int:
    p = _params(args)
    if args.replicates < 1 or args.horizon <= 0:
        raise CliError("--replicates must be positive and --horizon must be positive")
    start = _parse_state(args.start)
    threads = _threads(args)
    if args.extract == "R":
        (n,) = start
        if not 1 <= n <= p.N:
            raise CliError(f"R start must lie in [1, {p.N}]")
        obs = gr.first_jump_R(p, n, args.replicates, args.seed, args.horizon, threads)
        row = gr.generator_row(gen.build_Q_R(p), n)
        targets = obs[obs != -2]
    elif args.extract == "L":
        (n,) = start
        if not 1 <= n <= p.N:
            raise CliError(f"L state must lie in [1, {p.N}]")
        obs = gr.next_jump_L(p, n, args.replicates, args.seed, args.horizon, threads)
        row = gr.generator_row(gen.build_Q_L(p), n)
        targets = obs[obs != -2]
    else:
        if len(start) != 3:
            raise CliError("descendant start must be k,d,b")
        k, d, b = start
        if not (0 <= d <= k <= p.N and 0 <= b <= p.N - k):
            raise CliError(f"invalid descendant state {start}")
        obs = gr.first_jump_descendant(p, start, args.replicates, args.seed, args.horizon, threads)
        row = gr.generator_row(gen.build_Q_descendant(p), start)
        targets = [tuple(r) for r in obs[obs[:, 0] != -2]]
    if len(targets) == 0:
        raise CliError("no jump observed; increase --horizon or --replicates")
    table = gr.compare_jump_law(targets, row)
    _emit(_csv("target,count,empirical,generator,z",
               [(label_str(r.target), r.count, _fmt(r.empirical), _fmt(r.generator), _fmt(r.z)) for r in table]),
          args.out)
    worst = max(abs(r.z) for r in table)
    tol = _tol(args, "simulate")
    print(f"{args.extract}: {len(targets)} jumps, max |z| {worst:.2f} (bound {tol})", file=sys.stderr)
    return EXIT_OK if worst <= tol else EXIT_TOLERANCE


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="model parameter JSON file")
    common.add_argument("--dparams", help="diffusion parameter JSON file")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--tol", type=float, help="tolerance for check commands")
    common.add_argument("--threads", type=int, help="worker count (default MORAN_ASG_THREADS or CPU count)")

    ap = argparse.ArgumentParser(prog="moran-asg", description="Moran model ancestral structures")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stationary", parents=[common], help="stationary law of Y, R or L")
    s.add_argument("--process", choices=["Y", "R", "L"], default="Y")
    s.set_defaults(func=cmd_stationary)

    s = sub.add_parser("hinf", parents=[common], help="common-ancestor type distribution")
    s.add_argument("--method", choices=["recursion", "pld", "ytilde", "all"], default="recursion")
    s.set_defaults(func=cmd_hinf)

    s = sub.add_parser("hr", parents=[common], help="ancestral type distribution at time r")
    s.add_argument("--r", type=float, required=True)
    s.set_defaults(func=cmd_hr)

    s = sub.add_parser("duality", parents=[common], help="numerical duality checks")
    s.add_argument("--which", required=True,
                   choices=["factorial", "ytilde", "siegmund", "conjugation", "descendant", "diffusion"])
    s.add_argument("--t", type=float)
    s.add_argument("--n-max", type=int, default=dif.DEFAULT_N_MAX)
    s.set_defaults(func=cmd_duality)

    s = sub.add_parser("fig7", parents=[common], help="stationary unfit proportions over a u/b grid")
    s.add_argument("--configs", help="JSON with N, nu0 and a list of {label, rates}")
    s.add_argument("--ugrid", default="0.1:10:41", help="u/b values: comma list or lo:hi:n (log-spaced)")
    s.set_defaults(func=cmd_fig7)

    s = sub.add_parser("haldane", parents=[common], help="fixation probability scan")
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--N-list", dest="N_list", required=True)
    s.set_defaults(func=cmd_haldane)

    s = sub.add_parser("diffusion-hinf", parents=[common], help="diffusion-limit common-ancestor type")
    s.add_argument("--ygrid", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")
    s.add_argument("--n-max", type=int, default=dif.DEFAULT_N_MAX)
    s.set_defaults(func=cmd_diffusion_hinf)

    s = sub.add_parser("simulate", parents=[common], help="graphical Monte Carlo against generator rows")
    s.add_argument("--replicates", type=int, default=100000)
    s.add_argument("--horizon", type=float, default=5.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--extract", choices=["R", "L", "descendant"], default="R")
    s.add_argument("--start", default="1", help="n for R and L, k,d,b for descendant")
    s.set_defaults(func=cmd_simulate)
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except (CliError, ParamError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())

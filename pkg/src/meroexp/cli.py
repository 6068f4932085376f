"""Command line entry point.

Subcommands::

    meroexp run              full pipeline, report + tables
    meroexp verify-localmap  certify the frozen chart radii
    meroexp density          pole statistics of a saved run
    meroexp reconstruct      re-solve reconstruction coefficients of a saved run

Exit codes: 0 success, 2 config error, 3 invariant failure, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import meromorphic_analysis as ma
from . import reconstruction as rc
from .interpolation_solver import BlockPartition
from .local_map import certify_chart, default_chart, sweep_chart
from .pipeline import (EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, ConfigError, ExperimentConfig, StageError,
                       _clean, emit, load_run, report_json, run)
from .stochastic_model import GaussianDraw, Weight

log = logging.getLogger("meroexp")


def _add_run_flags(p):
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--mode", choices=("real", "complex"), default="real")
    p.add_argument("--beta", type=float, default=0.75)
    p.add_argument("--n", type=int, default=2000, help="window half-width N")
    p.add_argument("--t-spacing", type=int, default=100, dest="T", help="block spacing T")
    p.add_argument("--tau", type=float, default=None, help="override the contraction budget")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--gamma1", type=float, default=None)
    p.add_argument("--gamma2", type=float, default=None)
    p.add_argument("--zero-draw", action="store_true", help="use the all-zero coefficient sequence")
    p.add_argument("--no-growth-compare", action="store_true", help="skip the 2N comparison run")


def _add_out_flags(p):
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--tables", action="store_true", help="write CSV tables")
    p.add_argument("--no-mkdir", action="store_true", help="fail if --out does not exist")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meroexp", description="Cauchy kernel interpolation experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline")
    _add_run_flags(p)
    _add_out_flags(p)
    p.add_argument("--verify-only", action="store_true",
                   help="evaluate all gates but write nothing")

    p = sub.add_parser("verify-localmap", help="certify chart radii on a mesh")
    p.add_argument("--mode", choices=("real", "complex"), default="real")
    p.add_argument("--mesh", type=int, default=7)
    p.add_argument("--sweep", action="store_true", help="rerun the geometric radius sweep")
    p.add_argument("--out", type=Path, default=None)

    for name, hlp in (("density", "pole statistics of a saved run"),
                      ("reconstruct", "reconstruction of a saved run")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--run", type=Path, required=True, help="directory holding run.npz")
        _add_out_flags(p)
    return ap


def _config_from(args) -> ExperimentConfig:
    return ExperimentConfig(seed=args.seed, mode=args.mode, beta=args.beta, n=args.n, T=args.T,
                            tau=args.tau, tol=args.tol, max_iter=args.max_iter, gamma1=args.gamma1,
                            gamma2=args.gamma2, zero_draw=args.zero_draw,
                            growth_compare=not args.no_growth_compare)


def _write_json(obj, out: Path | None, name: str, mkdir: bool = True):
    text = json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    if not out.exists():
        if not mkdir:
            raise ConfigError(f"output directory {out} does not exist")
        out.mkdir(parents=True)
    (out / name).write_text(text)


def cmd_run(args) -> int:
    cfg = _config_from(args)
    if args.out is not None and args.no_mkdir and not args.out.is_dir():
        raise ConfigError(f"output directory {args.out} does not exist")
    report = run(cfg)
    if not args.verify_only:
        if args.out is not None:
            emit(report, args.out, with_tables=args.tables, mkdir=not args.no_mkdir)
        else:
            sys.stdout.write(report_json(report))
    failed = [k for k, v in report["gates"].items() if not v]
    if failed:
        log.error("invariant gates failed: %s", ", ".join(failed))
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_verify_localmap(args) -> int:
    chart = default_chart(args.mode)
    cert = sweep_chart(args.mode, mesh=args.mesh) if args.sweep else \
        certify_chart(chart.gamma1, chart.gamma2, mesh=args.mesh, mode=args.mode)
    obj = {"mode": cert.mode, "gamma1": cert.gamma1, "gamma2": cert.gamma2, "passed": cert.passed,
           "checks": cert.checks, "counterexample": cert.counterexample,
           "base": chart.base, "image": chart.image}
    _write_json(obj, args.out, "localmap.json")
    return EXIT_OK if cert.passed else EXIT_INVARIANT


def _load(args):
    path = args.run / "run.npz" if args.run.is_dir() else args.run
    if not path.exists():
        raise ConfigError(f"no saved run at {path}")
    return load_run(path)


def cmd_density(args) -> int:
    d = _load(args)
    N, M = d["n"], d["M"]
    part = BlockPartition(T=d["T"], M=M, S=d["S"].astype(np.int64), n_candidates=d["n_candidates"])
    P = ma.PoleSet.from_kernel_sum(d["F"])
    cfg = d["config"]
    obj = {
        "count": len(P), "window_size": 2 * M + 1, "selected": len(part.S),
        "separation": P.separation, "eps_hat": part.eps_hat,
        "deviation": ma.density_deviation(P, part.eps_hat, N, radii=[N / 4, N / 2, N]),
        "linear_density": ma.linear_density(P, [N / 4, N / 2, N]),
        "bm_proxy": ma.bm_density_proxy(P, cfg.bm_lengths, window=M),
    }
    _write_json(obj, args.out, "density.json", mkdir=not args.no_mkdir)
    if args.tables and args.out is not None:
        t = np.arange(-N, N + 1)
        rows = np.column_stack([t, np.atleast_1d(ma.counting(P, t))])
        np.savetxt(args.out / "counting.csv", rows, fmt="%d", delimiter=",", header="t,n_Q", comments="")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    d = _load(args)
    cfg = d["config"]
    M, N = d["M"], d["n"]
    part = BlockPartition(T=d["T"], M=M, S=d["S"].astype(np.int64), n_candidates=d["n_candidates"])
    draw = GaussianDraw(seed=cfg.seed, mode=cfg.mode, n=N, margin=d["margin"], values=d["values"])
    w = Weight(cfg.beta)
    L = rc.build_lambda(d["F"], part)
    radii = [N / 4, N / 2, N - cfg.buffer, M]
    rec = rc.reconstruct(rc.reconstruction_target(draw, w), L, M, radii)
    obj = {"radii": rec.radii, "errors": rec.errors, "monotone": rec.monotone,
           "aux_mass": rec.aux_mass, "coef_l2": rec.coef_l2, "coef_bound": rec.coef_bound,
           "regularized": rec.regularized}
    _write_json(obj, args.out, "reconstruction.json", mkdir=not args.no_mkdir)
    if args.tables and args.out is not None:
        rows = np.column_stack([rec.radii, rec.errors])
        np.savetxt(args.out / "reconstruction.csv", rows, delimiter=",", header="R,error", comments="")
    return EXIT_OK if rec.monotone else EXIT_INVARIANT


COMMANDS = {"run": cmd_run, "verify-localmap": cmd_verify_localmap,
            "density": cmd_density, "reconstruct": cmd_reconstruct}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except StageError as exc:
        log.error("%s %s", exc, json.dumps(_clean(exc.payload), sort_keys=True))
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

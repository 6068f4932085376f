"""Experiment configuration, the end-to-end pipeline and report emission.

Stages: sample, partition and parameter selection, solve, pole analysis,
canonical product checks, reconstruction. Each stage records its wall time
under ``timings``; everything else in the report is a function of the
config alone.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import cartwright as cw
from . import meromorphic_analysis as ma
from . import reconstruction as rc
from .interpolation_solver import (CauchyKernelSum, InterpolationSystem, MembershipError, SelectionError,
                                   SolverError, assemble_F, interpolation_residuals, lemma_checks,
                                   select_parameters, solve)
from .local_map import default_chart
from .stochastic_model import GaussianDraw, Weight, WeightError, sample, validate_weight

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_SOLVER = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage name and an exit code."""

    def __init__(self, stage, msg, code=EXIT_INVARIANT, payload=None):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage
        self.code = code
        self.payload = payload or {}


@dataclass
class ExperimentConfig:
    seed: int = 1
    mode: str = "real"
    beta: float = 0.75
    n: int = 2000
    T: int = 100
    tau: float | None = None
    tol: float = 1e-12
    max_iter: int = 30
    gamma1: float | None = None
    gamma2: float | None = None
    margin: int = 3
    zero_draw: bool = False
    lemma_pairs: int = 1000
    growth_compare: bool = True
    type_ymax: float = 100.0
    quotient_points: int = 50
    delta_av: float = 0.2
    riesz_sizes: tuple = (200, 400, 800)
    bm_lengths: tuple = (64, 128, 256)
    sanity_cutoff: int = 1_000_000

    def validate(self):
        if self.mode not in ("real", "complex"):
            raise ConfigError(f"mode must be 'real' or 'complex', got {self.mode!r}")
        if self.n < 8:
            raise ConfigError("n must be at least 8")
        if self.T < 3:
            raise ConfigError("T must be at least 3")
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")
        for g in (self.gamma1, self.gamma2):
            if g is not None and not 0 < g < 0.25:
                raise ConfigError("chart radii must lie in (0, 1/4)")
        try:
            validate_weight(Weight(self.beta))
        except WeightError as exc:
            raise ConfigError(str(exc)) from exc
        if self.tau is not None:
            chart = self.chart()
            tau_max = min(chart.gamma1, chart.gamma2) / 4
            if not 0 < self.tau < tau_max:
                raise ConfigError(f"tau must lie in (0, {tau_max:.4g})")
        return self

    @property
    def buffer(self) -> int:
        return int(max(self.T, self.n // 10))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["riesz_sizes"] = list(self.riesz_sizes)
        d["bm_lengths"] = list(self.bm_lengths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        for k in ("riesz_sizes", "bm_lengths"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def chart(self):
        c = default_chart(self.mode)
        kw = {}
        if self.gamma1 is not None:
            kw["gamma1"] = self.gamma1
        if self.gamma2 is not None:
            kw["gamma2"] = self.gamma2
        return replace(c, **kw) if kw else c


@dataclass
class SolvedRun:
    """Everything downstream analysis needs from a solve."""

    config: ExperimentConfig
    draw: GaussianDraw
    K: float
    T: int
    tau: float
    partition: object
    system: InterpolationSystem
    eta: np.ndarray = field(repr=False)
    state: object = None
    F: CauchyKernelSum | None = None
    trials: list = field(default_factory=list)


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(float(x.real)), _clean(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def make_draw(cfg: ExperimentConfig, n: int | None = None) -> GaussianDraw:
    n = cfg.n if n is None else n
    if cfg.zero_draw:
        return GaussianDraw.zeros(n, cfg.mode, cfg.margin)
    return sample(cfg.seed, cfg.mode, n, cfg.margin)


def solve_run(cfg: ExperimentConfig, n: int | None = None, draw: GaussianDraw | None = None) -> SolvedRun:
    w = Weight(cfg.beta)
    chart = cfg.chart()
    draw = draw if draw is not None else make_draw(cfg, n)
    try:
        sel = select_parameters(draw, w, chart, cfg.T, tau=cfg.tau)
    except (SelectionError, ValueError) as exc:
        raise StageError("select_parameters", str(exc), EXIT_INVARIANT) from exc
    try:
        state = solve(sel.eta, sel.system, tol=cfg.tol, max_iter=cfg.max_iter)
    except MembershipError as exc:
        raise StageError("solve", str(exc), EXIT_INVARIANT, {"block": exc.block}) from exc
    except SolverError as exc:
        raise StageError("solve", str(exc), EXIT_SOLVER, exc.trace) from exc
    F = assemble_F(state.alpha, sel.system)
    return SolvedRun(cfg, draw, sel.K, sel.T, sel.tau, sel.partition, sel.system, sel.eta, state, F,
                     sel.trials)


def integer_sanity(cutoff: int) -> dict:
    """Product over the nonzero integers: value at 1/2 and type."""
    k = np.arange(1, cutoff + 1)
    Z = ma.PoleSet.from_points(np.concatenate([-k[::-1], k]))
    v = complex(cw.CanonicalProduct(Z)(np.array([0.5]))[0])
    k = np.arange(1, 100_001)
    Z = ma.PoleSet.from_points(np.concatenate([-k[::-1], k]))
    t = cw.type_estimate(cw.CanonicalProduct(Z).log_abs)
    return {"value_half": v.real, "value_half_error": abs(v - 2 / np.pi),
            "type": t.slope, "type_rel_error": abs(t.slope - np.pi) / np.pi}


def solver_section(run: SolvedRun) -> dict:
    cfg, st = run.config, run.state
    w = Weight(cfg.beta)
    chart = run.system.chart
    steps = np.asarray(st.steps)
    j = np.arange(1, steps.size + 1)
    dominated = bool(np.all(steps <= chart.gamma1 * 2.0 ** -j))
    res = interpolation_residuals(run.F, run.draw, w, cfg.buffer)
    lem = lemma_checks(run.system, run.eta, run.tau, pairs=cfg.lemma_pairs, seed=cfg.seed)
    return {
        "K": run.K, "T": run.T, "tau": run.tau, "gamma1": chart.gamma1, "gamma2": chart.gamma2,
        "trials": run.trials, "iterations": st.iterations, "steps": st.steps, "ratios": st.ratios,
        "max_ratio": max(st.ratios) if st.ratios else 0.0,
        "steps_dominated": dominated, "direct_residual": st.residual,
        "interpolation": res, "lemma": lem, "in_E1": st.in_E1, "in_E2": st.in_E2,
        "selected_blocks": run.partition.S, "candidate_blocks": run.partition.n_candidates,
        "p_hat": run.partition.p_hat, "eps_hat": run.partition.eps_hat,
    }


def pole_section(run: SolvedRun) -> dict:
    cfg = run.config
    P = ma.PoleSet.from_kernel_sum(run.F)
    M = run.draw.half_width
    N = run.draw.n
    size = 2 * M + 1
    eps_hat = run.partition.eps_hat
    dev = ma.density_deviation(P, eps_hat, N, radii=[N / 4, N / 2, N])
    lin = ma.linear_density(P, [N / 4, N / 2, N])
    bm = ma.bm_density_proxy(P, cfg.bm_lengths, window=M)
    return {
        "count": len(P), "window_size": size, "selected": len(run.partition.S),
        "deficit_identity": len(P) == size - len(run.partition.S),
        "zero_residues": int(np.sum(run.F.residues == 0)),
        "separation": P.separation, "eps_hat": eps_hat, "density": 1.0 - eps_hat,
        "deviation": dev, "linear_density": lin, "bm_proxy": bm,
        "bm_proxy_ok": bool(all(p <= 1 - eps_hat / 2 for p in bm["proxy"])),
    }


def growth_section(run: SolvedRun, other: SolvedRun | None) -> dict:
    N = run.draw.n
    kw = dict(x_range=(-N / 2, N / 2), y_range=(-5, 5), nx=N + 1, ny=11)
    g1 = ma.growth_check(run.F, **kw)
    out = {"N": N, "statistic": g1["statistic"], "argmax": g1["argmax"]}
    if other is not None:
        g2 = ma.growth_check(other.F, **kw)
        s1, s2 = g1["statistic"], g2["statistic"]
        ratio = max(s1, s2) / min(s1, s2) if min(s1, s2) > 0 else (1.0 if s1 == s2 else np.inf)
        out.update(statistic_2N=s2, ratio=ratio, within_factor_2=bool(ratio <= 2.0))
    return out


def cartwright_section(run: SolvedRun, rng_seed: int) -> tuple[dict, dict]:
    cfg = run.config
    P = ma.PoleSet.from_kernel_sum(run.F)
    M = run.draw.half_width
    V = cw.completed_product(P, M)
    U = cw.quotient_U(run.F, V)
    tv = cw.type_estimate(V.log_abs, cfg.type_ymax)
    with np.errstate(divide="ignore"):
        tu = cw.type_estimate(lambda z: np.log(np.abs(U(z))), cfg.type_ymax)
    u_zero = not np.all(np.isfinite(tu.log_abs))
    eps_hat = run.partition.eps_hat
    rng = np.random.default_rng(rng_seed)
    inner = run.draw.n - cfg.buffer
    pts = np.floor(rng.uniform(-inner, inner, cfg.quotient_points)) + rng.uniform(0.1, 0.9, cfg.quotient_points)
    q = cw.verify_quotient_identity(run.F, V, pts, M, U)
    sub = range(0, len(P), max(1, len(P) // 100))
    at_i = cw.eval_product(P, np.array([1j]), [M // 4, M // 2, M], half_width=M)
    out = {
        "type_V": tv.slope, "type_V_over_pi": tv.slope / np.pi, "type_V_residual": tv.residual,
        "type_V_target": (1 - eps_hat) * np.pi,
        "type_V_rel_error": abs(tv.slope - (1 - eps_hat) * np.pi) / ((1 - eps_hat) * np.pi),
        "type_U": None if u_zero else tu.slope,
        "type_U_ok": True if u_zero else bool(tu.slope <= tv.slope + 0.05 * np.pi),
        "r0": U.r0, "boundary_gap": U.boundary_gap(sub) if len(P) else 0.0,
        "quotient_identity": q, "product_at_i_cutoff_error": at_i["error"],
        "product_at_i_flag": at_i["flag"], "V_meta": V.metadata,
    }
    table = {"y": tv.y, "log_abs_over_y": tv.log_abs / tv.y}
    return out, table


def reconstruction_section(run: SolvedRun) -> dict:
    cfg = run.config
    w = Weight(cfg.beta)
    L = rc.build_lambda(run.F, run.partition)
    av = rc.avdonin_check(L, delta_av=cfg.delta_av, T=run.T)
    rb = rc.riesz_bounds(L, cfg.riesz_sizes)
    N, M = run.draw.n, run.draw.half_width
    radii = [N / 4, N / 2, N - cfg.buffer, M]
    rec = rc.reconstruct(rc.reconstruction_target(run.draw, w), L, M, radii)
    return {
        "lambda_size": len(L), "aux_points": int(np.sum(~L.is_zero)),
        "max_abs_delta": float(np.max(np.abs(L.deltas))) if len(L) else 0.0,
        "avdonin": {"H": av.H, "delta_av": av.delta_av, "passed": av.passed, "worst_sum": av.worst_sum,
                    "worst_block": av.worst_block, "tried": av.tried},
        "riesz": rb, "riesz_stable": bool(rb["A_spread"] <= 0.2 and rb["B_spread"] <= 0.2),
        "radii": rec.radii, "errors": rec.errors, "monotone": rec.monotone,
        "final_error": rec.errors[-1], "aux_mass": rec.aux_mass, "regularized": rec.regularized,
        "coef_l2": rec.coef_l2, "coef_bound": rec.coef_bound,
        "explicit_expansion_error": rc.explicit_expansion_error(run.F, L, run.draw, w),
    }


def gates(res: dict) -> dict:
    """Hard invariants; any failure makes ``run`` exit with code 3."""
    s, p, c, r = res["solver"], res["poles"], res["cartwright"], res["reconstruction"]
    lem = s["lemma"]
    q = c["quotient_identity"]
    return {
        "winv_lipschitz": lem["winv_lipschitz"] <= 3.0,
        "v_winv_eta": lem["v_winv_eta"] <= s["tau"],
        "v_lipschitz": lem["v_lipschitz_majorant"] <= s["tau"],
        "steps_dominated": s["steps_dominated"],
        "direct_residual": s["direct_residual"] <= 1e-10,
        "interpolation_residual": s["interpolation"]["interior_max"] <= 1e-8,
        "deficit_identity": p["deficit_identity"],
        "separated": p["separation"] > 0,
        "quotient_identity": q["skipped"] or q["max_mismatch"] <= 1e-4,
        "type_U": c["type_U_ok"],
        "avdonin": r["avdonin"]["passed"],
        "reconstruction_monotone": r["monotone"],
    }


def run(cfg: ExperimentConfig) -> dict:
    """Execute the pipeline and return the report dict (timings under ``timings``)."""
    cfg.validate()
    timings = {}
    t0 = time.perf_counter()

    def lap(name):
        nonlocal t0
        t = time.perf_counter()
        timings[name] = t - t0
        t0 = t

    main = solve_run(cfg)
    lap("solve")
    res = {"solver": solver_section(main)}
    lap("solver_checks")
    res["poles"] = pole_section(main)
    lap("poles")
    other = solve_run(cfg, n=2 * cfg.n) if cfg.growth_compare else None
    res["growth"] = growth_section(main, other)
    lap("growth")
    res["cartwright"], type_table = cartwright_section(main, cfg.seed)
    res["sanity"] = integer_sanity(cfg.sanity_cutoff)
    lap("cartwright")
    res["reconstruction"] = reconstruction_section(main)
    lap("reconstruction")
    g = gates(res)
    report = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "results": res,
              "gates": g, "all_gates": all(g.values()), "timings": timings}
    report = _clean(report)
    report["_tables"] = tables(main, res, type_table)
    report["_run"] = main
    return report


# --- emission -----------------------------------------------------------------------

def tables(run: SolvedRun, res: dict, type_table: dict) -> dict:
    N = run.draw.n
    P = ma.PoleSet.from_kernel_sum(run.F)
    t = np.arange(-N, N + 1)
    nq = np.atleast_1d(ma.counting(P, t))
    return {
        "counting": (("t", "n_Q"), list(zip(t.tolist(), nq.tolist()))),
        "steps": (("j", "step"), [(j + 1, s) for j, s in enumerate(res["solver"]["steps"])]),
        "reconstruction": (("R", "error"), list(zip(res["reconstruction"]["radii"],
                                                      res["reconstruction"]["errors"]))),
        "type": (("y", "log_abs_V_over_y"), list(zip(np.asarray(type_table["y"]).tolist(),
                                                     np.asarray(type_table["log_abs_over_y"]).tolist()))),
    }


def report_json(report: dict, with_timings: bool = True) -> str:
    core = {k: v for k, v in report.items() if not k.startswith("_")}
    if not with_timings:
        core.pop("timings", None)
    return json.dumps(core, sort_keys=True, indent=2) + "\n"


def save_run(run: SolvedRun, path: Path):
    F = run.F
    np.savez(path, values=run.draw.values, alpha=run.state.alpha, S=np.asarray(run.partition.S),
             anchors=F.anchors, offsets=F.offsets, residues=F.residues, kind=F.kind, source=F.source,
             scalars=np.array([run.K, run.T, run.tau, run.draw.n, run.draw.margin, run.partition.M,
                               run.partition.n_candidates], dtype=float),
             config=np.array(json.dumps(run.config.to_dict(), sort_keys=True)))


def load_run(path) -> dict:
    """Arrays and config of a saved run (see :func:`save_run`)."""
    with np.load(path, allow_pickle=False) as z:
        d = {k: z[k] for k in z.files}
    d["config"] = ExperimentConfig.from_dict(json.loads(str(d["config"])))
    K, T, tau, n, margin, M, ncand = d["scalars"]
    d.update(K=float(K), T=int(T), tau=float(tau), n=int(n), margin=int(margin), M=int(M),
             n_candidates=int(ncand))
    d["F"] = CauchyKernelSum(d["anchors"], d["offsets"], d["residues"], d["kind"], d["source"])
    return d


def write_tables(tabs: dict, out: Path):
    for name, (header, rows) in tabs.items():
        with open(out / f"{name}.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def emit(report: dict, out, with_tables: bool = True, mkdir: bool = True, save: bool = True) -> list:
    """Write ``report.json`` (plus CSV tables and ``run.npz``) into ``out``."""
    out = Path(out)
    if not out.exists():
        if not mkdir:
            raise FileNotFoundError(f"output directory {out} does not exist")
        out.mkdir(parents=True)
    written = [out / "report.json"]
    written[0].write_text(report_json(report))
    if with_tables and "_tables" in report:
        write_tables(report["_tables"], out)
        written += [out / f"{k}.csv" for k in report["_tables"]]
    if save and "_run" in report:
        save_run(report["_run"], out / "run.npz")
        written.append(out / "run.npz")
    return written

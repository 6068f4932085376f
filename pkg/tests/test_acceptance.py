"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Tolerances are the stated ones; failing criteria are left failing.
"""
import time

import numpy as np

from meroexp import cartwright as cw
from meroexp import reconstruction as rc
from meroexp.interpolation_solver import lemma_checks
from meroexp.local_map import REAL_CHART
from meroexp.meromorphic_analysis import bm_density_proxy
from meroexp.pipeline import ExperimentConfig, report_json, run, solve_run

from conftest import REGRESSION_SEEDS


def test_criterion_01_local_map_constants(acceptance_line):
    t0 = time.perf_counter()
    A = REAL_CHART.base
    L = REAL_CHART.L(A)
    J = REAL_CHART.jacobian(A)
    Jinv = np.linalg.inv(J)
    det = np.linalg.det(J)
    elapsed = time.perf_counter() - t0
    expected_inv = np.array([[9, -10, 9], [36, -24, -108], [108, 24, -36]]) / 64
    errs = {
        "L": np.max(np.abs(L - [1 / 6, -1 / 2, 1 / 6])),
        "det": abs(det - 128 / 81),
        "inv": np.max(np.abs(Jinv - expected_inv)),
        "entries": max(abs(Jinv[0, 0] - 9 / 64), abs(Jinv[0, 1] + 5 / 32), abs(Jinv[2, 2] + 9 / 16),
                       abs(Jinv[1, 2] + 27 / 16)),
    }
    ok = max(errs.values()) <= 1e-10 and elapsed < 1.0
    acceptance_line(1, ok, f"max const error {max(errs.values()):.2e} (tol 1e-10), {elapsed:.3f}s (< 1s)")
    assert ok, errs


def test_criterion_02_contraction_gates(acceptance_line):
    t0 = time.perf_counter()
    r = solve_run(ExperimentConfig(growth_compare=False))
    lem = lemma_checks(r.system, r.eta, r.tau, pairs=1000, seed=1)
    elapsed = time.perf_counter() - t0
    ok = (lem["winv_lipschitz"] <= 3.0 and lem["v_winv_eta"] <= r.tau
          and lem["v_lipschitz_majorant"] <= r.tau and lem["v_lipschitz_empirical"] <= r.tau
          and elapsed < 60)
    acceptance_line(2, ok, f"Lip(W^-1) {lem['winv_lipschitz']:.3f} <= 3, ||V W^-1 eta|| {lem['v_winv_eta']:.2e}"
                           f", Lip(V) {lem['v_lipschitz_majorant']:.2e} <= tau {r.tau:.2e}, {elapsed:.1f}s")
    assert ok, lem


def test_criterion_03_fixed_point(acceptance_line, default_report):
    s = default_report["results"]["solver"]
    t = default_report["timings"]["solve"]
    steps = np.asarray(s["steps"])
    bound = s["gamma1"] * 2.0 ** -np.arange(1, steps.size + 1)
    dominated = bool(np.all(steps <= bound))
    ok = (dominated and s["direct_residual"] <= 1e-10
          and s["interpolation"]["interior_max"] <= 1e-8 and s["iterations"] <= 30 and t < 300)
    acceptance_line(3, ok, f"steps dominated {dominated}, residual {s['direct_residual']:.1e} <= 1e-10, "
                           f"interp {s['interpolation']['interior_max']:.1e} <= 1e-8, "
                           f"{s['iterations']} iters, {t:.2f}s")
    assert ok


def test_criterion_04_density_deficit(acceptance_line, regression_runs):
    identity, positive, proxy_ok = [], [], []
    for seed in REGRESSION_SEEDS:
        r = regression_runs[seed]
        P, part = r["poles"], r["run"].partition
        identity.append(len(P) == part.size - len(part.S))
        positive.append(part.eps_hat > 0)
        bm = bm_density_proxy(P, (64, 128, 256), window=part.M)
        proxy_ok.append(all(p <= 1 - part.eps_hat / 2 for p in bm["proxy"]))
    ok = all(identity) and sum(positive) >= 9 and all(proxy_ok)
    acceptance_line(4, ok, f"deficit identity {sum(identity)}/10, eps_hat > 0 on {sum(positive)}/10 (need 9), "
                           f"proxy <= 1 - eps_hat/2 on {sum(proxy_ok)}/10")
    assert ok


def test_criterion_05_separation(acceptance_line, regression_runs):
    seps = np.array([regression_runs[s]["poles"].separation for s in REGRESSION_SEEDS])
    ok = bool(np.all(seps > 0.1))
    acceptance_line(5, ok, f"s0 in [{seps.min():.4f}, {seps.max():.4f}] over 10 seeds (> 0.1)")
    assert ok


def test_criterion_06_growth(acceptance_line, default_report):
    g = default_report["results"]["growth"]
    ok = bool(np.isfinite(g["statistic"]) and np.isfinite(g["statistic_2N"]) and g["ratio"] <= 2.0)
    acceptance_line(6, ok, f"N {g['statistic']:.3e}, 2N {g['statistic_2N']:.3e}, ratio {g['ratio']:.3f} <= 2")
    assert ok


def test_criterion_07_canonical_product(acceptance_line, default_report):
    s = default_report["results"]["sanity"]
    c = default_report["results"]["cartwright"]
    ok = (s["value_half_error"] <= 1e-6 and s["type_rel_error"] <= 0.02
          and c["type_V_rel_error"] <= 0.10 and c["type_U_ok"])
    acceptance_line(7, ok, f"V(1/2) err {s['value_half_error']:.1e} <= 1e-6, type(Z) rel {s['type_rel_error']:.3f}"
                           f" <= 0.02, type(V) rel {c['type_V_rel_error']:.1e} <= 0.1, "
                           f"type(U)/pi {(c['type_U'] or 0) / np.pi:.4f} <= type(V)/pi + 0.05")
    assert ok


def test_criterion_08_cardinal_series(acceptance_line, default_report):
    M = 20000
    k = np.arange(-M, M + 1)
    z = np.array([0.3, -2.7, 11.5, 0.5 + 0.25j])
    delta = np.zeros(k.size)
    delta[M] = 1.0
    e_delta = np.max(np.abs(cw.cardinal_series(delta, z).values - np.sinc(z)))
    h = np.sinc(k / 2.0) ** 2
    zr = z[:3]
    e_sq = np.max(np.abs(cw.cardinal_series(h, zr).values - np.sinc(zr / 2.0) ** 2))
    q = default_report["results"]["cartwright"]["quotient_identity"]
    q_ok = q["skipped"] or q["max_mismatch"] <= 1e-4
    ok = max(e_delta, e_sq) <= 1e-8 and q_ok
    mism = "skipped (l2 gate)" if q["skipped"] else f"{q['max_mismatch']:.1e} at {q['points']} pts"
    acceptance_line(8, ok, f"sinc reproduction {max(e_delta, e_sq):.1e} <= 1e-8, quotient mismatch {mism} <= 1e-4")
    assert ok


def test_criterion_09_avdonin_and_riesz(acceptance_line, regression_runs, default_report):
    passed = []
    for seed in REGRESSION_SEEDS:
        r = regression_runs[seed]
        av = rc.avdonin_check(r["lambda"], delta_av=0.2, T=r["run"].T)
        passed.append(av.passed and av.H <= 4 * r["run"].T)
    rz = default_report["results"]["reconstruction"]["riesz"]
    ok = all(passed) and rz["A_spread"] <= 0.2 and rz["B_spread"] <= 0.2
    acceptance_line(9, ok, f"Avdonin {sum(passed)}/10 seeds, Riesz A {min(rz['A']):.4f}..{max(rz['A']):.4f}, "
                           f"B {min(rz['B']):.4f}..{max(rz['B']):.4f} (spread <= 20%)")
    assert ok


def test_criterion_10_reconstruction(acceptance_line, default_report):
    r = default_report["results"]["reconstruction"]
    ok = r["monotone"] and r["final_error"] <= 1e-2 and r["aux_mass"] <= 1e-2
    errs = ", ".join(f"{e:.2e}" for e in r["errors"])
    acceptance_line(10, ok, f"errors [{errs}] monotone {r['monotone']}, final <= 1e-2, "
                            f"aux mass {r['aux_mass']:.1e} <= 1e-2")
    assert ok


def test_criterion_11_determinism(acceptance_line, default_config, default_report):
    # rebuild the config through its serialized form
    again = run(ExperimentConfig.from_dict(default_config.to_dict()))
    a = report_json(default_report, with_timings=False)
    b = report_json(again, with_timings=False)
    ok = a == b
    acceptance_line(11, ok, f"report bytes identical modulo timings: {ok} ({len(a)} bytes)")
    assert ok

import numpy as np
import pytest
from scipy.stats import norm

from meroexp.interpolation_solver import (BlockPartition, CauchyKernelSum, InterpolationSystem, MembershipError,
                                          SelectionError, SolverError, assemble_F, candidate_blocks,
                                          interpolation_residuals, lemma_checks, partition, plant_blocks,
                                          select_parameters, seq_norm, solve)
from meroexp.local_map import COMPLEX_CHART, PoleEvaluationError, REAL_CHART, default_chart
from meroexp.stochastic_model import GaussianDraw, Weight, sample

W = Weight()


@pytest.fixture(scope="module")
def planted_real():
    d = plant_blocks(sample(5, "real", 300), W, 50, [-2, 1, 3])
    sel = select_parameters(d, W, REAL_CHART, 50)
    st = solve(sel.eta, sel.system)
    return d, sel, st, assemble_F(st.alpha, sel.system)


def _brute_V(system, a):
    """Direct pole sum at every row, leaving out the row's own unit."""
    F = system.kernel_sum(a)
    m = system.m
    kind = system.partition.kind
    bo = system.partition.block_of
    S = system.partition.S
    out = np.empty(m.size, dtype=system.dtype)
    for i, mi in enumerate(m):
        if kind[i] == 0:
            own = (F.kind == 0) & (F.source == mi)
        else:
            own = (F.kind == 1) & (F.source == S[bo[i]])
        v = np.sum(np.where(own, 0, F.residues) / ((mi - F.anchors) - F.offsets))
        out[i] = v * system.scale[i]
    return out


def test_seq_norm():
    assert seq_norm(np.array([3 + 4j, -1j])) == 4.0
    assert seq_norm(np.array([-2.0, 1.0])) == 2.0
    assert seq_norm(np.array([])) == 0.0


def test_candidate_blocks_inside_window():
    n = candidate_blocks(M=205, T=50)
    assert n.tolist() == [-4, -3, -2, -1, 0, 1, 2, 3, 4]
    assert np.all(np.abs(50 * n) + 1 <= 205)


def test_partition_selects_planted_blocks_only():
    d = plant_blocks(sample(2, "real", 500), W, 50, [-3, 0, 4])
    p = partition(d, W, REAL_CHART, 50)
    assert p.S.tolist() == [-3, 0, 4]
    assert p.n_candidates == 21
    assert np.isclose(p.eps_hat, 3 / 21 / 50)


def test_partition_membership_is_strict():
    r = REAL_CHART.gamma2 / 4
    d = plant_blocks(sample(2, "real", 200), W, 50, [1], shift=np.array([1.001 * r, 0, 0]))
    assert len(partition(d, W, REAL_CHART, 50).S) == 0
    d = plant_blocks(sample(2, "real", 200), W, 50, [1], shift=np.array([0.999 * r, 0, 0]))
    assert partition(d, W, REAL_CHART, 50).S.tolist() == [1]


def test_partition_rate_matches_gaussian_oracle():
    """Selection frequency with an inflated radius against the exact
    per-block probability of the Gaussian box event."""
    T, radius, n = 3, 0.3, 150_000
    d = sample(99, "real", n)
    p = partition(d, W, REAL_CHART, T, radius=radius)
    blocks = candidate_blocks(d.half_width, T)
    c = T * blocks
    ratios = np.stack([W(c - 1) / W(c), np.ones(c.shape), W(c + 1) / W(c)], axis=-1)
    y = REAL_CHART.image
    # zeta_j ratio_j in (y_j - r, y_j + r)
    lo, hi = (y - radius) / ratios, (y + radius) / ratios
    prob = np.prod(norm.cdf(hi) - norm.cdf(lo), axis=-1)
    mean, sd = prob.sum(), np.sqrt(np.sum(prob * (1 - prob)))
    assert len(blocks) > 99_000
    assert abs(len(p.S) - mean) <= 3 * sd


def test_kernel_sum_evaluation_and_pole_error():
    F = CauchyKernelSum(np.array([0, 2]), np.array([0.25, -0.5]), np.array([1.0, 2.0]),
                        np.zeros(2, np.int8), np.array([0, 2]))
    z = np.array([0.0, 3.0])
    assert np.allclose(F(z), [1 / -0.25 + 2 / -1.5, 1 / 2.75 + 2 / 1.5])
    with pytest.raises(PoleEvaluationError):
        F(np.array([1.5]))


@pytest.mark.parametrize("mode", ["real", "complex"])
def test_apply_V_matches_brute_force(mode, rng):
    chart = default_chart(mode)
    d = plant_blocks(sample(3, mode, 120), W, 30, [-2, 1])
    p = partition(d, W, chart, 30)
    assert len(p.S) == 2
    system = InterpolationSystem(p, W, 8.0, chart, mode)
    a = rng.uniform(-1, 1, p.size)
    if mode == "complex":
        a = a + 1j * rng.uniform(-1, 1, p.size)
    a[p.block_rows] = chart.base + 0.01
    ref = _brute_V(system, a)
    assert np.max(np.abs(system.apply_V(a) - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_W_plus_V_is_scaled_interpolant(planted_real):
    d, sel, st, F = planted_real
    sysm = sel.system
    lhs = sysm.apply_W(st.alpha) + sysm.apply_V(st.alpha)
    assert np.allclose(sysm.scale * F(sysm.m.astype(float)), lhs, atol=1e-13)


def test_planted_real_solve(planted_real):
    d, sel, st, F = planted_real
    assert sel.partition.S.tolist() == [-2, 1, 3]
    assert st.residual <= 1e-10
    assert all(s <= REAL_CHART.gamma1 * 2.0 ** -(j + 1) for j, s in enumerate(st.steps))
    res = interpolation_residuals(F, d, W, buffer=20)
    assert res["interior_max"] <= 1e-12
    # each selected block trades three integers for two poles
    assert len(F) == sel.partition.size - len(sel.partition.S)
    assert st.in_E1 and st.in_E2


def test_planted_complex_solve():
    d = plant_blocks(sample(5, "complex", 300), W, 50, [-2, 1, 3], chart=COMPLEX_CHART)
    sel = select_parameters(d, W, COMPLEX_CHART, 50)
    st = solve(sel.eta, sel.system)
    F = assemble_F(st.alpha, sel.system)
    assert st.residual <= 1e-10
    assert interpolation_residuals(F, d, W, buffer=20)["interior_max"] <= 1e-12
    assert len(F) == sel.partition.size - len(sel.partition.S)


def test_zero_draw_gives_zero_interpolant():
    d = GaussianDraw.zeros(200)
    sel = select_parameters(d, W, REAL_CHART, 50)
    st = solve(sel.eta, sel.system)
    F = assemble_F(st.alpha, sel.system)
    assert np.all(F.residues == 0)
    assert np.all(F(np.array([0.5, 3.25 + 1j])) == 0)
    # poles sit at m - eps_m, just left of every integer
    assert np.all((F.offsets < 0) & (F.offsets > -0.25))


def test_lemma_checks_with_blocks(planted_real):
    d, sel, st, F = planted_real
    lem = lemma_checks(sel.system, sel.eta, sel.tau, pairs=300, seed=4)
    assert 1.0 < lem["winv_lipschitz"] <= 3.0
    assert lem["v_lipschitz_empirical"] <= lem["v_lipschitz_majorant"] <= sel.tau
    assert lem["v_winv_eta"] <= sel.tau


def test_select_rejects_bad_tau():
    d = sample(1, "real", 50)
    with pytest.raises(SelectionError):
        select_parameters(d, W, REAL_CHART, 10, tau=1.0)


def test_solver_reports_membership_violation():
    d = plant_blocks(sample(5, "real", 200), W, 50, [1])
    p = partition(d, W, REAL_CHART, 50)
    system = InterpolationSystem(p, W, 64.0, REAL_CHART)
    eta = np.zeros(p.size)
    eta[p.block_rows[0]] = REAL_CHART.image + 0.5 * REAL_CHART.gamma2
    with pytest.raises(SolverError) as info:
        solve(eta, system)
    assert info.value.trace["iterations"] == 0
    # inside E_2 at gamma2 but not at gamma2 / 4
    assert system.in_E2(eta) and not system.in_E2(eta, REAL_CHART.gamma2 / 4)
    eta[p.block_rows[0]] = REAL_CHART.image + 1.5 * REAL_CHART.gamma2
    with pytest.raises(MembershipError):
        system.invert_W(eta)


def test_block_partition_bookkeeping():
    p = BlockPartition(T=10, M=25, S=np.array([-1, 2]), n_candidates=5)
    assert p.kind[p.block_rows[0]].tolist() == [1, 2, 3]
    assert p.U.size == p.size - 6
    assert p.block_of[20 + 25] == 1

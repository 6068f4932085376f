import numpy as np
import pytest

from meroexp import reconstruction as rc
from meroexp.interpolation_solver import BlockPartition, CauchyKernelSum


def _uniform(offset, n=41, start=-20):
    a = np.arange(start, start + n)
    return rc.frequency_set(a, np.full(n, offset), np.ones(n, bool))


def _planted(L, b, M):
    n = np.arange(-M, M + 1)
    return np.sinc(np.subtract.outer(n, L.values)) @ b


def test_frequency_set_rejects_integers_and_collisions():
    with pytest.raises(rc.FrequencyError):
        rc.frequency_set([0, 1], [0.0, 0.2], [True, True])
    with pytest.raises(rc.FrequencyError):
        rc.frequency_set([0, 0], [0.2, 0.2], [True, True])


def test_build_lambda_adds_auxiliary_points():
    # window -3..3 with the block {-1, 0, 1}: four singleton poles, two block poles
    F = CauchyKernelSum(np.array([-3, -2, 0, 0, 2, 3]), np.array([-0.01, -0.02, -0.45, 0.5, -0.02, -0.01]),
                        np.zeros(6), np.array([0, 0, 1, 1, 0, 0], np.int8), np.array([-3, -2, 0, 0, 2, 3]))
    part = BlockPartition(T=3, M=3, S=np.array([0]), n_candidates=1)
    L = rc.build_lambda(F, part)
    assert len(L) == part.size - len(part.S) + len(part.S)
    assert np.allclose(L.values[~L.is_zero], [1.5])
    assert L.labels.tolist() == list(range(-3, 4))


def test_gram_of_integers_like_set_is_identity():
    # offsets of one half on a unit grid are still orthonormal
    L = _uniform(0.5, n=10, start=0)
    G = rc.gram(L)
    assert np.allclose(G.G, np.eye(10), atol=1e-15)
    assert G.A == pytest.approx(1.0) and G.B == pytest.approx(1.0)


def test_gram_near_collision_is_singular():
    L = rc.FrequencySet(np.array([0, 0]), np.array([0.25, 0.25 + 1e-6]), np.ones(2, bool), np.array([0, 1]))
    g = rc.gram(L)
    assert g.A < 1e-8 and g.singular


def test_cross_vector_matches_closed_form():
    """For g = sum b_j e^{i lam_j t} the cross vector tends to G b; the
    discrepancy is the coefficient tail outside the window."""
    L = _uniform(0.3)
    b = np.random.default_rng(1).standard_normal(len(L))
    Gb = rc.gram_matrix(L) @ b
    errs = [np.max(np.abs(rc.cross_vector(_planted(L, b, M), L, M) - Gb)) for M in (500, 4000)]
    assert errs[1] < errs[0] / 5
    assert errs[1] < 1e-4


def test_reconstruct_planted_coefficients():
    L = _uniform(0.3)
    b = np.random.default_rng(1).standard_normal(len(L))
    M = 4000
    rec = rc.reconstruct(_planted(L, b, M), L, M, [10, 20, 25])
    assert rec.monotone
    assert np.max(np.abs(rec.coef - b)) < 1e-4
    assert rec.errors[-1] < 2e-3
    assert rec.coef_l2 <= rec.coef_bound * (1 + 1e-9)


def test_reconstruct_zero_function():
    L = _uniform(0.3)
    rec = rc.reconstruct(np.zeros(201), L, 100, [10, 25])
    assert rec.errors == [0.0, 0.0]
    assert np.all(rec.coef == 0) and rec.aux_mass == 0.0


def test_solve_gram_regularizes_singular_system():
    G = np.array([[1.0, 1.0], [1.0, 1.0]])
    out = rc.solve_gram(G, np.array([1.0, 1.0]), 1.0, A=0.0, B=2.0)
    assert out.regularized and out.reg == pytest.approx(2e-10)
    assert out.error2 < 1e-6


def test_avdonin_trivial_cases():
    a = np.arange(-300, 301)
    zero = rc.frequency_set(a, np.full(a.size, 1e-12), np.ones(a.size, bool), first_label=-300)
    assert rc.avdonin_check(zero, H=37).passed
    shifted = rc.frequency_set(a, np.full(a.size, 0.3), np.ones(a.size, bool), first_label=-300)
    for d in (0.1, 0.2, 0.249):
        assert not rc.avdonin_check(shifted, delta_av=d, T=50).passed
    with pytest.raises(ValueError):
        rc.avdonin_check(zero, delta_av=0.25)


def test_riesz_bounds_of_small_perturbation():
    a = np.arange(-600, 601)
    d = 0.05 * np.sin(a)
    L = rc.frequency_set(a, np.where(d == 0, 0.01, d), np.ones(a.size, bool), first_label=-600)
    rb = rc.riesz_bounds(L, (100, 200, 400))
    assert rb["A_spread"] < 0.2 and rb["B_spread"] < 0.2
    assert 0.5 < min(rb["A"]) and max(rb["B"]) < 1.5


def test_exact_coefficients_reproduce_twisted_samples():
    """sum_q a_q sinc(q - n) = (-1)^n F(n) for the explicit coefficients."""
    j = np.arange(-15, 16)
    off = np.linspace(-0.2, 0.2, j.size)
    off[off == 0] = 0.05
    res = np.random.default_rng(2).standard_normal(j.size)
    F = CauchyKernelSum(j, off, res, np.zeros(j.size, np.int8), j)
    L = rc.frequency_set(j, off, np.ones(j.size, bool))
    a = rc.exact_coefficients(F, L)
    n = np.arange(-40, 41)
    lhs = np.sinc(np.subtract.outer(n, L.values)) @ a
    rhs = np.where(n % 2 == 0, 1, -1) * F(n.astype(float))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_default_run_reconstruction(default_report):
    r = default_report["results"]["reconstruction"]
    assert r["monotone"] and r["final_error"] <= 1e-2
    assert r["coef_l2"] <= r["coef_bound"] * (1 + 1e-9)
    assert r["explicit_expansion_error"] < 1e-3
    assert r["avdonin"]["passed"] and r["avdonin"]["H"] <= 400

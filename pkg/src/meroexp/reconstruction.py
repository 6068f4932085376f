"""Frequency set, Avdonin block check, Gram systems and least-squares
reconstruction of ``f(t) = sum_n fhat(n) e^{int}`` from exponentials
``e^{i lam t}``.

Norms are taken in ``L2[-pi, pi]`` with the ``1/(2pi)`` normalization, so
``<e^{i lam t}, e^{i mu t}> = sinc(lam - mu)`` and ``||f||^2 = sum |fhat(n)|^2``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.sparse.linalg import eigsh

from .cartwright import sinc_split

log = logging.getLogger(__name__)

REG_FLOOR = 1e-8
REG_FACTOR = 1e-10


class FrequencyError(ValueError):
    """Frequency set hits an integer or is not separated."""


@dataclass(frozen=True)
class FrequencySet:
    """Sorted frequencies ``lam = anchor + offset`` with integer labels.

    ``is_zero`` marks points of the pole set (zeros of the canonical
    product); the rest are auxiliary points ``Ty + 3/2``.
    """

    anchors: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    is_zero: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.anchors)

    @property
    def values(self) -> np.ndarray:
        return self.anchors + self.offsets

    @property
    def deltas(self) -> np.ndarray:
        """``delta_n = lam_n - n``."""
        return (self.anchors - self.labels).astype(float) + self.offsets

    def subset(self, mask) -> "FrequencySet":
        mask = np.asarray(mask, dtype=bool)
        return FrequencySet(self.anchors[mask], self.offsets[mask], self.is_zero[mask], self.labels[mask])

    def central(self, size: int) -> "FrequencySet":
        """The ``size`` points with labels closest to 0."""
        order = np.argsort(np.abs(self.labels), kind="stable")[:size]
        return self.subset(np.isin(np.arange(len(self)), order))


def frequency_set(anchors, offsets, is_zero, first_label: int | None = None) -> FrequencySet:
    a = np.asarray(anchors, dtype=np.int64)
    o = np.asarray(offsets, dtype=float)
    z = np.asarray(is_zero, dtype=bool)
    order = np.lexsort((o, a))
    a, o, z = a[order], o[order], z[order]
    if np.any(o == 0) or np.any(np.abs(o) >= 1):
        raise FrequencyError("frequency set meets the integers")
    gaps = np.diff(a).astype(float) + np.diff(o)
    if np.any(gaps <= 0):
        raise FrequencyError("frequencies are not separated")
    n = len(a)
    start = -(n // 2) if first_label is None else first_label
    return FrequencySet(a, o, z, np.arange(start, start + n, dtype=np.int64))


def build_lambda(F, partition) -> FrequencySet:
    """``Lambda = Q cup {Ty + 3/2 : y in S}`` labeled by rank against the window."""
    Fs = F.sorted()
    T = partition.T
    aux_a = T * np.asarray(partition.S, dtype=np.int64) + 1
    anchors = np.concatenate([Fs.anchors, aux_a])
    offsets = np.concatenate([Fs.offsets, np.full(aux_a.size, 0.5)])
    is_zero = np.concatenate([np.ones(len(Fs), bool), np.zeros(aux_a.size, bool)])
    return frequency_set(anchors, offsets, is_zero, first_label=-partition.M)


# --- Avdonin ------------------------------------------------------------------------------

@dataclass(frozen=True)
class AvdoninCheck:
    H: int
    delta_av: float
    passed: bool
    worst_block: int
    worst_sum: float
    tried: list = field(default_factory=list)


def block_sums(L: FrequencySet, H: int):
    """Sums of ``delta_n`` over ``kH <= lam_n <= (k+1)H`` for every block ``k`` met by ``L``."""
    lam = L.values
    k_lo = int(np.floor(lam.min() / H))
    k_hi = int(np.floor(lam.max() / H))
    ks = np.arange(k_lo, k_hi + 1)
    d = L.deltas
    sums = np.empty(ks.size)
    for i, k in enumerate(ks):
        sel = (lam >= k * H) & (lam <= (k + 1) * H)
        sums[i] = d[sel].sum()
    return ks, sums


def avdonin_check(L: FrequencySet, H=None, delta_av: float = 0.2, T: int = 100) -> AvdoninCheck:
    """Block criterion ``|sum delta_n| <= delta_av H``; tries ``H in {T, 2T, 4T}``
    unless a single ``H`` is given."""
    if not 0 < delta_av < 0.25:
        raise ValueError("delta_av must lie in (0, 1/4)")
    candidates = [H] if H is not None else [T, 2 * T, 4 * T]
    tried = []
    best = None
    for h in candidates:
        ks, sums = block_sums(L, int(h))
        i = int(np.argmax(np.abs(sums)))
        ok = bool(np.abs(sums[i]) <= delta_av * h)
        res = AvdoninCheck(H=int(h), delta_av=delta_av, passed=ok, worst_block=int(ks[i]),
                           worst_sum=float(sums[i]))
        tried.append({"H": int(h), "passed": ok, "worst_sum": float(sums[i])})
        if best is None or ok:
            best = res
        if ok:
            break
    return AvdoninCheck(best.H, delta_av, best.passed, best.worst_block, best.worst_sum, tried)


# --- Gram systems -----------------------------------------------------------------------------

def gram_matrix(L: FrequencySet, M: FrequencySet | None = None) -> np.ndarray:
    """``G[i, j] = sinc(lam_i - mu_j)`` with the split-sinc formula."""
    M = L if M is None else M
    k = np.subtract.outer(L.anchors, M.anchors)
    d = np.subtract.outer(L.offsets, M.offsets)
    return sinc_split(k, d)


def extreme_eigenvalues(G: np.ndarray) -> tuple[float, float]:
    n = G.shape[0]
    if n == 0:
        return 1.0, 1.0
    if n <= 1200:
        ev = np.linalg.eigvalsh(G)
        return float(ev[0]), float(ev[-1])
    # fixed start vector keeps the result bit-reproducible
    v0 = np.ones(n) / np.sqrt(n)
    lo = eigsh(G, k=1, which="SA", return_eigenvectors=False, tol=1e-10, v0=v0)[0]
    hi = eigsh(G, k=1, which="LA", return_eigenvectors=False, tol=1e-10, v0=v0)[0]
    return float(lo), float(hi)


@dataclass
class GramSystem:
    G: np.ndarray = field(repr=False)
    A: float
    B: float

    @property
    def singular(self) -> bool:
        return self.A < REG_FLOOR


def gram(L: FrequencySet) -> GramSystem:
    G = gram_matrix(L)
    A, B = extreme_eigenvalues(G)
    return GramSystem(G=G, A=A, B=B)


def riesz_bounds(L: FrequencySet, sizes=(200, 400, 800)) -> dict:
    """Riesz bounds of central truncations and their relative spread."""
    A, B = [], []
    for s in sizes:
        g = gram(L.central(s))
        A.append(g.A)
        B.append(g.B)
    spread = lambda v: float((max(v) - min(v)) / max(min(v), 1e-300))
    return {"sizes": list(sizes), "A": A, "B": B, "A_spread": spread(A), "B_spread": spread(B)}


def cross_vector(fhat, L: FrequencySet, half_width: int) -> np.ndarray:
    """``b(lam) = <f, e^{i lam t}> = sum_n fhat(n) sinc(lam - n)`` over ``|n| <= half_width``."""
    n = np.arange(-half_width, half_width + 1)
    out = np.empty(len(L), dtype=np.result_type(np.asarray(fhat).dtype, float))
    step = max(1, (1 << 22) // n.size)
    for i in range(0, len(L), step):
        S = sinc_split(np.subtract.outer(L.anchors[i:i + step], n), L.offsets[i:i + step, None])
        out[i:i + step] = S @ fhat
    return out


@dataclass
class SolveResult:
    coef: np.ndarray = field(repr=False)
    error2: float
    regularized: bool
    reg: float = 0.0


def solve_gram(G: np.ndarray, b: np.ndarray, norm2: float, A: float | None = None,
               B: float | None = None) -> SolveResult:
    """Least squares via the normal equations ``G a = b``.

    Switches to ``(G + 1e-10 B) a = b`` when the lower Riesz bound is below
    ``1e-8`` or the Cholesky factorization fails.
    """
    reg = 0.0
    if A is not None and A < REG_FLOOR:
        reg = REG_FACTOR * (B if B is not None else 1.0)
    try:
        c = cho_factor(G + reg * np.eye(len(G)), lower=True)
    except LinAlgError:
        if B is None:
            B = extreme_eigenvalues(G)[1]
        reg = REG_FACTOR * B
        c = cho_factor(G + reg * np.eye(len(G)), lower=True)
    a = cho_solve(c, b)
    err2 = norm2 - 2.0 * np.real(np.vdot(a, b)) + np.real(np.vdot(a, G @ a))
    return SolveResult(coef=a, error2=float(max(err2, 0.0)), regularized=reg > 0, reg=reg)


def exact_coefficients(F, L: FrequencySet) -> np.ndarray:
    """``a_q = -pi c_q / sin(pi q)`` for the pole part of ``L``, which
    reproduces ``(-1)^n F(n)`` as Fourier coefficients on every integer."""
    Fs = F.sorted()
    s = np.where(Fs.anchors % 2 == 0, 1.0, -1.0) * np.sin(np.pi * Fs.offsets)
    return -np.pi * Fs.residues / s


@dataclass
class Reconstruction:
    radii: list
    errors: list
    coef: np.ndarray = field(repr=False)
    full_coef: np.ndarray = field(repr=False)
    aux_mass: float
    coef_l2: float
    coef_bound: float
    regularized: list
    norm: float

    @property
    def monotone(self) -> bool:
        e = self.errors
        return all(e[i + 1] <= e[i] * (1 + 1e-9) + 1e-15 for i in range(len(e) - 1))


def reconstruct(fhat, L: FrequencySet, half_width: int, radii) -> Reconstruction:
    """Relative ``L2`` error of the projection of ``f`` onto the span of the
    zero-set exponentials with ``|lam| <= R`` for each ``R`` in ``radii``.

    The last radius gives ``coef``. The dual expansion over the whole of
    ``L`` reports the share of ``sum |a|^2`` carried by auxiliary points.
    """
    fhat = np.asarray(fhat)
    norm2 = float(np.sum(np.abs(fhat) ** 2))
    norm = np.sqrt(norm2)
    b = cross_vector(fhat, L, half_width)
    Gfull = gram_matrix(L)
    lam = L.values
    errors, regs = [], []
    sol = None
    for R in radii:
        sel = L.is_zero & (np.abs(lam) <= R)
        idx = np.flatnonzero(sel)
        G = Gfull[np.ix_(idx, idx)]
        if norm2 == 0.0:
            sol = SolveResult(np.zeros(idx.size), 0.0, False)
        else:
            A, B = (extreme_eigenvalues(G) if idx.size <= 1200 else (None, None))
            sol = solve_gram(G, b[idx], norm2, A, B)
        errors.append(float(np.sqrt(sol.error2) / norm) if norm2 else 0.0)
        regs.append(sol.regularized)
    coef = np.zeros(len(L), dtype=np.result_type(b.dtype, float))
    coef[idx] = sol.coef

    if norm2 == 0.0:
        full = np.zeros(len(L))
    else:
        full = solve_gram(Gfull, b, norm2).coef
    tot = float(np.sum(np.abs(full) ** 2))
    aux = float(np.sum(np.abs(full[~L.is_zero]) ** 2))
    A_full = extreme_eigenvalues(Gfull[np.ix_(L.is_zero, L.is_zero)])[0] if len(L) else 1.0
    return Reconstruction(radii=[float(r) for r in radii], errors=errors, coef=coef, full_coef=full,
                          aux_mass=aux / tot if tot else 0.0, coef_l2=float(np.linalg.norm(coef)),
                          coef_bound=float(norm / np.sqrt(max(A_full, 1e-300))), regularized=regs,
                          norm=float(norm))


def reconstruction_target(draw, w) -> np.ndarray:
    """Fourier coefficients ``fhat(n) = zeta_n w(n)`` on the window."""
    return draw.values * w(draw.indices)


def explicit_expansion_error(F, L: FrequencySet, draw, w) -> float:
    """Relative error of the explicit coefficients ``-pi c_q / sin(pi q)``
    against ``fhat(n) = (-1)^n zeta_n w(n)``.

    Those coefficients have Fourier coefficients ``(-1)^n F(n)`` on every
    integer, so the only error is the part of ``F`` sampled outside the
    window. The sign twist leaves the law of the coefficients unchanged.
    """
    n = draw.indices
    fhat = np.where(n % 2 == 0, 1.0, -1.0) * draw.values * w(n)
    norm2 = float(np.sum(np.abs(fhat) ** 2))
    if norm2 == 0.0:
        return 0.0
    Z = L.subset(L.is_zero)
    a = exact_coefficients(F, Z)
    b = cross_vector(fhat, Z, draw.half_width)
    G = gram_matrix(Z)
    e2 = norm2 - 2 * np.real(np.vdot(a, b)) + np.real(np.vdot(a, G @ a))
    return float(np.sqrt(max(e2, 0.0) / norm2))

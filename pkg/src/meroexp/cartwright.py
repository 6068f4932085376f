"""Canonical products over a real zero set, the entire numerator
``U = V F``, exponential type estimates, Paley-Wiener kernels and the
cardinal series.

Inner products on PW use ``(1/2pi) int_{-pi}^{pi} f conj(g)`` on the Fourier
side, so integer exponentials are orthonormal and ``<k_l, k_m> = sinc(l - m)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, loggamma

from .meromorphic_analysis import PoleSet, as_poleset


class StructureError(ValueError):
    """Zero set of ``V`` does not match the pole set of ``F``."""


class L2TailWarning(UserWarning):
    """Samples do not look square summable on the window."""


# --- sinc helpers ------------------------------------------------------------------------

def sinc_split(k, d):
    """``sin(pi x) / (pi x)`` at ``x = k + d`` with integer ``k``.

    Uses ``sin(pi (k + d)) = (-1)^k sin(pi d)`` so tiny ``d`` keeps full
    relative accuracy.
    """
    k = np.asarray(k)
    d = np.asarray(d, dtype=float)
    x = k + d
    sign = np.where(np.asarray(k) % 2 == 0, 1.0, -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = sign * np.sin(np.pi * d) / (np.pi * x)
    return np.where(x == 0, 1.0, out)


def pw_kernel(lam, z):
    """Reproducing kernel ``k_lam(z) = sinc(z - lam)`` of PW."""
    return np.sinc(np.asarray(z) - np.asarray(lam))


def pw_inner(lam_a, coef_a, lam_b, coef_b):
    """``<sum a_j k_{l_j}, sum b_j k_{m_j}>`` in closed form."""
    G = np.sinc(np.subtract.outer(np.asarray(lam_b, dtype=float), np.asarray(lam_a, dtype=float)))
    return np.conj(np.asarray(coef_b)) @ G @ np.asarray(coef_a)


# --- canonical product --------------------------------------------------------------------

def integer_tail_log(z, m: int):
    """``log prod_{|k| >= m} (1 - z/k) = 2 log Gamma(m) - log Gamma(m - z) - log Gamma(m + z)``."""
    z = np.asarray(z, dtype=complex)
    return 2.0 * gammaln(m) - loggamma(m - z) - loggamma(m + z)


@dataclass(frozen=True)
class CanonicalProduct:
    """``V(z) = prod_{q in Q, |q| < cutoff} (1 - z/q)``, optionally completed
    by the integers ``|k| >= tail_from``.

    With ``tail_from = M + 1`` the zero set is ``Q`` plus the integers
    outside the window, and the product is evaluated exactly through the
    Gamma function identity for the integer part. The cutoff is applied to
    the integer anchors of the poles so that it lines up with the integer
    completion. A zero at ``q = 0`` is replaced by the factor ``z``.
    """

    poles: PoleSet = field(repr=False)
    tail_from: int | None = None
    cutoff: float | None = None
    chunk: int = 1 << 22

    def __post_init__(self):
        zero = (self.poles.anchors == 0) & (self.poles.offsets == 0)
        keep = ~zero
        if self.cutoff is not None:
            keep &= np.abs(self.poles.anchors) < self.cutoff
        object.__setattr__(self, "_keep", np.flatnonzero(keep))
        object.__setattr__(self, "has_zero_at_origin", bool(zero.any()))

    @property
    def metadata(self) -> dict:
        return {"factors": int(self._keep.size), "tail_from": self.tail_from,
                "cutoff": self.cutoff, "zero_at_origin": self.has_zero_at_origin}

    def _terms(self, z, idx):
        a = self.poles.anchors[idx]
        o = self.poles.offsets[idx]
        d = (a[None, :] - z[:, None]) + o[None, :]
        return d / (a + o)[None, :]

    def log(self, z, skip=None) -> np.ndarray:
        """``log V(z)`` (imaginary part modulo ``2 pi``); ``skip`` omits one factor by index."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        idx = self._keep if skip is None else self._keep[self._keep != skip]
        out = np.zeros(z.shape, dtype=complex)
        flat, o = z.ravel(), out.reshape(-1)
        step = max(1, self.chunk // max(idx.size, 1))
        with np.errstate(divide="ignore"):
            for i in range(0, flat.size, step):
                o[i:i + step] = np.log(self._terms(flat[i:i + step], idx)).sum(axis=1)
            if self.tail_from is not None:
                out += integer_tail_log(z, self.tail_from)
            if self.has_zero_at_origin:
                out += np.log(z)
        return out

    def log_abs(self, z) -> np.ndarray:
        return self.log(z).real

    def __call__(self, z, skip=None):
        with np.errstate(over="ignore"):
            return np.exp(self.log(z, skip=skip))

    def without(self, j: int, z):
        """``V(z) / (1 - z/q_j)``."""
        return self(z, skip=j)

    def derivative_at(self, j: int) -> complex:
        """``V'(q_j) = -V_j(q_j) / q_j`` where ``V_j`` omits the ``j``-th factor."""
        q = self.poles.anchors[j] + self.poles.offsets[j]
        return complex(-self.without(j, np.array([q]))[0] / q)


def completed_product(Q, half_width: int) -> CanonicalProduct:
    """Product over ``Q`` completed by the integers ``|k| > half_width``."""
    return CanonicalProduct(as_poleset(Q), tail_from=int(half_width) + 1)


def eval_product(Q, z, radii, half_width: int | None = None) -> dict:
    """Values of the symmetric partial products for each cutoff in ``radii``.

    With ``half_width`` given, each partial product is completed by the
    integers outside ``max(cutoff, window)``. The last two cutoffs give the
    Cauchy-difference error estimate; ``flag`` is set if the differences
    along the schedule do not decrease.
    """
    P = as_poleset(Q)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    radii = sorted(int(r) for r in radii)
    vals = []
    for R in radii:
        tail = None if half_width is None else min(R, half_width + 1)
        vals.append(CanonicalProduct(P, tail_from=tail, cutoff=R)(z))
    diffs = [float(np.max(np.abs(vals[i + 1] - vals[i]))) for i in range(len(vals) - 1)]
    flag = any(diffs[i + 1] >= diffs[i] and diffs[i] > 0 for i in range(len(diffs) - 1))
    return {"radii": radii, "values": vals[-1], "all_values": vals,
            "error": diffs[-1] if diffs else np.nan, "differences": diffs, "flag": flag}


@dataclass(frozen=True)
class TypeEstimate:
    slope: float
    intercept: float
    residual: float
    y: np.ndarray = field(repr=False)
    log_abs: np.ndarray = field(repr=False)


def type_estimate(log_abs_fn, y_max: float = 100.0, n: int = 64) -> TypeEstimate:
    """Least-squares slope of ``log|f(iy)|`` over ``y in [y_max/4, y_max]``."""
    y = np.linspace(y_max / 4, y_max, n)
    v = np.asarray(log_abs_fn(1j * y), dtype=float)
    A = np.stack([y, np.ones_like(y)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, v, rcond=None)
    fit = A @ coef
    return TypeEstimate(slope=float(coef[0]), intercept=float(coef[1]),
                        residual=float(np.sqrt(np.mean((v - fit) ** 2))), y=y, log_abs=v)


# --- U = V F ----------------------------------------------------------------------------

@dataclass
class QuotientU:
    """Entire function ``U = V F`` with removable singularities handled.

    Within ``r0`` of a pole ``q`` of ``F`` with residue ``c``::

        U(z) = -(c / q) V_q(z) + (F(z) - c / (z - q)) V(z)

    where ``V_q`` is ``V`` without the factor of ``q``.
    """

    F: object
    V: CanonicalProduct
    r0: float

    def __post_init__(self):
        self.poles = PoleSet.from_kernel_sum(self.F)
        Fs = self.F.sorted()
        self.residues = Fs.residues
        self._F = Fs
        Vp = self.V.poles
        same = (len(Vp) == len(self.poles) and np.array_equal(Vp.anchors, self.poles.anchors)
                and np.array_equal(Vp.offsets, self.poles.offsets))
        if not same:
            raise StructureError("zero set of V differs from the poles of F")

    def nearest(self, z):
        q = self.poles.values
        z = np.asarray(z)
        i = np.clip(np.searchsorted(q, z.real), 1, max(len(q) - 1, 1))
        if len(q) == 1:
            return np.zeros(z.shape, dtype=int), np.abs(z - q[0])
        left = np.abs(z - q[i - 1]) <= np.abs(z - q[i])
        j = np.where(left, i - 1, i)
        return j, np.abs(z - q[j])

    def direct(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return self.V(z) * self._F(z)

    def near_form(self, z, j: int):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        q = self.poles.anchors[j] + self.poles.offsets[j]
        c = self.residues[j]
        mask = np.zeros(len(self.poles), dtype=bool)
        mask[j] = True
        rest = self._F(z, exclude=mask)
        return -(c / q) * self.V.without(j, z) + rest * self.V(z)

    def __call__(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.empty(z.shape, dtype=complex)
        if len(self.poles) == 0:
            return self.V(z) * 0
        j, dist = self.nearest(z)
        far = dist >= self.r0
        if far.any():
            out[far] = self.direct(z[far])
        for k in np.flatnonzero(~far):
            out[k] = self.near_form(z[k:k + 1], int(j[k]))[0]
        return out

    def at_pole(self, j: int) -> complex:
        """``U(q_j) = c_j V'(q_j)``."""
        return complex(self.residues[j] * self.V.derivative_at(j))

    def boundary_gap(self, indices=None) -> float:
        """Max relative mismatch of the two branches at distance ``r0`` from the poles."""
        idx = range(len(self.poles)) if indices is None else indices
        worst = 0.0
        for j in idx:
            q = self.poles.anchors[j] + self.poles.offsets[j]
            z = np.array([q + self.r0, q - self.r0, q + 1j * self.r0])
            a = self.direct(z)
            b = self.near_form(z, j)
            scale = max(1.0, float(np.max(np.abs(a))))
            worst = max(worst, float(np.max(np.abs(a - b))) / scale)
        return worst


def quotient_U(F, V: CanonicalProduct, r0: float | None = None) -> QuotientU:
    P = PoleSet.from_kernel_sum(F)
    if r0 is None:
        r0 = P.separation / 4 if len(P) > 1 else 0.25
    return QuotientU(F, V, float(r0))


# --- cardinal series ----------------------------------------------------------------------

@dataclass(frozen=True)
class CardinalResult:
    values: np.ndarray
    tail_norm: float
    shell_energy: list
    l2_ok: bool


def l2_gate(h) -> tuple[bool, list, float]:
    """Dyadic shell energies of the samples, from the edge of the window inward.

    The gate fails if the outermost nonzero shell carries at least as much
    energy as the next one.
    """
    h = np.asarray(h)
    M = (len(h) - 1) // 2
    k = np.abs(np.arange(-M, M + 1))
    e = []
    r = M
    while r >= 2:
        sel = (k > r // 2) & (k <= r)
        e.append(float(np.sum(np.abs(h[sel]) ** 2)))
        r //= 2
    ok = True
    if len(e) >= 2 and e[0] > 0 and e[0] >= e[1]:
        ok = False
    tail = float(np.sqrt(e[0])) if e else 0.0
    return ok, e, tail


def cardinal_series(h, z, warn: bool = True) -> CardinalResult:
    """``sum_k h(k) (-1)^k sin(pi z) / (pi (z - k))`` over ``k = -M..M``.

    ``h`` is indexed with offset ``M``. Integer ``z`` returns the sample.
    """
    h = np.asarray(h)
    M = (len(h) - 1) // 2
    k = np.arange(-M, M + 1)
    z = np.atleast_1d(np.asarray(z))
    zc = z.astype(complex)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    out = np.empty(z.shape, dtype=complex)
    for i, zi in enumerate(zc):
        if zi.imag == 0 and zi.real == np.round(zi.real) and abs(zi.real) <= M:
            out[i] = h[int(np.round(zi.real)) + M]
        elif zi.imag == 0 and zi.real == np.round(zi.real):
            out[i] = 0.0
        else:
            out[i] = np.sin(np.pi * zi) / np.pi * np.sum(h * sign / (zi - k))
    ok, shells, tail = l2_gate(h)
    if not ok and warn:
        warnings.warn("samples do not look square summable", L2TailWarning, stacklevel=2)
    if np.isrealobj(h) and np.isrealobj(z):
        out = out.real
    return CardinalResult(values=out, tail_norm=tail, shell_energy=shells, l2_ok=ok)


def verify_quotient_identity(F, V: CanonicalProduct, points, half_width: int, U: QuotientU | None = None) -> dict:
    """Compare the cardinal series of ``F(k) V(k)`` with ``U(z)`` at ``points``.

    Skipped (with a report) when the samples fail the l2 gate.
    """
    k = np.arange(-half_width, half_width + 1)
    U = U or quotient_U(F, V)
    h = U(k.astype(complex))
    if np.all(np.isreal(h)) or np.isrealobj(F.residues):
        h = h.real if np.isrealobj(F.residues) else h
    ok, shells, tail = l2_gate(h)
    if not ok:
        return {"skipped": True, "reason": "l2 gate failed", "shell_energy": shells}
    lhs = cardinal_series(h, np.asarray(points), warn=False).values
    rhs = U(np.asarray(points, dtype=complex))
    mism = np.abs(lhs - rhs)
    return {"skipped": False, "max_mismatch": float(np.max(mism)),
            "relative": float(np.max(mism) / max(1e-300, float(np.max(np.abs(rhs))))),
            "tail_norm": tail, "points": int(np.size(points)),
            "sign_pattern": _sign_pattern(F, V, half_width)}


def _sign_pattern(F, V, half_width, count=8):
    """Signs of ``F(n) V(n) / U(n)`` and of ``V(n)`` at a few integers near 0,
    reported for the ``(-1)^n`` bookkeeping of the quotient."""
    n = np.arange(-count // 2, count // 2 + 1)
    n = n[np.abs(n) <= half_width]
    v = V(n.astype(complex))
    return [int(np.sign(x)) for x in v.real]

"""Pole-set geometry and density statistics.

Poles are kept as ``anchor + offset`` pairs (see
:class:`~meroexp.interpolation_solver.CauchyKernelSum`); counting compares
against that pair directly so that offsets below the float spacing at the
anchor are not lost.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PoleSet:
    """Sorted real points ``q_j = anchors[j] + offsets[j]``."""

    anchors: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    kind: np.ndarray | None = field(default=None, repr=False)
    source: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.anchors) > 1 and np.any(self.gaps() <= 0):
            raise ValueError("pole set must be strictly increasing")

    @classmethod
    def from_points(cls, q) -> "PoleSet":
        q = np.sort(np.asarray(q, dtype=float))
        a = np.round(q).astype(np.int64)
        return cls(a, q - a)

    @classmethod
    def from_kernel_sum(cls, F) -> "PoleSet":
        F = F.sorted()
        return cls(F.anchors.astype(np.int64), F.offsets.astype(float), F.kind, F.source)

    def __len__(self):
        return len(self.anchors)

    @property
    def values(self) -> np.ndarray:
        return self.anchors + self.offsets

    def gaps(self) -> np.ndarray:
        return np.diff(self.anchors).astype(float) + np.diff(self.offsets)

    @property
    def separation(self) -> float:
        """``s0``, the smallest gap (``inf`` for fewer than two points)."""
        return float(np.min(self.gaps())) if len(self) > 1 else np.inf

    def count_below(self, t_anchor, t_offset=None) -> np.ndarray:
        """``#{q < t}`` for ``t = t_anchor + t_offset``.

        Passing a float array as ``t_anchor`` alone splits it into nearest
        integer and remainder (``t - round(t)`` is exact in floating point).
        """
        ta = np.asarray(t_anchor)
        if t_offset is None:
            tf_full = np.asarray(ta, dtype=float)
            ta = np.round(tf_full)
            tf = tf_full - ta
            ta = ta.astype(np.int64)
        else:
            ta = ta.astype(np.int64)
            tf = np.asarray(t_offset, dtype=float)
        ta, tf = np.broadcast_arrays(ta, tf)
        if len(self) == 0:
            return np.zeros(ta.shape, dtype=np.int64)
        qf = self.values
        approx = ta + tf
        lo = np.searchsorted(qf, approx - 3.0, side="left")
        hi = np.searchsorted(qf, approx + 3.0, side="right")
        width = int(np.max(hi - lo)) if hi.size else 0
        count = lo.astype(np.int64)
        for k in range(width):
            idx = lo + k
            ok = idx < hi
            j = np.where(ok, idx, 0)
            below = (self.anchors[j] - ta) + (self.offsets[j] - tf) < 0
            count += (ok & below)
        return count


def as_poleset(Q) -> PoleSet:
    if isinstance(Q, PoleSet):
        return Q
    if hasattr(Q, "anchors") and hasattr(Q, "residues"):
        return PoleSet.from_kernel_sum(Q)
    return PoleSet.from_points(Q)


def counting(Q, t, t_offset=None) -> np.ndarray:
    """``n_Q(t) = #(Q cap [0, t))`` for ``t >= 0`` and ``-#(Q cap (t, 0))`` for ``t < 0``."""
    P = as_poleset(Q)
    t_arr = np.asarray(t)
    below = P.count_below(t_arr, t_offset)
    below0 = int(P.count_below(np.array([0]), np.array([0.0]))[0])
    if t_offset is None:
        neg = t_arr < 0
    else:
        neg = (np.asarray(t_arr) + np.asarray(t_offset)) < 0
    # for t < 0 we need #(t < q < 0) = below0 - #(q <= t)
    at_or_below = below + _count_equal(P, t_arr, t_offset)
    out = np.where(neg, -(below0 - at_or_below), below - below0)
    return out.astype(np.int64) if out.ndim else int(out)


def _count_equal(P: PoleSet, t, t_offset=None):
    t = np.asarray(t)
    if len(P) == 0:
        return np.zeros(t.shape, dtype=np.int64)
    if t_offset is None:
        qf = P.values
        return (np.searchsorted(qf, t, side="right") - np.searchsorted(qf, t, side="left"))
    ta = t.astype(np.int64)
    tf = np.asarray(t_offset, dtype=float)
    i = np.searchsorted(P.anchors, ta, side="left")
    j = np.searchsorted(P.anchors, ta, side="right")
    out = np.zeros(np.broadcast(ta, tf).shape, dtype=np.int64)
    for k in range(int(np.max(j - i)) if np.size(i) else 0):
        idx = np.minimum(i + k, len(P) - 1)
        out += ((i + k) < j) & (P.offsets[idx] == tf)
    return out


def jump_profile(Q, window: float):
    """Points ``t`` and one-sided values of ``n_Q`` at every jump in ``[-window, window]``
    and at the window ends; the sup of ``|n_Q(t) - c t|`` is attained there."""
    P = as_poleset(Q)
    inside = np.abs(P.values) <= window
    a, o = P.anchors[inside], P.offsets[inside]
    n_at = np.atleast_1d(counting(P, a, o))
    q = a + o
    # n_Q jumps by one across each pole; collect both one-sided values
    other = np.where(q >= 0, n_at + 1, n_at - 1)
    ends = np.array([-float(window), float(window)])
    n_ends = np.atleast_1d(counting(P, ends))
    t = np.concatenate([q, q, ends])
    n = np.concatenate([n_at, other, n_ends])
    return t, n


def density_deviation(Q, eps_hat: float, window: float, radii=None, exponent: float = 2 / 3) -> dict:
    """Normalized deviation ``max_t |n_Q(t) - (1 - eps_hat) t| / (1 + |t|**exponent)``.

    The maximum is reported on ``[-window, window]`` and on nested
    sub-windows ``radii`` to show the trend with window size.
    """
    t, n = jump_profile(Q, window)
    stat = np.abs(n - (1.0 - eps_hat) * t) / (1.0 + np.abs(t) ** exponent)
    radii = sorted(radii) if radii is not None else [window / 4, window / 2, window]
    profile = [float(np.max(stat[np.abs(t) <= R], initial=0.0)) for R in radii]
    return {"statistic": float(np.max(stat, initial=0.0)), "radii": [float(r) for r in radii],
            "profile": profile, "eps_hat": float(eps_hat)}


def nearest_distance(Q, z) -> np.ndarray:
    """Distance from each ``z`` to the nearest point of ``Q``."""
    P = as_poleset(Q)
    z = np.asarray(z)
    if len(P) == 0:
        return np.full(z.shape, np.inf)
    qf = P.values
    i = np.clip(np.searchsorted(qf, z.real), 1, len(qf) - 1) if len(qf) > 1 else np.zeros(z.shape, int)
    d = np.abs(z - qf[i])
    if len(qf) > 1:
        d = np.minimum(d, np.abs(z - qf[i - 1]))
    return d


def growth_grid(x_range, y_range, nx: int, ny: int, x_shift: float = 0.25):
    x = np.linspace(x_range[0], x_range[1], nx) + x_shift
    y = np.linspace(y_range[0], y_range[1], ny)
    return (x[None, :] + 1j * y[:, None]).ravel()


def growth_check(F, Q=None, x_range=(-1000, 1000), y_range=(-5, 5), nx=2001, ny=11,
                 x_shift: float = 0.25) -> dict:
    """``max |F(z)| min(1, dist(z, Q))`` over a rectangular grid."""
    Q = as_poleset(F if Q is None else Q)
    z = growth_grid(x_range, y_range, nx, ny, x_shift)
    vals = np.abs(F(z)) * np.minimum(1.0, nearest_distance(Q, z))
    i = int(np.argmax(vals))
    return {"statistic": float(vals[i]), "argmax": [float(z[i].real), float(z[i].imag)],
            "x_range": list(map(float, x_range)), "y_range": list(map(float, y_range)),
            "points": int(z.size)}


def linear_density(L, radii) -> dict:
    """``card(L cap [-R, R]) / (2R)`` for each ``R``."""
    P = as_poleset(L)
    R = np.asarray(radii, dtype=float)
    n = P.count_below(R) + _count_equal(P, R) - P.count_below(-R)
    return {"radii": R.tolist(), "ratios": (n / (2.0 * R)).tolist()}


def bm_density_proxy(L, lengths=(64, 128, 256), window: float | None = None) -> dict:
    """Max over half-open intervals ``[l_k, l_k + len)`` of ``card / len``.

    A finite-data stand-in for the Beurling-Malliavin density; intervals
    start at points of ``L`` and must end inside ``[-window, window]``.
    """
    P = as_poleset(L)
    if len(P) == 0:
        return {"lengths": list(lengths), "proxy": [0.0] * len(lengths)}
    window = float(np.max(np.abs(P.values))) if window is None else float(window)
    out = []
    start = P.count_below(P.anchors, P.offsets)
    for ell in lengths:
        keep = P.values + ell <= window
        if not np.any(keep):
            out.append(0.0)
            continue
        end = P.count_below(P.anchors[keep] + int(ell), P.offsets[keep])
        out.append(float(np.max(end - start[keep])) / ell)
    return {"lengths": list(lengths), "proxy": out}

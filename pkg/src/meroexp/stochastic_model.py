"""Weight functions, seeded Gaussian coefficient draws and the normalized
target sequence fed to the interpolation solver.

Indices live on a symmetric integer window ``-M..M`` with ``M = n + margin``;
arrays are stored with offset ``M`` so that ``values[m + M]`` is the entry at
integer ``m``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODES = ("real", "complex")


class WeightError(ValueError):
    """Raised when a weight fails the admissibility checks."""


class TargetNormError(ValueError):
    """Raised when the normalized target exceeds the 3/4 sup-norm budget."""


@dataclass(frozen=True)
class Weight:
    """Power-law weight ``(1 + |x|)**(-beta)``, even in ``x``."""

    beta: float = 0.75
    family: str = "power"

    def __post_init__(self):
        if self.family != "power":
            raise WeightError(f"unknown weight family {self.family!r}")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        return (1.0 + x) ** (-self.beta)


@dataclass(frozen=True)
class WeightReport:
    beta: float
    delta: float
    floor_min: float
    doubling_min: float
    decreasing: bool
    square_summable: bool


def _dense_grid(xmax=1e6):
    return np.unique(np.concatenate([
        np.linspace(0.0, 10.0, 2001),
        np.geomspace(10.0, xmax, 20001),
    ]))


def validate_weight(w: Weight, grid=None) -> WeightReport:
    """Check the weight hypotheses on a dense grid and return the floor constant.

    The floor condition ``x w(x) >= delta`` is tested for ``x >= 1`` and the
    doubling condition ``w(2x) >= delta w(x)`` for ``x >= 0``. The reported
    ``delta`` is the largest value in ``(0, 1]`` satisfying both on the grid.
    """
    beta = float(w.beta)
    if not beta > 0.5:
        raise WeightError(f"beta={beta}: weight is not square summable (need beta > 1/2)")
    if beta > 1.0:
        raise WeightError(f"beta={beta}: x*w(x) -> 0, floor condition fails (need beta <= 1)")

    x = _dense_grid() if grid is None else np.asarray(grid, dtype=float)
    wx = w(x)
    decreasing = bool(np.all(np.diff(wx) <= 0.0)) and bool(np.all((wx > 0) & (wx <= 1)))
    floor_min = float(np.min(x[x >= 1.0] * wx[x >= 1.0]))
    doubling_min = float(np.min(w(2.0 * x) / wx))
    delta = min(1.0, floor_min, doubling_min)
    if not (decreasing and delta > 0.0):
        raise WeightError(f"beta={beta}: monotonicity or floor check failed")
    return WeightReport(beta=beta, delta=delta, floor_min=floor_min,
                        doubling_min=doubling_min, decreasing=decreasing,
                        square_summable=True)


def shell_order(M: int) -> np.ndarray:
    """Integers ``0, 1, -1, 2, -2, ...`` up to ``+-M``.

    Sampling in this order keeps draws nested: the values at ``|m| <= M`` do
    not depend on how large a window was requested.
    """
    k = np.arange(1, M + 1)
    out = np.empty(2 * M + 1, dtype=np.int64)
    out[0] = 0
    out[1::2] = k
    out[2::2] = -k
    return out


@dataclass(frozen=True)
class GaussianDraw:
    seed: int | None
    mode: str
    n: int
    margin: int
    values: np.ndarray = field(repr=False)
    c_zeta: float = 0.0

    @property
    def half_width(self) -> int:
        return self.n + self.margin

    @property
    def indices(self) -> np.ndarray:
        M = self.half_width
        return np.arange(-M, M + 1)

    def at(self, m):
        return self.values[np.asarray(m) + self.half_width]

    @classmethod
    def from_values(cls, values, mode="real", margin=3, seed=None):
        """Wrap an explicit sequence on ``-M..M`` (test hook)."""
        values = np.asarray(values, dtype=complex if mode == "complex" else float)
        M = (len(values) - 1) // 2
        if len(values) != 2 * M + 1:
            raise ValueError("window must have odd length")
        return cls(seed=seed, mode=mode, n=M - margin, margin=margin,
                   values=values, c_zeta=envelope_constant(values))

    @classmethod
    def zeros(cls, n, mode="real", margin=3):
        M = n + margin
        dtype = complex if mode == "complex" else float
        return cls.from_values(np.zeros(2 * M + 1, dtype=dtype), mode=mode, margin=margin)


def envelope_constant(values) -> float:
    """Smallest ``C >= 0`` with ``|zeta_m| <= C + m**2`` on the window."""
    M = (len(values) - 1) // 2
    m = np.arange(-M, M + 1, dtype=float)
    return float(max(0.0, np.max(np.abs(values) - m * m)))


def sample(seed: int, mode: str = "real", n: int = 2000, margin: int = 3) -> GaussianDraw:
    """Seeded i.i.d. standard Gaussian sequence on ``|m| <= n + margin``.

    Real mode draws N(0, 1); complex mode draws real and imaginary parts
    independently from N(0, 1/2).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if n < 1:
        raise ValueError("n must be >= 1")
    M = n + margin
    rng = np.random.default_rng(seed)
    order = shell_order(M)
    if mode == "real":
        raw = rng.standard_normal(2 * M + 1)
        values = np.empty(2 * M + 1)
    else:
        pairs = rng.standard_normal((2 * M + 1, 2)) / np.sqrt(2.0)
        raw = pairs[:, 0] + 1j * pairs[:, 1]
        values = np.empty(2 * M + 1, dtype=complex)
    values[order + M] = raw
    return GaussianDraw(seed=seed, mode=mode, n=n, margin=margin,
                        values=values, c_zeta=envelope_constant(values))


@dataclass(frozen=True)
class TargetSequence:
    """Normalized right-hand side of the interpolation system.

    ``kind`` is 0 on singletons and 1, 2, 3 at positions ``Tn-1, Tn, Tn+1``
    of a selected block; ``block`` holds the block index ``n`` (or 0).
    """

    values: np.ndarray = field(repr=False)
    kind: np.ndarray = field(repr=False)
    block: np.ndarray = field(repr=False)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def target_sequence(draw: GaussianDraw, w: Weight, partition, K: float) -> TargetSequence:
    """``eta_m = zeta_m / (K (m^2 + 1))`` on singletons and
    ``zeta_m w(m) / w(Tn)`` on the selected blocks."""
    m = draw.indices.astype(float)
    eta = draw.values / (K * (m * m + 1.0))
    kind = np.zeros(m.size, dtype=np.int8)
    block = np.zeros(m.size, dtype=np.int64)
    M = draw.half_width
    T = partition.T
    for n in partition.S:
        c = T * n
        for pos, mm in enumerate((c - 1, c, c + 1), start=1):
            eta[mm + M] = draw.values[mm + M] * w(mm) / w(c)
            kind[mm + M] = pos
            block[mm + M] = n
    target = TargetSequence(values=eta, kind=kind, block=block)
    if target.sup_norm > 0.75:
        raise TargetNormError(f"||eta||_inf = {target.sup_norm:.4g} > 3/4; increase K")
    return target

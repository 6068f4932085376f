"""Block partition, the operators ``W`` and ``V``, the fixed-point iteration
and assembly of the Cauchy-kernel interpolant ``F``.

Sequences live on the window ``-M..M`` as arrays with offset ``M``. In
complex mode the sup norm of a sequence is the max over real and imaginary
parts, matching the max-norm balls of the complex chart.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .local_map import ChartError, LocalChart, PoleEvaluationError, default_chart
from .stochastic_model import GaussianDraw, TargetNormError, Weight, target_sequence

log = logging.getLogger(__name__)

NEAR_EPS = 1e-8


class MembershipError(ChartError):
    """A sequence left ``E_{1,gamma1}`` or ``E_{2,gamma2}``."""

    def __init__(self, msg, block=None):
        super().__init__(msg)
        self.block = block


class SolverError(RuntimeError):
    """Fixed-point iteration failed; ``trace`` holds the step history."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or {}


class SelectionError(RuntimeError):
    """No admissible ``(K, T)`` within the doubling budget."""


def seq_norm(x) -> float:
    x = np.asarray(x)
    if x.size == 0:
        return 0.0
    if np.iscomplexobj(x):
        return float(max(np.max(np.abs(x.real)), np.max(np.abs(x.imag))))
    return float(np.max(np.abs(x)))


# --- partition --------------------------------------------------------------------

@dataclass(frozen=True)
class BlockPartition:
    """Selected blocks ``S`` and singletons ``U`` on the window ``-M..M``.

    ``Delta_n = {Tn-1, Tn, Tn+1}``; ``n_candidates`` counts the blocks fully
    inside the window, which is the denominator of the selection rate.
    """

    T: int
    M: int
    S: np.ndarray
    n_candidates: int
    radius: float = 0.0

    @property
    def size(self) -> int:
        return 2 * self.M + 1

    @property
    def p_hat(self) -> float:
        return len(self.S) / self.n_candidates if self.n_candidates else 0.0

    @property
    def eps_hat(self) -> float:
        """Pole deficit per integer, ``p_hat / T``."""
        return self.p_hat / self.T

    @property
    def centers(self) -> np.ndarray:
        return self.T * np.asarray(self.S, dtype=np.int64)

    @property
    def block_rows(self) -> np.ndarray:
        """Array indices of the block entries, shape ``(|S|, 3)``."""
        c = self.centers + self.M
        return np.stack([c - 1, c, c + 1], axis=-1).reshape(-1, 3)

    @property
    def kind(self) -> np.ndarray:
        k = np.zeros(self.size, dtype=np.int8)
        for pos in range(3):
            k[self.block_rows[:, pos]] = pos + 1
        return k

    @property
    def block_of(self) -> np.ndarray:
        """Row-wise index into ``S`` (``-1`` on singletons)."""
        b = np.full(self.size, -1, dtype=np.int64)
        for i, rows in enumerate(self.block_rows):
            b[rows] = i
        return b

    @property
    def U_mask(self) -> np.ndarray:
        return self.kind == 0

    @property
    def U(self) -> np.ndarray:
        return np.flatnonzero(self.U_mask) - self.M


def candidate_blocks(M: int, T: int) -> np.ndarray:
    nmax = (M - 1) // T
    return np.arange(-nmax, nmax + 1, dtype=np.int64)


def block_triples(draw: GaussianDraw, w: Weight, T: int, blocks=None) -> tuple[np.ndarray, np.ndarray]:
    """Normalized triples ``(zeta_{Tn-1} w(Tn-1)/w(Tn), zeta_{Tn}, zeta_{Tn+1} w(Tn+1)/w(Tn))``."""
    n = candidate_blocks(draw.half_width, T) if blocks is None else np.asarray(blocks, dtype=np.int64)
    c = T * n
    ratio = np.stack([w(c - 1) / w(c), np.ones(c.shape), w(c + 1) / w(c)], axis=-1)
    vals = np.stack([draw.at(c - 1), draw.at(c), draw.at(c + 1)], axis=-1)
    return n, vals * ratio


def partition(draw: GaussianDraw, w: Weight, chart: LocalChart | None = None, T: int = 100,
              radius: float | None = None) -> BlockPartition:
    """Select blocks whose normalized triple lies in ``D(L A*, radius)``.

    ``radius`` defaults to ``gamma2 / 4``; membership is strict.
    """
    if T < 3:
        raise ValueError("block spacing T must be >= 3")
    chart = chart or default_chart(draw.mode)
    radius = chart.gamma2 / 4 if radius is None else radius
    n, y = block_triples(draw, w, T)
    sel = chart.dist_image(y) < radius if len(n) else np.zeros(0, dtype=bool)
    return BlockPartition(T=T, M=draw.half_width, S=n[sel], n_candidates=len(n), radius=radius)


def plant_blocks(draw: GaussianDraw, w: Weight, T: int, blocks, chart: LocalChart | None = None,
                 shift=None) -> GaussianDraw:
    """Test hook: overwrite ``zeta`` on the given blocks so that their
    normalized triple equals ``L A* + shift``."""
    chart = chart or default_chart(draw.mode)
    target = chart.image + (0 if shift is None else np.asarray(shift))
    vals = draw.values.copy()
    M = draw.half_width
    for n in blocks:
        c = T * int(n)
        vals[c - 1 + M] = target[0] * w(c) / w(c - 1)
        vals[c + M] = target[1]
        vals[c + 1 + M] = target[2] * w(c) / w(c + 1)
    return GaussianDraw.from_values(vals, mode=draw.mode, margin=draw.margin, seed=draw.seed)


# --- Cauchy kernel sums --------------------------------------------------------------

@dataclass(frozen=True)
class CauchyKernelSum:
    """``F(z) = sum_j residue_j / (z - q_j)`` with ``q_j = anchor_j + offset_j``.

    Poles are stored as an integer anchor plus a small offset because the
    singleton offsets fall far below the float spacing at the anchor.
    ``kind`` is 0 for singleton poles and 1 for block poles; ``source`` is
    the singleton integer or the block index ``n``.
    """

    anchors: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    residues: np.ndarray = field(repr=False)
    kind: np.ndarray = field(repr=False)
    source: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.anchors)

    @property
    def poles(self) -> np.ndarray:
        return self.anchors + self.offsets

    def order(self) -> np.ndarray:
        return np.lexsort((self.offsets, self.anchors))

    def sorted(self) -> "CauchyKernelSum":
        o = self.order()
        return CauchyKernelSum(self.anchors[o], self.offsets[o], self.residues[o],
                               self.kind[o], self.source[o])

    def nonzero(self) -> "CauchyKernelSum":
        keep = self.residues != 0
        return CauchyKernelSum(self.anchors[keep], self.offsets[keep], self.residues[keep],
                               self.kind[keep], self.source[keep])

    def differences(self, z):
        """Matrix of ``z - q`` computed as ``(z - anchor_j) - offset_j``."""
        z = np.asarray(z)
        return (z[:, None] - self.anchors[None, :]) - self.offsets[None, :]

    def __call__(self, z, chunk=2048, exclude=None):
        """Evaluate at the points ``z``; ``exclude`` is an optional boolean
        mask of poles to leave out."""
        z = np.atleast_1d(np.asarray(z))
        res = self.residues if exclude is None else np.where(exclude, 0, self.residues)
        out = np.zeros(z.shape, dtype=complex)
        flat = z.ravel()
        o = out.reshape(-1)
        step = max(1, int(chunk * 4096 / max(len(self), 1)))
        for i in range(0, flat.size, step):
            d = self.differences(flat[i:i + step])
            if np.any(d == 0):
                raise PoleEvaluationError("F evaluated at a pole")
            o[i:i + step] = (res[None, :] / d).sum(axis=1)
        if np.isrealobj(z) and np.isrealobj(self.residues):
            return out.real
        return out

    def to_arrays(self) -> dict:
        return {"anchors": self.anchors, "offsets": self.offsets, "residues": self.residues,
                "kind": self.kind, "source": self.source}


# --- the truncated system ------------------------------------------------------------

def _signed_kernels(n):
    d = np.arange(-(n - 1), n, dtype=float)
    with np.errstate(divide="ignore"):
        k1 = np.where(d == 0, 0.0, 1.0 / d)
        k2 = np.where(d == 0, 0.0, 1.0 / (d * d))
    return k1, k2


def _conv(c, k, n):
    if np.iscomplexobj(c):
        return _conv(c.real, k, n) + 1j * _conv(c.imag, k, n)
    return fftconvolve(c, k)[n - 1:2 * n - 1]


@dataclass
class InterpolationSystem:
    """The truncated nonlinear system ``W alpha + V alpha = eta``."""

    partition: BlockPartition
    w: Weight
    K: float
    chart: LocalChart
    mode: str = "real"

    def __post_init__(self):
        P = self.partition
        M = P.M
        self.m = np.arange(-M, M + 1)
        mf = self.m.astype(float)
        self.U_mask = P.U_mask
        self.rows = P.block_rows
        self.centers = P.centers
        self.wc = self.w(self.centers)
        self.eps = 1.0 / (self.K ** 2 * (mf * mf + 1.0) ** 2)
        # residue per unit alpha on singletons
        self.gain = np.where(self.U_mask, self.w(mf) / (self.K * (mf * mf + 1.0)), 0.0)
        self.scale = np.empty(P.size)
        self.scale[self.U_mask] = 1.0 / (self.K * self.w(mf[self.U_mask]) * (mf[self.U_mask] ** 2 + 1.0))
        bo = P.block_of
        if len(self.centers):
            self.scale[~self.U_mask] = 1.0 / self.wc[bo[~self.U_mask]]
        self.block_of = bo
        self.k1, self.k2 = _signed_kernels(P.size)
        self.near = np.flatnonzero(self.U_mask & (self.eps >= NEAR_EPS))
        self.dtype = complex if self.mode == "complex" else float

    # W and its inverse
    def apply_W(self, a):
        out = np.array(a, dtype=self.dtype, copy=True)
        if len(self.rows):
            out[self.rows] = self.chart.L(out[self.rows])
        return out

    def invert_W(self, x, check=True):
        x = np.asarray(x, dtype=self.dtype)
        if check:
            self.check_E2(x, self.chart.gamma2)
        out = x.copy()
        if len(self.rows):
            try:
                out[self.rows] = np.atleast_2d(self.chart.invert(x[self.rows]))
            except ChartError as exc:
                raise MembershipError(f"block inversion failed: {exc}") from exc
        if check:
            self.check_E1(out, self.chart.gamma1)
        return out

    def check_E1(self, a, gamma):
        if seq_norm(a) > 1.0:
            raise MembershipError(f"||a|| = {seq_norm(a):.4g} > 1")
        if len(self.rows):
            d = self.chart.dist_base(a[self.rows])
            if np.any(d >= gamma):
                i = int(np.argmax(d))
                raise MembershipError(f"block {self.partition.S[i]} outside D(A*, {gamma:.4g})",
                                      block=int(self.partition.S[i]))

    def check_E2(self, x, gamma):
        if seq_norm(x) > 1.0:
            raise MembershipError(f"||x|| = {seq_norm(x):.4g} > 1")
        if len(self.rows):
            d = self.chart.dist_image(x[self.rows])
            if np.any(d >= gamma):
                i = int(np.argmax(d))
                raise MembershipError(f"block {self.partition.S[i]} outside D(LA*, {gamma:.4g})",
                                      block=int(self.partition.S[i]))

    def in_E1(self, a, gamma=None) -> bool:
        try:
            self.check_E1(a, self.chart.gamma1 if gamma is None else gamma)
        except MembershipError:
            return False
        return True

    def in_E2(self, x, gamma=None) -> bool:
        try:
            self.check_E2(x, self.chart.gamma2 if gamma is None else gamma)
        except MembershipError:
            return False
        return True

    # V
    def singleton_sums(self, a):
        """``sum_{s in U, s != m} c_s / (m - s + eps_s)`` for every row ``m``."""
        n = self.partition.size
        c = self.gain * np.asarray(a)
        out = _conv(c, self.k1, n) - _conv(c * self.eps, self.k2, n)
        if self.near.size:
            d = (self.m[None, :] - self.m[self.near, None]).astype(float)
            e = self.eps[self.near, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                corr = 1.0 / (d + e) - 1.0 / d + e / (d * d)
            corr[d == 0] = 0.0
            out = out + c[self.near] @ corr
        return out

    def block_sums(self, a):
        """Contribution of all other blocks' kernels to each row."""
        out = np.zeros(self.partition.size, dtype=self.dtype)
        if not len(self.rows):
            return out
        triples = np.asarray(a, dtype=self.dtype)[self.rows]
        for i, (c, wc) in enumerate(zip(self.centers, self.wc)):
            x = (self.m - c).astype(float)
            mask = self.block_of != i
            out[mask] += wc * self.chart.kernel(triples[i], x[mask])
        return out

    def apply_V(self, a):
        rest = self.singleton_sums(a) + self.block_sums(a)
        return self.scale * rest

    def residual(self, alpha, eta) -> float:
        return seq_norm(self.apply_W(alpha) + self.apply_V(alpha) - eta)

    # Lipschitz majorant of V on E_{1,gamma1}
    def majorant_parts(self):
        """Row-wise majorant of ``||V x - V y|| / ||x - y||`` split into the
        singleton part and the block part."""
        n = self.partition.size
        k1 = np.abs(self.k1)
        # 1/|d + eps| <= 1/|d| + (4/3) eps / d^2 since eps <= 1/4 <= |d|/4
        sing = _conv(self.gain, k1, n) + (4.0 / 3.0) * _conv(self.gain * self.eps, self.k2, n)
        blk = np.zeros(n)
        for i, (c, wc) in enumerate(zip(self.centers, self.wc)):
            mask = self.block_of != i
            blk[mask] += wc * self.chart.lipschitz_kernel(self.m[mask] - c)
        factor = np.sqrt(2.0) if self.mode == "complex" else 1.0
        return factor * self.scale * sing, factor * self.scale * blk

    def lipschitz_majorant(self) -> float:
        s, b = self.majorant_parts()
        return float(np.max(s + b))

    # assembly
    def kernel_sum(self, alpha) -> CauchyKernelSum:
        alpha = np.asarray(alpha, dtype=self.dtype)
        U = np.flatnonzero(self.U_mask)
        anchors = [self.m[U]]
        offsets = [-self.eps[U]]
        residues = [alpha[U] * self.gain[U]]
        kind = [np.zeros(U.size, dtype=np.int8)]
        source = [self.m[U]]
        if len(self.rows):
            (o1, o2), (r1, r2) = self.chart.pole_offsets(alpha[self.rows])
            for o, r in ((o1, r1), (o2, r2)):
                anchors.append(self.centers)
                offsets.append(np.asarray(o, dtype=float))
                residues.append(self.wc * r)
                kind.append(np.ones(len(self.centers), dtype=np.int8))
                source.append(self.partition.S)
        res = np.concatenate(residues).astype(self.dtype)
        return CauchyKernelSum(np.concatenate(anchors).astype(np.int64), np.concatenate(offsets),
                               res, np.concatenate(kind), np.concatenate(source).astype(np.int64)).sorted()


# --- parameter selection ------------------------------------------------------------------

@dataclass
class Selection:
    tau: float
    K: float
    T: int
    partition: BlockPartition
    eta: np.ndarray = field(repr=False)
    system: InterpolationSystem = field(repr=False)
    last2: float = 0.0
    last4: float = 0.0
    trials: list = field(default_factory=list)


def select_parameters(draw: GaussianDraw, w: Weight, chart: LocalChart | None = None, T: int = 100,
                      tau: float | None = None, max_doublings: int = 30,
                      K0: float | None = None) -> Selection:
    """Fix ``tau`` below ``min(gamma1, gamma2) / 4`` and double ``K`` or ``T``
    until ``||V W^-1 eta|| <= tau`` and the Lipschitz majorant of ``V`` is
    at most ``tau`` on the realized draw."""
    chart = chart or default_chart(draw.mode)
    tau_max = min(chart.gamma1, chart.gamma2) / 4
    tau = 0.99 * tau_max if tau is None else float(tau)
    if not 0 < tau < tau_max:
        raise SelectionError(f"tau={tau} must lie in (0, {tau_max:.4g})")
    K = max(2.0, 2.0 * draw.c_zeta) if K0 is None else float(K0)
    trials = []
    for _ in range(max_doublings + 1):
        part = partition(draw, w, chart, T)
        trial = {"K": K, "T": T, "S": len(part.S)}
        try:
            eta = target_sequence(draw, w, part, K).values
        except TargetNormError as exc:
            trial.update(ok=False, reason=str(exc))
            trials.append(trial)
            K *= 2
            continue
        system = InterpolationSystem(part, w, K, chart, draw.mode)
        sing, blk = system.majorant_parts()
        last4 = float(np.max(sing + blk))
        try:
            last2 = seq_norm(system.apply_V(system.invert_W(eta)))
        except MembershipError as exc:
            last2 = np.inf
            trial["reason"] = str(exc)
        trial.update(last2=last2, last4=last4, ok=bool(last2 <= tau and last4 <= tau))
        trials.append(trial)
        if trial["ok"]:
            return Selection(tau=tau, K=K, T=T, partition=part, eta=eta, system=system,
                             last2=last2, last4=last4, trials=trials)
        # block-to-block interaction does not shrink with K
        bb = float(np.max(blk[~part.U_mask])) if len(part.S) else 0.0
        if bb > tau / 2:
            T *= 2
        else:
            K *= 2
    raise SelectionError(f"no admissible (K, T) after {max_doublings} doublings: {trials[-1]}")


# --- fixed-point iteration ------------------------------------------------------------------

@dataclass
class CoefState:
    alpha: np.ndarray = field(repr=False)
    iterations: int
    steps: list
    ratios: list
    residual: float
    in_E1: bool
    in_E2: bool
    converged: bool

    def trace(self) -> dict:
        return {"iterations": self.iterations, "steps": list(self.steps), "ratios": list(self.ratios)}


def solve(eta, system: InterpolationSystem, tol: float = 1e-12, max_iter: int = 30,
          ratio_floor: float = 1e-14) -> CoefState:
    """Iterate ``alpha(j+1) = W^-1 (eta - V alpha(j))`` from ``alpha(0) = W^-1 eta``.

    Membership of every iterate in ``E_{1,gamma1}`` and of every
    ``eta - V alpha(j)`` in ``E_{2,gamma2}`` is checked; a violation or a
    missing convergence raises :class:`SolverError` carrying the trace.
    """
    eta = np.asarray(eta, dtype=system.dtype)
    steps, ratios = [], []

    def fail(msg):
        raise SolverError(msg, {"iterations": len(steps), "steps": steps, "ratios": ratios})

    try:
        system.check_E2(eta, system.chart.gamma2 / 4)
        alpha = system.invert_W(eta)
    except MembershipError as exc:
        fail(f"initial state: {exc}")
    for j in range(max_iter):
        x = eta - system.apply_V(alpha)
        try:
            new = system.invert_W(x)
        except MembershipError as exc:
            fail(f"iteration {j + 1}: {exc}")
        step = seq_norm(new - alpha)
        if steps and steps[-1] > ratio_floor and step > ratio_floor:
            ratios.append(step / steps[-1])
        steps.append(step)
        alpha = new
        if not np.isfinite(step):
            fail(f"iteration {j + 1}: non-finite step")
        if step <= tol:
            break
    else:
        fail(f"no convergence in {max_iter} iterations (last step {steps[-1]:.3g})")
    return CoefState(alpha=alpha, iterations=len(steps), steps=steps, ratios=ratios,
                     residual=system.residual(alpha, eta), in_E1=system.in_E1(alpha),
                     in_E2=system.in_E2(eta - system.apply_V(alpha)), converged=True)


def assemble_F(alpha, system: InterpolationSystem) -> CauchyKernelSum:
    return system.kernel_sum(alpha)


def interpolation_residuals(F: CauchyKernelSum, draw: GaussianDraw, w: Weight, buffer: int):
    """``|F(m) - zeta_m w(m)|`` on the interior ``|m| <= N - buffer`` and the edge."""
    m = draw.indices
    err = np.abs(F(m.astype(float)) - draw.values * w(m))
    interior = np.abs(m) <= draw.n - buffer
    return {
        "interior_max": float(err[interior].max()) if interior.any() else 0.0,
        "edge_max": float(err[~interior].max()) if (~interior).any() else 0.0,
        "interior_normalized": float((err / (w(m) * (m * m + 1.0)))[interior].max()) if interior.any() else 0.0,
    }


def lemma_checks(system: InterpolationSystem, eta, tau: float, pairs: int = 1000, seed: int = 0) -> dict:
    """Empirical Lipschitz ratios for ``W^-1`` and ``V`` on random pairs
    from the membership sets, together with ``||V W^-1 eta||``."""
    rng = np.random.default_rng(seed)
    chart = system.chart
    n = system.partition.size
    k = len(system.rows)

    def rand_seq(center_rows, center, gamma):
        if system.mode == "complex":
            x = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
        else:
            x = rng.uniform(-1, 1, n)
        if k:
            P = chart.to_params(center) + rng.uniform(-gamma, gamma, (k, chart.dim)) * 0.999
            x[center_rows] = chart.from_params(P) if system.mode == "complex" else P
        return x

    w_ratio, v_ratio = 0.0, 0.0
    rows = system.rows
    for _ in range(pairs):
        x = rand_seq(rows, chart.image, chart.gamma2)
        y = rand_seq(rows, chart.image, chart.gamma2)
        u = rng.random()
        if u < 1 / 3:
            # close pairs probe the local constant
            y = x + 1e-3 * (y - x)
        elif u < 2 / 3 and k:
            # differ on block entries only
            z = x.copy()
            z[rows] = y[rows]
            y = z
        d = seq_norm(x - y)
        w_ratio = max(w_ratio, seq_norm(system.invert_W(x, check=False) - system.invert_W(y, check=False)) / d)
    for _ in range(max(1, pairs // 10)):
        a = rand_seq(rows, chart.base, chart.gamma1)
        b = rand_seq(rows, chart.base, chart.gamma1)
        v_ratio = max(v_ratio, seq_norm(system.apply_V(a) - system.apply_V(b)) / seq_norm(a - b))
    return {
        "winv_lipschitz": w_ratio,
        "v_lipschitz_empirical": v_ratio,
        "v_lipschitz_majorant": system.lipschitz_majorant(),
        "v_winv_eta": seq_norm(system.apply_V(system.invert_W(eta))),
        "tau": tau,
    }

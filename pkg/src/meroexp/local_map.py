"""Two-kernel rational blocks, the local map onto three integer samples and
its inversion near the base point.

A block in real mode is parametrized by ``A = (A1, A2, A3)``::

    f_A(x) = A1 / (x + A2) - A1 / (x + A3)

and ``L(A) = (f_A(-1), f_A(0), f_A(1))``. In complex mode a block is
``g(x) = c1 / (x + p1) + c2 / (x + p2)`` with complex amplitudes and real
pole offsets, stored as the complex triple ``(c1, c2, p1 + 1j * p2)`` so that
it occupies the same three coefficient slots as a real block.

All balls ``D(X, r)`` are open balls in the max norm over the real
coordinates of ``X``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

NODES = np.array([-1.0, 0.0, 1.0])


class ChartDomainError(ValueError):
    """Parameters in the excluded set (a pole offset in {-1, 0, 1})."""


class PoleEvaluationError(ZeroDivisionError):
    """Kernel evaluated exactly at one of its poles."""


class ChartError(RuntimeError):
    """Newton inversion did not converge inside the chart."""


class RadiusError(ChartError):
    """Newton converged to a point outside ``D(base, gamma1)``."""


def _max_norm(x, axis=-1):
    return np.max(np.abs(x), axis=axis)


@dataclass(frozen=True)
class LocalChart:
    """Chart data shared by the real and complex local maps.

    ``gamma1``/``gamma2`` are the domain and image radii; ``lain_const`` and
    ``lar_const`` are the decay and Lipschitz constants of the block kernel
    for ``|x| >= 2`` (see :meth:`decay_bound`).
    """

    mode: str = "real"
    gamma1: float = 0.24
    gamma2: float = 0.019
    lipschitz_budget: float = 3.0
    newton_tol: float = 1e-13
    max_newton_iters: int = 50
    lain_const: float = 2.0
    lar_const: float = 8.0

    # --- parametrization -------------------------------------------------
    @property
    def dim(self) -> int:
        return 3 if self.mode == "real" else 6

    @property
    def dtype(self):
        return float if self.mode == "real" else complex

    @property
    def base(self) -> np.ndarray:
        """Base point as a coefficient triple."""
        if self.mode == "real":
            return np.array([1 / 8, -1 / 2, 1 / 2])
        return np.array([(1 + 1j) / 6, -(1 - 1j) / 6, -0.5 + 0.5j])

    @property
    def image(self) -> np.ndarray:
        return self.L(self.base)

    def to_params(self, triple) -> np.ndarray:
        t = np.asarray(triple)
        if self.mode == "real":
            return np.real(t).astype(float)
        return np.stack([t[..., 0].real, t[..., 0].imag, t[..., 1].real,
                         t[..., 1].imag, t[..., 2].real, t[..., 2].imag], axis=-1)

    def from_params(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        if self.mode == "real":
            return P.copy()
        return np.stack([P[..., 0] + 1j * P[..., 1], P[..., 2] + 1j * P[..., 3],
                         P[..., 4] + 1j * P[..., 5]], axis=-1)

    def to_real(self, values) -> np.ndarray:
        """Image triple as a real vector (identity in real mode)."""
        v = np.asarray(values)
        if self.mode == "real":
            return np.real(v).astype(float)
        return np.concatenate([v.real, v.imag], axis=-1)

    def from_real(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.mode == "real":
            return y.copy()
        return y[..., :3] + 1j * y[..., 3:]

    def pole_offsets(self, triple):
        """Pole offsets ``(o1, o2)`` and residues ``(r1, r2)`` of the block
        kernel: ``kernel(x) = r1 / (x - o1) + r2 / (x - o2)``."""
        t = np.asarray(triple)
        if self.mode == "real":
            t = np.real(t)
            return (-t[..., 1], -t[..., 2]), (t[..., 0], -t[..., 0])
        return (-t[..., 2].real, -t[..., 2].imag), (t[..., 0], t[..., 1])

    def in_gamma(self, triple) -> np.ndarray:
        (o1, o2), _ = self.pole_offsets(triple)
        bad = np.zeros(np.shape(o1), dtype=bool)
        for node in NODES:
            bad |= (o1 == -node) | (o2 == -node)
        return bad

    # --- the map ---------------------------------------------------------
    def kernel(self, triple, x):
        """Block kernel evaluated at offsets ``x`` (broadcasting over both)."""
        (o1, o2), (r1, r2) = self.pole_offsets(triple)
        x = np.asarray(x)
        d1 = x - o1
        d2 = x - o2
        if np.any(d1 == 0) or np.any(d2 == 0):
            raise PoleEvaluationError("block kernel evaluated at a pole")
        return r1 / d1 + r2 / d2

    def L(self, triple) -> np.ndarray:
        t = np.asarray(triple, dtype=self.dtype)
        if np.any(self.in_gamma(t)):
            raise ChartDomainError("parameters lie in the excluded set")
        return self.kernel(t[..., None, :], NODES)

    def values(self, P) -> np.ndarray:
        return self.to_real(self.L(self.from_params(P)))

    def jacobian(self, P) -> np.ndarray:
        """Analytic Jacobian of ``values`` with respect to the real parameters."""
        P = np.asarray(P, dtype=float)
        x = NODES
        if self.mode == "real":
            A1, A2, A3 = P[..., 0:1], P[..., 1:2], P[..., 2:3]
            u2 = 1.0 / (x + A2)
            u3 = 1.0 / (x + A3)
            return np.stack([u2 - u3, -A1 * u2 ** 2, A1 * u3 ** 2], axis=-1)
        c1 = P[..., 0:1] + 1j * P[..., 1:2]
        c2 = P[..., 2:3] + 1j * P[..., 3:4]
        u1 = 1.0 / (x + P[..., 4:5])
        u2 = 1.0 / (x + P[..., 5:6])
        cols = [u1 + 0j, 1j * u1, u2 + 0j, 1j * u2, -c1 * u1 ** 2, -c2 * u2 ** 2]
        cols = [np.concatenate([c.real, c.imag], axis=-1) for c in cols]
        return np.stack(cols, axis=-1)

    def newton(self, y_real, start=None):
        """Batched Newton solve of ``values(P) = y``.

        Returns ``(P, residual, converged)`` with one row per target.
        """
        y = np.atleast_2d(np.asarray(y_real, dtype=float))
        P = np.broadcast_to(self.to_params(self.base) if start is None else start,
                            y.shape).copy()
        res = self._residual(P, y)
        for _ in range(self.max_newton_iters):
            active = np.flatnonzero(np.isfinite(res) & (res > self.newton_tol))
            if active.size == 0:
                break
            J = self.jacobian(P[active])
            r = self.values_unchecked(P[active]) - y[active]
            good = np.abs(np.linalg.det(J)) > 1e-14
            res[active[~good]] = np.inf
            active, J, r = active[good], J[good], r[good]
            P[active] -= np.linalg.solve(J, r[..., None])[..., 0]
            res[active] = self._residual(P[active], y[active])
        return P, res, res <= self.newton_tol

    def values_unchecked(self, P):
        """``values`` without the excluded-set check; pole hits give inf/nan."""
        with np.errstate(divide="ignore", invalid="ignore"):
            (o1, o2), (r1, r2) = self.pole_offsets(self.from_params(P)[..., None, :])
            return self.to_real(r1 / (NODES - o1) + r2 / (NODES - o2))

    def _residual(self, P, y):
        r = _max_norm(self.values_unchecked(P) - y)
        return np.where(np.isfinite(r), r, np.inf)

    def invert(self, y, check_radius=True) -> np.ndarray:
        """Inverse of ``L`` on ``D(image, gamma2)``, valued in ``D(base, gamma1)``.

        Accepts a single triple or a stack of triples.
        """
        y = np.asarray(y, dtype=self.dtype)
        single = y.ndim == 1
        P, res, ok = self.newton(self.to_real(np.atleast_2d(y)))
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise ChartError(f"Newton did not converge for target {bad} (residual {res[bad]:.3g})")
        if check_radius:
            dist = _max_norm(P - self.to_params(self.base))
            if np.any(dist >= self.gamma1):
                bad = int(np.argmax(dist))
                raise RadiusError(f"preimage {bad} at distance {dist[bad]:.4g} >= gamma1={self.gamma1}")
        out = self.from_params(P)
        return out[0] if single else out

    def dist_base(self, triple) -> np.ndarray:
        return _max_norm(self.to_params(triple) - self.to_params(self.base))

    def dist_image(self, values) -> np.ndarray:
        return _max_norm(self.to_real(values) - self.to_real(self.image))

    def lipschitz_kernel(self, x):
        """Bound on ``|k_A(x) - k_A'(x)| / ||A - A'||`` for ``|x| >= 2``."""
        x = np.abs(np.asarray(x, dtype=float))
        if self.mode == "real":
            return self.lar_const / (x * x + 1.0)
        return self.lar_const / (x + 1.0)

    def decay_bound(self, z):
        r = np.abs(np.asarray(z))
        if self.mode == "real":
            return self.lain_const / (r * r + 1.0)
        return self.lain_const / (r + 1.0)


# Radii certified by :func:`sweep_chart` (mesh 7 per axis, ratio 0.9 sweep
# from 0.24); frozen so runs do not depend on re-certification.
REAL_CHART = LocalChart(mode="real", gamma1=0.24, gamma2=0.24 * 0.9 ** 24)
COMPLEX_CHART = LocalChart(mode="complex", gamma1=0.24 * 0.9 ** 5, gamma2=0.24 * 0.9 ** 13)


def default_chart(mode="real") -> LocalChart:
    return REAL_CHART if mode == "real" else COMPLEX_CHART


# --- module-level operations -------------------------------------------------

def eval_kernel(A, z, mode="real"):
    """Value of the two-kernel block with parameters ``A`` at ``z``."""
    return LocalChart(mode=mode).kernel(np.asarray(A), z)


def eval_L(A, mode="real"):
    return LocalChart(mode=mode).L(A)


def jacobian_L(A, mode="real"):
    chart = LocalChart(mode=mode)
    return chart.jacobian(chart.to_params(np.asarray(A)))


def invert_L(y, chart: LocalChart | None = None):
    chart = chart or REAL_CHART
    return chart.invert(y)


# --- certification -------------------------------------------------------------

@dataclass
class ChartCertificate:
    mode: str
    gamma1: float
    gamma2: float
    passed: bool
    checks: dict = field(default_factory=dict)
    counterexample: dict | None = None


def _cube_mesh(center, radius, n):
    t = np.linspace(-1.0, 1.0, n)
    offs = np.array(list(itertools.product(t, repeat=len(center))))
    return center + radius * offs


def _decay_samples():
    r = np.geomspace(2.0, 1e3, 40)
    th = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)
    z = (r[:, None] * np.exp(1j * th[None, :])).ravel()
    x = np.concatenate([-r, r])
    return z, x


def _kernel_gradient_l1(chart: LocalChart, P, x):
    """``sum_k |d kernel(x) / d P_k|`` for each parameter row and offset."""
    P = P[:, None, :]
    x = x[None, :]
    if chart.mode == "real":
        A1, A2, A3 = P[..., 0], P[..., 1], P[..., 2]
        u2, u3 = 1.0 / (x + A2), 1.0 / (x + A3)
        return np.abs(u2 - u3) + np.abs(A1) * (u2 ** 2 + u3 ** 2)
    c1 = np.abs(P[..., 0] + 1j * P[..., 1])
    c2 = np.abs(P[..., 2] + 1j * P[..., 3])
    u1, u2 = np.abs(1.0 / (x + P[..., 4])), np.abs(1.0 / (x + P[..., 5]))
    return 2 * u1 + 2 * u2 + c1 * u1 ** 2 + c2 * u2 ** 2


def check_domain(chart: LocalChart, gamma1: float, mesh: int = 7) -> dict:
    """Checks that only involve ``D(base, gamma1)``: invertible Jacobian
    with constant sign of the determinant, the decay bound and the kernel
    Lipschitz bound. Returns a dict with ``ok`` and diagnostics."""
    shrink = gamma1 * (1 - 1e-9)
    base = chart.to_params(chart.base)
    P = _cube_mesh(base, shrink, mesh)
    if np.any(chart.in_gamma(chart.from_params(P))):
        return {"ok": False, "reason": "excluded set", "point": P[0].tolist()}
    det = np.linalg.det(chart.jacobian(P))
    det0 = np.linalg.det(chart.jacobian(base))
    if np.any(np.sign(det) != np.sign(det0)) or np.min(np.abs(det)) < 1e-8:
        i = int(np.argmin(np.abs(det)))
        return {"ok": False, "reason": "singular Jacobian", "point": P[i].tolist()}

    Pd = _cube_mesh(base, shrink, min(mesh, 5 if chart.dim == 3 else 3))
    z, x = _decay_samples()
    worst_lain = 0.0
    worst_lar = 0.0
    for chunk in np.array_split(Pd, max(1, len(Pd) // 64)):
        vals = np.abs(chart.kernel(chart.from_params(chunk)[:, None, :], z[None, :]))
        lain = vals / chart.decay_bound(z)[None, :] * chart.lain_const
        worst_lain = max(worst_lain, float(np.max(lain)))
        grad = _kernel_gradient_l1(chart, chunk, x)
        lar = grad / chart.lipschitz_kernel(x)[None, :] * chart.lar_const
        worst_lar = max(worst_lar, float(np.max(lar)))
    ok = worst_lain <= chart.lain_const and worst_lar <= chart.lar_const
    out = {"ok": ok, "det_min": float(np.min(np.abs(det))), "lain_sup": worst_lain,
           "lar_sup": worst_lar}
    if not ok:
        out["reason"] = "decay" if worst_lain > chart.lain_const else "kernel Lipschitz"
    return out


def check_image(chart: LocalChart, gamma1: float, gamma2: float, mesh: int = 7) -> dict:
    """Surjectivity of ``L`` onto ``D(image, gamma2)`` from ``D(base, gamma1)``
    and the Lipschitz budget of the inverse, both on a cube mesh."""
    yc = chart.to_real(chart.image)
    Y = _cube_mesh(yc, gamma2 * (1 - 1e-9), mesh)
    P, res, ok = chart.newton(Y)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        return {"ok": False, "reason": "newton", "point": Y[i].tolist()}
    dist = _max_norm(P - chart.to_params(chart.base))
    if np.any(dist >= gamma1):
        i = int(np.argmax(dist))
        return {"ok": False, "reason": "preimage outside D(base, gamma1)",
                "point": Y[i].tolist(), "distance": float(dist[i])}
    Jinv = np.linalg.inv(chart.jacobian(P))
    lip = np.max(np.abs(Jinv).sum(axis=-1), axis=-1)
    i = int(np.argmax(lip))
    out = {"ok": bool(lip[i] <= chart.lipschitz_budget), "preimage_radius": float(dist.max()),
           "inverse_lipschitz": float(lip[i])}
    if not out["ok"]:
        out.update(reason="inverse Lipschitz budget", point=Y[i].tolist())
    return out


def certify_chart(gamma1: float, gamma2: float, mesh: int = 7, mode: str = "real",
                  chart: LocalChart | None = None) -> ChartCertificate:
    """Mesh-verify the chart conditions for the radii ``(gamma1, gamma2)``.

    On failure the certificate carries the violating mesh point.
    """
    if not (0 < gamma1 < 0.25 and 0 < gamma2 < 0.25):
        raise ValueError("radii must lie in (0, 1/4)")
    chart = replace(chart or default_chart(mode), gamma1=gamma1, gamma2=gamma2)
    cert = ChartCertificate(mode=chart.mode, gamma1=gamma1, gamma2=gamma2, passed=False)
    dom = check_domain(chart, gamma1, mesh)
    cert.checks["domain"] = dom
    if not dom["ok"]:
        cert.counterexample = {"check": "domain", **dom}
        return cert
    img = check_image(chart, gamma1, gamma2, mesh)
    cert.checks["image"] = img
    if not img["ok"]:
        cert.counterexample = {"check": "image", **img}
        return cert
    cert.passed = True
    return cert


def sweep_chart(mode="real", start=0.24, ratio=0.9, steps=40, mesh=7) -> ChartCertificate:
    """Largest certified radii from a geometric sweep.

    ``gamma1`` is the largest sweep value passing the domain checks and
    ``gamma2`` the largest value not exceeding it for which the image
    checks pass.
    """
    grid = [start * ratio ** k for k in range(steps)]
    chart = default_chart(mode)
    g1 = next((g for g in grid if check_domain(replace(chart, gamma1=g), g, mesh)["ok"]), None)
    if g1 is None:
        raise ChartError("no certified domain radius in sweep")
    for g2 in grid:
        if g2 <= g1 and check_image(replace(chart, gamma1=g1), g1, g2, mesh)["ok"]:
            return certify_chart(g1, g2, mesh=mesh, mode=mode)
    raise ChartError("no certified image radius in sweep")

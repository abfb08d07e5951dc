"""Solver primal-dual de pontos interiores para cones LP x PSD.

Resolve

    minimize    c'x
    subject to  G x + s = h,  A x = b,  s em R+^l x S^n1 x ... x S^nk

pelo embedding homogeneo auto-dual, com escala de Nesterov-Todd e passos
preditor-corretor de Mehrotra. Os blocos PSD chegam vetorizados por `svec`
(triangulo inferior, fora da diagonal multiplicado por sqrt(2)).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ConeDims:
    lp: int
    psd: tuple[int, ...]

    @property
    def rows(self) -> int:
        return self.lp + sum(n * (n + 1) // 2 for n in self.psd)

    @property
    def degree(self) -> int:
        return self.lp + sum(self.psd)


@dataclass(frozen=True)
class IpmOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iter: int = 200
    step_fraction: float = 0.98
    near_tol: float = 1e-5
    refinement_steps: int = 3


@dataclass
class IpmResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    iterations: int
    pcost: float
    dcost: float
    gap: float
    pres: float
    dres: float
    near_optimal: bool
    message: str


class _NumericalTrouble(RuntimeError):
    pass


@lru_cache(maxsize=None)
def svec_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(n)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return rows, cols, scale


def svec(matrix: np.ndarray) -> np.ndarray:
    rows, cols, scale = svec_indices(matrix.shape[-1])
    return matrix[..., rows, cols] * scale


def smat(vec: np.ndarray, n: int) -> np.ndarray:
    rows, cols, scale = svec_indices(n)
    values = vec / scale
    out = np.zeros(vec.shape[:-1] + (n, n))
    out[..., rows, cols] = values
    out[..., cols, rows] = values
    return out


class _Cones:
    def __init__(self, dims: ConeDims) -> None:
        self.dims = dims
        self.blocks: list[tuple[int, int, int]] = []
        start = dims.lp
        for n in dims.psd:
            size = n * (n + 1) // 2
            self.blocks.append((start, start + size, n))
            start += size
        self.identity = np.zeros(dims.rows)
        self.identity[: dims.lp] = 1.0
        for lo, _, n in self.blocks:
            rows, cols, _ = svec_indices(n)
            self.identity[lo + np.flatnonzero(rows == cols)] = 1.0


class _Scaling:
    """Escala NT no ponto (s, z): W z = W^{-T} s = lambda."""

    def __init__(self, cones: _Cones, s: np.ndarray, z: np.ndarray) -> None:
        self.cones = cones
        lp = cones.dims.lp
        s_lp, z_lp = s[:lp], z[:lp]
        if lp and (np.any(s_lp <= 0.0) or np.any(z_lp <= 0.0)):
            raise _NumericalTrouble("iterado LP fora do cone")
        self.d = np.sqrt(s_lp / z_lp)
        self.lam_lp = np.sqrt(s_lp * z_lp)
        self.r: list[np.ndarray] = []
        self.rinv: list[np.ndarray] = []
        self.lam_psd: list[np.ndarray] = []
        for lo, hi, n in cones.blocks:
            try:
                ls = linalg.cholesky(smat(s[lo:hi], n), lower=True)
                lz = linalg.cholesky(smat(z[lo:hi], n), lower=True)
            except linalg.LinAlgError as exc:
                raise _NumericalTrouble("iterado PSD fora do cone") from exc
            u, lam, vt = linalg.svd(lz.T @ ls)
            if np.any(lam <= 0.0):
                raise _NumericalTrouble("escala NT degenerada")
            root = np.sqrt(lam)
            r = ls @ vt.T / root
            rinv = (root[:, None] * vt) @ linalg.solve_triangular(ls, np.eye(n), lower=True)
            self.r.append(r)
            self.rinv.append(rinv)
            self.lam_psd.append(lam)

    def _apply(self, vec: np.ndarray, lp_op, psd_op) -> np.ndarray:
        out = np.empty_like(vec)
        lp = self.cones.dims.lp
        out[:lp] = lp_op(vec[:lp])
        for idx, (lo, hi, n) in enumerate(self.cones.blocks):
            out[lo:hi] = svec(psd_op(idx, smat(vec[lo:hi], n)))
        return out

    def w(self, vec: np.ndarray) -> np.ndarray:
        return self._apply(vec, lambda v: self.d * v, lambda i, m: self.r[i].T @ m @ self.r[i])

    def wt(self, vec: np.ndarray) -> np.ndarray:
        return self._apply(vec, lambda v: self.d * v, lambda i, m: self.r[i] @ m @ self.r[i].T)

    def winv(self, vec: np.ndarray) -> np.ndarray:
        return self._apply(
            vec, lambda v: v / self.d, lambda i, m: self.rinv[i].T @ m @ self.rinv[i]
        )

    def wit(self, vec: np.ndarray) -> np.ndarray:
        return self._apply(
            vec, lambda v: v / self.d, lambda i, m: self.rinv[i] @ m @ self.rinv[i].T
        )

    def scale_columns(self, g: np.ndarray, active: list[np.ndarray]) -> np.ndarray:
        """Retorna W^{-T} G aplicando a escala coluna a coluna, em lote."""
        out = np.zeros_like(g)
        lp = self.cones.dims.lp
        out[:lp] = g[:lp] / self.d[:, None]
        for idx, (lo, hi, n) in enumerate(self.cones.blocks):
            cols = active[idx]
            if not cols.size:
                continue
            mats = smat(g[lo:hi, cols].T, n)
            rinv = self.rinv[idx]
            scaled = rinv @ mats @ rinv.T
            out[lo:hi, cols] = svec(scaled).T
        return out

    def lam_square(self) -> np.ndarray:
        out = np.zeros(self.cones.dims.rows)
        out[: self.cones.dims.lp] = self.lam_lp**2
        for idx, (lo, hi, n) in enumerate(self.cones.blocks):
            out[lo:hi] = svec(np.diag(self.lam_psd[idx] ** 2))
        return out

    def lam_solve(self, vec: np.ndarray) -> np.ndarray:
        """Resolve lambda o u = vec no espaco escalado."""
        out = np.empty_like(vec)
        lp = self.cones.dims.lp
        out[:lp] = vec[:lp] / self.lam_lp
        for idx, (lo, hi, n) in enumerate(self.cones.blocks):
            lam = self.lam_psd[idx]
            out[lo:hi] = svec(2.0 * smat(vec[lo:hi], n) / (lam[:, None] + lam[None, :]))
        return out

    def max_step(self, vec: np.ndarray) -> float:
        """Maior passo t com lambda + t*vec no cone."""
        step = math.inf
        lp = self.cones.dims.lp
        neg = vec[:lp] < 0.0
        if np.any(neg):
            step = min(step, float(np.min(-self.lam_lp[neg] / vec[:lp][neg])))
        for idx, (lo, hi, n) in enumerate(self.cones.blocks):
            inv_root = 1.0 / np.sqrt(self.lam_psd[idx])
            m = smat(vec[lo:hi], n) * inv_root[:, None] * inv_root[None, :]
            lowest = float(linalg.eigvalsh(m, subset_by_index=[0, 0])[0])
            if lowest < 0.0:
                step = min(step, -1.0 / lowest)
        return step


def _jordan(cones: _Cones, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    lp = cones.dims.lp
    out[:lp] = u[:lp] * v[:lp]
    for lo, hi, n in cones.blocks:
        um, vm = smat(u[lo:hi], n), smat(v[lo:hi], n)
        out[lo:hi] = svec(0.5 * (um @ vm + vm @ um))
    return out


def _row_scale(matrix: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(matrix), axis=1) if matrix.size else np.zeros(matrix.shape[0])
    return np.where(peak > 0.0, 1.0 / np.where(peak > 0.0, peak, 1.0), 1.0)


def _equilibrate(
    g: np.ndarray, a: np.ndarray, cones: _Cones
) -> tuple[np.ndarray, np.ndarray]:
    g_scale = np.ones(g.shape[0])
    lp = cones.dims.lp
    g_scale[:lp] = _row_scale(g[:lp])
    for lo, hi, _ in cones.blocks:
        peak = float(np.max(np.abs(g[lo:hi]))) if hi > lo else 0.0
        if peak > 0.0:
            g_scale[lo:hi] = 1.0 / peak
    return g_scale, _row_scale(a)


def _active_columns(g: np.ndarray, cones: _Cones) -> list[np.ndarray]:
    return [np.flatnonzero(np.any(g[lo:hi] != 0.0, axis=0)) for lo, hi, _ in cones.blocks]


class _Kkt:
    """Fatora [[H, A'],[A, 0]] com H = (W^{-T}G)'(W^{-T}G)."""

    def __init__(self, gs: np.ndarray, a: np.ndarray, refinement_steps: int) -> None:
        self.gs = gs
        self.a = a
        self.n = gs.shape[1]
        self.p = a.shape[0]
        h = gs.T @ gs
        size = self.n + self.p
        self.matrix = np.zeros((size, size))
        self.matrix[: self.n, : self.n] = h
        self.matrix[: self.n, self.n :] = a.T
        self.matrix[self.n :, : self.n] = a
        delta = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(h)))) if self.n else 1.0)
        regularized = self.matrix.copy()
        regularized[: self.n, : self.n] += delta * np.eye(self.n)
        regularized[self.n :, self.n :] -= delta * np.eye(self.p)
        try:
            self.lu = linalg.lu_factor(regularized, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise _NumericalTrouble("falha na fatoracao KKT") from exc
        self.refinement_steps = refinement_steps

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        sol = linalg.lu_solve(self.lu, rhs)
        for _ in range(self.refinement_steps):
            residual = rhs - self.matrix @ sol
            sol = sol + linalg.lu_solve(self.lu, residual)
        if not np.all(np.isfinite(sol)):
            raise _NumericalTrouble("solucao KKT nao finita")
        return sol


def solve_conelp(
    c: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    dims: ConeDims,
    options: IpmOptions | None = None,
) -> IpmResult:
    opts = options or IpmOptions()
    cones = _Cones(dims)
    n_vars = c.shape[0]
    if g.shape != (dims.rows, n_vars):
        raise ValueError(f"G com forma {g.shape}, esperado {(dims.rows, n_vars)}")
    a = a.reshape(-1, n_vars)

    g_scale, a_scale = _equilibrate(g, a, cones)
    g = g * g_scale[:, None]
    h = h * g_scale
    a = a * a_scale[:, None]
    b = b * a_scale
    active = _active_columns(g, cones)

    norm_c = max(1.0, float(np.linalg.norm(c)))
    norm_b = max(1.0, float(np.linalg.norm(b)))
    norm_h = max(1.0, float(np.linalg.norm(h)))
    degree = dims.degree

    x = np.zeros(n_vars)
    y = np.zeros(a.shape[0])
    s = cones.identity.copy()
    z = cones.identity.copy()
    tau, kappa = 1.0, 1.0

    best: tuple[float, tuple, tuple] | None = None
    stalls = 0
    message = "limite de iteracoes"
    iteration = 0
    pres = dres = gap = math.inf
    pcost = dcost = math.nan

    def unscaled(xv, yv, sv, zv) -> tuple[np.ndarray, ...]:
        return xv, yv * a_scale, sv / g_scale, zv * g_scale

    def finish(status: str, msg: str, near: bool, point: tuple) -> IpmResult:
        xv, yv, sv, zv = unscaled(*point)
        return IpmResult(
            status=status,
            x=xv,
            y=yv,
            s=sv,
            z=zv,
            iterations=iteration,
            pcost=pcost,
            dcost=dcost,
            gap=gap,
            pres=pres,
            dres=dres,
            near_optimal=near,
            message=msg,
        )

    for iteration in range(opts.max_iter + 1):
        r_x = a.T @ y + g.T @ z + c * tau
        r_y = b * tau - a @ x
        r_z = h * tau - g @ x - s
        r_tau = kappa + c @ x + b @ y + h @ z

        pcost = float(c @ x / tau)
        dcost = float(-(b @ y + h @ z) / tau)
        pres = max(
            float(np.linalg.norm(r_y)) / tau / norm_b,
            float(np.linalg.norm(r_z)) / tau / norm_h,
        )
        dres = float(np.linalg.norm(r_x)) / tau / norm_c
        gap = float(s @ z) / tau**2
        rel_gap = gap / max(1.0, abs(pcost))
        point = (x / tau, y / tau, s / tau, z / tau)
        score = max(pres, dres, rel_gap)
        if best is None or score < best[0]:
            best = (score, point, (pcost, dcost, gap, pres, dres))

        if pres <= opts.feas_tol and dres <= opts.feas_tol and rel_gap <= opts.gap_tol:
            return finish(OPTIMAL, "otimo", True, point)

        certificate = -float(h @ z + b @ y)
        if certificate > 0.0:
            pinf = float(np.linalg.norm(a.T @ y + g.T @ z)) / norm_c / certificate
            if pinf <= opts.feas_tol:
                return finish(INFEASIBLE, "certificado de inviabilidade primal", False, point)
        ray = -float(c @ x)
        if ray > 0.0:
            dinf = max(
                float(np.linalg.norm(a @ x)) / norm_b,
                float(np.linalg.norm(g @ x + s)) / norm_h,
            ) / ray
            if dinf <= opts.feas_tol:
                return finish(
                    NUMERICAL_FAILURE, "problema ilimitado (unbounded)", False, point
                )
        if iteration == opts.max_iter:
            break

        mu = (float(s @ z) + tau * kappa) / (degree + 1)
        try:
            scaling = _Scaling(cones, s, z)
            gs = scaling.scale_columns(g, active)
            kkt = _Kkt(gs, a, opts.refinement_steps)
        except _NumericalTrouble as exc:
            message = str(exc)
            break

        def reduced(bx: np.ndarray, by: np.ndarray, bz: np.ndarray):
            bzs = scaling.wit(bz)
            rhs = np.concatenate([bx + gs.T @ bzs, by])
            sol = kkt.solve(rhs)
            ux, uy = sol[:n_vars], sol[n_vars:]
            wuz = gs @ ux - bzs
            return ux, uy, scaling.winv(wuz), wuz

        try:
            x1, y1, z1, wz1 = reduced(-c, b, h)
        except _NumericalTrouble as exc:
            message = str(exc)
            break
        denom = float(wz1 @ wz1) + kappa / tau
        lam_sq = scaling.lam_square()

        def direction(eta: float, r_e: np.ndarray, r_f: float):
            lam_re = scaling.lam_solve(r_e)
            x2, y2, z2, _ = reduced(-eta * r_x, eta * r_y, eta * r_z - scaling.wt(lam_re))
            dtau = (eta * r_tau + r_f / tau + c @ x2 + b @ y2 + h @ z2) / denom
            dx = x2 + dtau * x1
            dy = y2 + dtau * y1
            dz = z2 + dtau * z1
            dkappa = (r_f - kappa * dtau) / tau
            dz_t = scaling.w(dz)
            ds_t = lam_re - dz_t
            return dx, dy, dz, dtau, dkappa, ds_t, dz_t

        def step_length(ds_t, dz_t, dtau, dkappa) -> float:
            step = min(scaling.max_step(ds_t), scaling.max_step(dz_t))
            if dtau < 0.0:
                step = min(step, -tau / dtau)
            if dkappa < 0.0:
                step = min(step, -kappa / dkappa)
            return step

        try:
            _, _, _, dtau_a, dkappa_a, ds_a, dz_a = direction(1.0, -lam_sq, -tau * kappa)
            alpha_a = min(1.0, step_length(ds_a, dz_a, dtau_a, dkappa_a))
            sigma = (1.0 - alpha_a) ** 3
            r_e = -lam_sq - _jordan(cones, ds_a, dz_a) + sigma * mu * cones.identity
            r_f = -tau * kappa - dtau_a * dkappa_a + sigma * mu
            dx, dy, dz, dtau, dkappa, ds_t, dz_t = direction(1.0 - sigma, r_e, r_f)
            alpha = min(1.0, opts.step_fraction * step_length(ds_t, dz_t, dtau, dkappa))
        except (_NumericalTrouble, linalg.LinAlgError) as exc:
            message = str(exc)
            break
        if not math.isfinite(alpha) or alpha < 1e-10:
            stalls += 1
            if stalls >= 3:
                message = "passo estagnado"
                break
            continue
        stalls = 0
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * scaling.wt(ds_t)
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    assert best is not None
    score, point, (pcost, dcost, gap, pres, dres) = best
    near = score <= opts.near_tol
    return finish(NUMERICAL_FAILURE, message, near, point)

"""Subproblema convexo de uma iteracao SCA em torno de um ponto de linearizacao.

Grandezas de comunicacao entram normalizadas: potencias por P_max e canais de
cada usuario/Eve por ||F||_F^2. Grandezas de energia entram em mW.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from irs_seguro.conic import (
    AffineExpr,
    AffineMatrix,
    ConicProblem,
    ConicSolution,
    bmat,
    frobenius_epigraph,
    gsproc_lmi,
    sproc_lmi,
)
from irs_seguro.energy import required_input_power
from irs_seguro.sysconfig import CsiEstimate, SystemConfig

LN2 = math.log(2.0)
MW_PER_W = 1000.0
PSD_CLAMP = -1e-9
_EXP_CLAMP = 700.0


class BuilderError(ValueError):
    pass


@dataclass
class IterationState:
    w_mat: np.ndarray
    z_mat: np.ndarray
    y_mat: np.ndarray
    psi_c9: np.ndarray
    psi_c10: np.ndarray
    psi_eve: np.ndarray
    psi_eve_lo: np.ndarray
    iota: np.ndarray
    xi: np.ndarray
    beta_pr: float
    s: np.ndarray

    @property
    def v_mat(self) -> np.ndarray:
        return self.y_mat[:-1, :-1]

    @property
    def v_vec(self) -> np.ndarray:
        return self.y_mat[:-1, -1]

    @property
    def phase_levels(self) -> int:
        return self.s.shape[0] - 1

    def validate(self) -> None:
        for name in (
            "w_mat",
            "z_mat",
            "y_mat",
            "psi_c9",
            "psi_c10",
            "psi_eve",
            "psi_eve_lo",
            "iota",
            "xi",
            "beta_pr",
            "s",
        ):
            value = np.asarray(getattr(self, name))
            if not np.all(np.isfinite(value)):
                raise BuilderError(f"estado com valores nao finitos em {name}")
        if np.any(self.s < -1e-9) or np.any(self.s > 1.0 + 1e-9):
            raise BuilderError("seletores s fora de [0, 1]")
        if np.any(self.s.sum(axis=0) > 1.0 + 1e-6):
            raise BuilderError("soma de seletores por elemento maior que 1")


@dataclass(frozen=True, eq=False)
class ProblemOptions:
    phase_levels: int
    p_irs_w: float
    secrecy: bool = True
    energy: bool = True
    mode_penalty: float = 0.1
    rank_penalty: float = 0.1
    # 0 seleciona P_max*||G||_F^2*(1+kappa)^2*10
    m_big_w: float = 0.0
    # fases continuas: todos os elementos refletem e |v_n| = 1, sem seletores
    continuous_phases: bool = False
    # (K, M_t) direcoes unitarias: W_k = p_k d_k d_k^H
    fixed_directions: np.ndarray | None = None
    # (W (K, M_t, M_t), Z) em W; so a superficie e otimizada
    fixed_beamformers: tuple[np.ndarray, np.ndarray] | None = None

    @classmethod
    def from_config(cls, config: SystemConfig, **overrides) -> ProblemOptions:
        base = cls(
            phase_levels=config.phase_levels,
            p_irs_w=config.p_irs_w,
            energy=not config.ignore_c3,
            mode_penalty=config.algo.mode_penalty,
            rank_penalty=config.algo.rank_penalty,
            m_big_w=config.algo.m_big,
        )
        return replace(base, **overrides)


@dataclass(frozen=True)
class ProblemScaling:
    power_w: float
    user_gain: np.ndarray
    eve_gain: np.ndarray


@dataclass
class SubproblemHandles:
    point: IterationState
    options: ProblemOptions
    scaling: ProblemScaling
    w: list[AffineMatrix]
    z: AffineMatrix
    y: AffineMatrix
    s: list[list[AffineExpr]]
    psi_c9: list[AffineMatrix]
    psi_c10: list[AffineMatrix]
    psi_eve: list[AffineMatrix]
    psi_eve_lo: list[AffineMatrix]
    xi: list[AffineExpr]
    iota: list[AffineExpr]
    log_aux: list[AffineExpr]
    rate_bound: AffineExpr
    penalty: AffineExpr
    beta_mw: AffineExpr | None = None
    exp_aux: AffineExpr | None = None
    u_es: list[AffineExpr] = field(default_factory=list)
    u_bs: list[AffineExpr] = field(default_factory=list)
    eps: dict[str, AffineExpr] = field(default_factory=dict)
    mode_slack: dict[tuple[int, int], AffineExpr] = field(default_factory=dict)
    rank_slack: AffineExpr | None = None
    tags: dict[str, list[int]] = field(default_factory=dict)


def build_f_matrices(estimate: CsiEstimate) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """F_k = [G_cu,k^H, h_d,k] (M_t x (N+1)) para usuarios e Eves."""
    users = [
        np.hstack([estimate.ghat_cu[k].conj().T, estimate.hhat_d[k][:, None]])
        for k in range(estimate.k_users)
    ]
    eves = [
        np.hstack([estimate.ghat_ce[j].conj().T, estimate.hhat_ed[j][:, None]])
        for j in range(estimate.j_eves)
    ]
    return users, eves


def _gain(f: np.ndarray) -> float:
    value = float(np.sum(np.abs(f) ** 2))
    return value if value > 0.0 else 1.0


def user_radius(estimate: CsiEstimate, k: int) -> float:
    return math.sqrt(estimate.rho_cu[k] ** 2 + estimate.rho_d[k] ** 2)


def eve_radius(estimate: CsiEstimate, j: int) -> float:
    return math.sqrt(estimate.rho_ce[j] ** 2 + estimate.rho_ed[j] ** 2)


def m_big_w(estimate: CsiEstimate, config: SystemConfig, options: ProblemOptions) -> float:
    if options.m_big_w > 0.0:
        return options.m_big_w
    g_norm2 = float(np.sum(np.abs(estimate.ghat) ** 2))
    return config.p_max_w * g_norm2 * (1.0 + config.kappa) ** 2 * 10.0


def robust_outer_bounds(
    center: np.ndarray,
    radius: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Limites L <= (c+d)(c+d)^H <= U validos para todo ||d|| <= radius."""
    center = np.asarray(center, dtype=complex)
    m = center.size
    outer = np.outer(center, center.conj())
    norm = float(np.linalg.norm(center))
    if radius <= 0.0:
        return outer, outer.copy()
    if norm == 0.0:
        return np.zeros((m, m), dtype=complex), radius**2 * np.eye(m, dtype=complex)
    eta = radius / norm
    upper = (1.0 + eta) * outer + (1.0 + 1.0 / eta) * radius**2 * np.eye(m)
    if eta >= 1.0:
        lower = np.zeros((m, m), dtype=complex)
    else:
        lower = (1.0 - eta) * outer - (1.0 / eta - 1.0) * radius**2 * np.eye(m)
    return lower, upper


def lift_surface(v: np.ndarray) -> np.ndarray:
    """Y = y y^H com y = [v; 1] (v ja inclui o 1 do enlace direto)."""
    y = np.concatenate([np.asarray(v, dtype=complex), [1.0 + 0.0j]])
    return np.outer(y, y.conj())


def selectors_for_modes(mode: np.ndarray, theta: np.ndarray, phase_levels: int) -> np.ndarray:
    """Matriz s binaria: linha 0 colheita, linha i+1 fase i."""
    n = len(mode)
    s = np.zeros((phase_levels + 1, n))
    for idx in range(n):
        if mode[idx]:
            s[int(theta[idx]) + 1, idx] = 1.0
        else:
            s[0, idx] = 1.0
    return s


def continuous_selectors(y_mat: np.ndarray, phase_levels: int) -> np.ndarray:
    """Seletores binarios pela fase do autovetor dominante de Y (todos refletem)."""
    _, vecs = np.linalg.eigh(0.5 * (y_mat + y_mat.conj().T))
    top = vecs[:, -1]
    if abs(top[-1]) > 0.0:
        top = top / top[-1]
    v = top[:-2]
    theta = np.mod(np.rint(-np.angle(v) * phase_levels / (2.0 * np.pi)), phase_levels)
    return selectors_for_modes(np.ones(v.size, dtype=int), theta.astype(int), phase_levels)


def robust_min_power(row: np.ndarray, covariance: np.ndarray, radius: float) -> float:
    """Limite inferior de (g+d) Q (g+d)^H sobre ||d|| <= radius."""
    nominal = float(np.real(row @ covariance @ row.conj()))
    top = float(np.linalg.eigvalsh(covariance)[-1]) if covariance.size else 0.0
    root = math.sqrt(max(nominal, 0.0)) - radius * math.sqrt(max(top, 0.0))
    return max(root, 0.0) ** 2


def state_from_design(
    w_mat: np.ndarray,
    z_mat: np.ndarray,
    v: np.ndarray,
    s: np.ndarray,
    estimate: CsiEstimate,
    config: SystemConfig,
) -> IterationState:
    """Ponto de linearizacao com superficie de posto um e Psi robustos em forma fechada."""
    f_users, f_eves = build_f_matrices(estimate)
    k_users, j_eves, m_t = estimate.k_users, estimate.j_eves, estimate.m_t
    v = np.asarray(v, dtype=complex)
    norm_v = float(np.linalg.norm(v))
    psi_c9 = np.zeros((k_users, m_t, m_t), dtype=complex)
    psi_c10 = np.zeros_like(psi_c9)
    xi = np.zeros(k_users)
    iota = np.zeros(k_users)
    for k in range(k_users):
        lower, upper = robust_outer_bounds(f_users[k] @ v, user_radius(estimate, k) * norm_v)
        psi_c9[k], psi_c10[k] = lower, upper
        xi[k] = max(float(np.trace(w_mat[k] @ lower).real), 0.0)
        others = sum((w_mat[i] for i in range(k_users) if i != k), np.zeros_like(z_mat))
        iota[k] = max(float(np.trace((others + z_mat) @ upper).real), 0.0)
    psi_eve = np.zeros((j_eves, m_t, m_t), dtype=complex)
    psi_eve_lo = np.zeros_like(psi_eve)
    for j in range(j_eves):
        lower, upper = robust_outer_bounds(f_eves[j] @ v, eve_radius(estimate, j) * norm_v)
        psi_eve_lo[j], psi_eve[j] = lower, upper

    covariance = z_mat + np.sum(w_mat, axis=0)
    harvest = np.asarray(s[0], dtype=float) >= 0.5
    row_radius = estimate.rho_g / math.sqrt(estimate.n_irs) if estimate.n_irs else 0.0
    beta = sum(
        robust_min_power(estimate.ghat[n], covariance, row_radius)
        for n in np.flatnonzero(harvest)
    )
    beta += config.sigma_irs2 * int(harvest.sum())
    return IterationState(
        w_mat=np.asarray(w_mat, dtype=complex),
        z_mat=np.asarray(z_mat, dtype=complex),
        y_mat=lift_surface(v),
        psi_c9=psi_c9,
        psi_c10=psi_c10,
        psi_eve=psi_eve,
        psi_eve_lo=psi_eve_lo,
        iota=iota,
        xi=xi,
        beta_pr=float(beta),
        s=np.asarray(s, dtype=float),
    )


def _sq(matrix: np.ndarray) -> float:
    return float(np.sum(np.abs(matrix) ** 2))


def _beamformers(
    problem: ConicProblem,
    state: IterationState,
    options: ProblemOptions,
    p0: float,
) -> tuple[list[AffineMatrix], AffineMatrix]:
    k_users, m_t = state.w_mat.shape[0], state.z_mat.shape[0]
    if options.fixed_beamformers is not None:
        w_fixed, z_fixed = options.fixed_beamformers
        return (
            [AffineMatrix.lift(np.asarray(w_fixed[k]) / p0) for k in range(k_users)],
            AffineMatrix.lift(np.asarray(z_fixed) / p0),
        )
    if options.fixed_directions is not None:
        w = []
        for k in range(k_users):
            d = np.asarray(options.fixed_directions[k], dtype=complex)
            power = problem.scalar(f"p{k}")
            problem.add_ge(power, 0.0, tag=f"C7:{k}")
            w.append(power.times(np.outer(d, d.conj())))
    else:
        w = []
        for k in range(k_users):
            block = problem.hermitian(f"W{k}", m_t)
            problem.add_lmi(block, tag=f"C7:{k}")
            w.append(block)
    z = problem.hermitian("Z", m_t)
    problem.add_lmi(z, tag="C6")
    total = z.trace()
    for block in w:
        total = total + block.trace()
    problem.add_le(total, 1.0, tag="C1")
    return w, z


def build_subproblem(
    state: IterationState,
    estimate: CsiEstimate,
    config: SystemConfig,
    options: ProblemOptions | None = None,
) -> tuple[ConicProblem, SubproblemHandles]:
    options = options or ProblemOptions.from_config(config)
    state.validate()
    k_users, j_eves = estimate.k_users, estimate.j_eves
    n, m_t = estimate.n_irs, estimate.m_t
    levels = options.phase_levels
    if state.s.shape != (levels + 1, n):
        raise BuilderError(f"seletores com forma {state.s.shape}, esperado {(levels + 1, n)}")
    if state.w_mat.shape != (k_users, m_t, m_t):
        raise BuilderError(f"W com forma {state.w_mat.shape}")
    secrecy = options.secrecy and j_eves > 0
    if options.continuous_phases and options.energy:
        raise BuilderError("fases continuas nao admitem colheita de energia")

    f_users, f_eves = build_f_matrices(estimate)
    p0 = config.p_max_w
    scaling = ProblemScaling(
        power_w=p0,
        user_gain=np.array([_gain(f) for f in f_users]),
        eve_gain=np.array([_gain(f) for f in f_eves]),
    )
    problem = ConicProblem("sca")
    w, z = _beamformers(problem, state, options, p0)
    w_t = state.w_mat / p0
    z_t = state.z_mat / p0

    # Superficie: Y = [v;1][v;1]^H relaxada, V = Y[:N+1, :N+1], v = Y[:N+1, N+1].
    y = problem.hermitian("Y", n + 2)
    problem.add_lmi(y, tag="C11a")
    problem.add_eq(y.real_entry(n + 1, n + 1), 1.0, tag="ancora:Y")
    problem.add_eq(y.real_entry(n, n), 1.0, tag="ancora:V")
    problem.add_eq(y.real_entry(n, n + 1), 1.0, tag="ancora:v_re")
    problem.add_eq(y.imag_entry(n, n + 1), 0.0, tag="ancora:v_im")
    v_mat = y[: n + 1, : n + 1]

    s: list[list[AffineExpr]] = []
    if options.continuous_phases:
        for col in range(n):
            problem.add_eq(y.real_entry(col, col), 1.0, tag=f"C4c:{col}")
    for i in range(levels + 1 if not options.continuous_phases else 0):
        row = []
        for col in range(n):
            var = problem.scalar(f"s[{i},{col}]")
            problem.add_ge(var, 0.0, tag=f"C4e:{i},{col}")
            problem.add_le(var, 1.0, tag=f"C4e:{i},{col}")
            row.append(var)
        s.append(row)
    phases = np.exp(-2j * np.pi * np.arange(levels) / levels)
    for col in range(n if not options.continuous_phases else 0):
        problem.add_le(sum((s[i][col] for i in range(levels + 1)), AffineExpr()), 1.0, tag=f"C4a:{col}")
        reflect = sum((s[i + 1][col] for i in range(levels)), AffineExpr())
        v_re = sum((s[i + 1][col] * float(phases[i].real) for i in range(levels)), AffineExpr())
        v_im = sum((s[i + 1][col] * float(phases[i].imag) for i in range(levels)), AffineExpr())
        problem.add_eq(y.real_entry(col, n + 1) - v_re, 0.0, tag=f"C4b:re:{col}")
        problem.add_eq(y.imag_entry(col, n + 1) - v_im, 0.0, tag=f"C4b:im:{col}")
        problem.add_eq(y.real_entry(col, col) - reflect, 0.0, tag=f"Vdiag:{col}")

    penalty = AffineExpr()
    mode_slack: dict[tuple[int, int], AffineExpr] = {}
    if options.mode_penalty > 0.0 and not options.continuous_phases:
        for i in range(levels + 1):
            for col in range(n):
                st = float(state.s[i, col])
                slack = problem.scalar(f"p[{i},{col}]", lower=0.0)
                problem.add_le(s[i][col] * (1.0 - 2.0 * st) + st * st, slack, tag=f"C4d:{i},{col}")
                mode_slack[(i, col)] = slack
                penalty = penalty + slack * options.mode_penalty
    rank_slack = None
    if options.rank_penalty > 0.0:
        _, vecs = np.linalg.eigh(0.5 * (state.y_mat + state.y_mat.conj().T))
        top = vecs[:, -1]
        rank_slack = problem.scalar("p_Y", lower=0.0)
        problem.add_le(y.trace() - y.inner(np.outer(top, top.conj())), rank_slack, tag="C11b")
        penalty = penalty + rank_slack * options.rank_penalty

    eps: dict[str, AffineExpr] = {}
    psi_c9: list[AffineMatrix] = []
    psi_c10: list[AffineMatrix] = []
    xi_vars: list[AffineExpr] = []
    iota_vars: list[AffineExpr] = []
    log_aux: list[AffineExpr] = []
    rate_bound = AffineExpr()
    for k in range(k_users):
        gain = float(scaling.user_gain[k])
        f_t = f_users[k] / math.sqrt(gain)
        fvf = (f_t @ v_mat) @ f_t.conj().T
        vf = v_mat @ f_t.conj().T
        radius = user_radius(estimate, k) / math.sqrt(gain)
        psi9 = problem.hermitian(f"Psi9_{k}", m_t)
        psi10 = problem.hermitian(f"Psi10_{k}", m_t)
        eps[f"C12:{k}"] = gsproc_lmi(problem, v_mat, vf, fvf - psi9, radius=radius, tag=f"C12:{k}")
        eps[f"C13:{k}"] = gsproc_lmi(
            problem, -v_mat, -vf, psi10 - fvf, radius=radius, tag=f"C13:{k}"
        )
        xi = problem.scalar(f"xi{k}", lower=0.0)
        iota = problem.scalar(f"iota{k}", lower=0.0)
        p9_t = state.psi_c9[k] / gain
        p10_t = state.psi_c10[k] / gain

        t9 = frobenius_epigraph(problem, w[k] - psi9, tag=f"C9:epi:{k}")
        problem.add_le(
            xi
            + t9 * 0.5
            - w[k].inner(w_t[k])
            + 0.5 * _sq(w_t[k])
            - psi9.inner(p9_t)
            + 0.5 * _sq(p9_t),
            0.0,
            tag=f"C9:{k}",
        )

        c10 = -iota
        for i in range(k_users):
            if i == k:
                continue
            t_i = frobenius_epigraph(problem, w[i] + psi10, tag=f"C10:epi:{k},{i}")
            c10 = c10 + t_i * 0.5 - w[i].inner(w_t[i]) + 0.5 * _sq(w_t[i])
        t_z = frobenius_epigraph(problem, z + psi10, tag=f"C10:epi:{k},z")
        c10 = c10 + t_z * 0.5 - z.inner(z_t) + 0.5 * _sq(z_t)
        c10 = c10 - psi10.inner(p10_t) * float(k_users) + 0.5 * k_users * _sq(p10_t)
        problem.add_le(c10, 0.0, tag=f"C10:{k}")

        sigma = config.sigma_user2 / (p0 * gain)
        xi_t = float(state.xi[k]) / (p0 * gain)
        iota_t = float(state.iota[k]) / (p0 * gain)
        anchor = xi_t + iota_t + sigma
        # log(x) >= log(a) + 1 - a/x; u >= a/x via [[u, sqrt(a)], [sqrt(a), x]] >= 0
        u = problem.scalar(f"u_log{k}")
        root = math.sqrt(anchor)
        problem.add_lmi(bmat([[u, root], [root, xi + iota + sigma]]), tag=f"obj:log:{k}")
        rate_bound = rate_bound + (math.log(anchor) + 1.0 - u) / LN2
        rate_bound = rate_bound - (iota - iota_t) / (LN2 * (sigma + iota_t))
        rate_bound = rate_bound - math.log2(sigma + iota_t)
        psi_c9.append(psi9)
        psi_c10.append(psi10)
        xi_vars.append(xi)
        iota_vars.append(iota)
        log_aux.append(u)

    psi_eve: list[AffineMatrix] = []
    psi_eve_lo: list[AffineMatrix] = []
    if secrecy:
        capacity = 2.0**config.tau - 1.0
        for j in range(j_eves):
            gain = float(scaling.eve_gain[j])
            f_t = f_eves[j] / math.sqrt(gain)
            fvf = (f_t @ v_mat) @ f_t.conj().T
            vf = v_mat @ f_t.conj().T
            radius = eve_radius(estimate, j) / math.sqrt(gain)
            psi_up = problem.hermitian(f"PsiEve_{j}", m_t)
            psi_lo = problem.hermitian(f"PsiEveLo_{j}", m_t)
            eps[f"C5b:{j}"] = gsproc_lmi(
                problem, -v_mat, -vf, psi_up - fvf, radius=radius, tag=f"C5b:{j}"
            )
            eps[f"C5c:{j}"] = gsproc_lmi(
                problem, v_mat, vf, fvf - psi_lo, radius=radius, tag=f"C5c:{j}"
            )
            up_t = state.psi_eve[j] / gain
            lo_t = state.psi_eve_lo[j] / gain
            sigma = config.sigma_eve2 / (p0 * gain)
            t_zl = frobenius_epigraph(problem, z - psi_lo, tag=f"C5a:epi:z,{j}")
            shared = (
                t_zl * (0.5 * capacity)
                - psi_up.inner(up_t)
                + 0.5 * _sq(up_t)
                - z.inner(z_t) * capacity
                + 0.5 * capacity * _sq(z_t)
                - psi_lo.inner(lo_t) * capacity
                + 0.5 * capacity * _sq(lo_t)
            )
            for k in range(k_users):
                t_wu = frobenius_epigraph(problem, w[k] + psi_up, tag=f"C5a:epi:{k},{j}")
                problem.add_le(
                    shared + t_wu * 0.5 - w[k].inner(w_t[k]) + 0.5 * _sq(w_t[k]),
                    capacity * sigma,
                    tag=f"C5a:{k},{j}",
                )
            psi_eve.append(psi_up)
            psi_eve_lo.append(psi_lo)

    handles = SubproblemHandles(
        point=state,
        options=options,
        scaling=scaling,
        w=w,
        z=z,
        y=y,
        s=s,
        psi_c9=psi_c9,
        psi_c10=psi_c10,
        psi_eve=psi_eve,
        psi_eve_lo=psi_eve_lo,
        xi=xi_vars,
        iota=iota_vars,
        log_aux=log_aux,
        rate_bound=rate_bound,
        penalty=penalty,
        eps=eps,
        mode_slack=mode_slack,
        rank_slack=rank_slack,
    )
    if options.energy:
        _add_energy_constraints(problem, handles, state, estimate, config, options)
    problem.maximize(rate_bound - penalty)
    handles.tags = problem.tag_map()
    return problem, handles


def _add_energy_constraints(
    problem: ConicProblem,
    handles: SubproblemHandles,
    state: IterationState,
    estimate: CsiEstimate,
    config: SystemConfig,
    options: ProblemOptions,
) -> None:
    n, m_t = estimate.n_irs, estimate.m_t
    p0 = handles.scaling.power_w
    to_mw = math.sqrt(MW_PER_W * p0)
    eh = config.eh
    a_mw = eh.a / MW_PER_W
    q_mw = eh.q * MW_PER_W
    harvest = handles.s[0]
    covariance = handles.z
    for block in handles.w:
        covariance = covariance + block
    row_radius = (estimate.rho_g / math.sqrt(n) if n else 0.0) * to_mw
    big_mw = m_big_w(estimate, config, options) * MW_PER_W

    beta = problem.scalar("beta_mw", lower=0.0)
    u_bs: list[AffineExpr] = []
    for col in range(n):
        gamma = estimate.ghat[col].conj() * to_mw
        u = problem.scalar(f"U_BS{col}")
        problem.add_ge(u, 0.0, tag=f"C3g:{col}")
        problem.add_le(u, harvest[col] * big_mw, tag=f"C3h:{col}")
        nominal = covariance.inner(np.outer(gamma, gamma.conj()))
        if row_radius > 0.0:
            handles.eps[f"C3f:{col}"] = sproc_lmi(
                problem,
                -np.eye(m_t),
                np.zeros((m_t, 1)),
                row_radius**2,
                covariance,
                covariance @ gamma[:, None],
                nominal - u,
                tag=f"C3fa:{col}",
            )
        else:
            problem.add_le(u, nominal, tag=f"C3fa:{col}")
        u_bs.append(u)
    harvest_count = sum(harvest, AffineExpr())
    sigma_a_mw = config.sigma_irs2 * MW_PER_W
    problem.add_le(beta, sum(u_bs, AffineExpr()) + harvest_count * sigma_a_mw, tag="C3b")

    u_es: list[AffineExpr] = []
    exp_aux = None
    if options.p_irs_w > 0.0:
        omega = eh.omega
        p_irs = options.p_irs_w
        c0 = config.p_c_w / p_irs + eh.m_p * omega / ((1.0 - omega) * p_irs)
        m_prime = eh.m_p / ((1.0 - omega) * p_irs)
        beta_t = state.beta_pr * MW_PER_W
        cap = math.exp(min(a_mw * q_mw, _EXP_CLAMP))
        e0 = math.exp(min(max(-a_mw * (beta_t - q_mw), -_EXP_CLAMP), _EXP_CLAMP))
        e0 = min(e0, cap)
        exp_aux = problem.scalar("e_aux", upper=cap)
        root = math.sqrt(e0)
        problem.add_lmi(
            bmat([[exp_aux, root], [root, beta * a_mw + (math.log(e0) + 1.0 - a_mw * q_mw)]]),
            tag="C3:exp",
        )
        tangent = (beta - beta_t) * (-a_mw * e0) + e0
        for col in range(n):
            u = problem.scalar(f"U_ES{col}", lower=-cap)
            problem.add_le(u, tangent, tag=f"C3c:{col}")
            problem.add_le(u, harvest[col] * cap, tag=f"C3e:{col}")
            u_es.append(u)
        lhs = (
            (float(n) - harvest_count)
            + c0
            + exp_aux * (float(n) + c0)
            - sum(u_es, AffineExpr())
        )
        problem.add_le(lhs, m_prime, tag="C3a")
    else:
        required = required_input_power(config.p_c_w, eh)
        if not math.isfinite(required):
            raise BuilderError("consumo do circuito excede a colheita maxima")
        problem.add_ge(beta, required * MW_PER_W, tag="C3a")
    handles.beta_mw = beta
    handles.exp_aux = exp_aux
    handles.u_es = u_es
    handles.u_bs = u_bs


def project_psd(matrix: np.ndarray, floor: float = PSD_CLAMP) -> np.ndarray:
    """Simetriza e zera autovalores abaixo de `floor`."""
    herm = 0.5 * (matrix + matrix.conj().T)
    vals, vecs = np.linalg.eigh(herm)
    vals = np.where(vals < floor, 0.0, np.maximum(vals, 0.0))
    return (vecs * vals) @ vecs.conj().T


def _hermitian_part(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def extract_state(sol: ConicSolution, handles: SubproblemHandles) -> IterationState:
    """Le a solucao do subproblema e devolve o proximo ponto em unidades fisicas."""
    if not sol.usable:
        raise BuilderError(f"solucao nao utilizavel: {sol.status}")
    if not np.all(np.isfinite(sol.x)):
        raise BuilderError("solucao com valores nao finitos")
    scaling = handles.scaling
    p0 = scaling.power_w
    point = handles.point
    w_mat = np.stack([project_psd(sol.value(block) * p0) for block in handles.w])
    z_mat = project_psd(sol.value(handles.z) * p0)
    y_mat = project_psd(sol.value(handles.y))
    user_gain = scaling.user_gain
    psi_c9 = np.stack(
        [_hermitian_part(sol.value(m)) * g for m, g in zip(handles.psi_c9, user_gain)]
    )
    psi_c10 = np.stack(
        [project_psd(sol.value(m)) * g for m, g in zip(handles.psi_c10, user_gain)]
    )
    if handles.psi_eve:
        eve_gain = scaling.eve_gain
        psi_eve = np.stack(
            [project_psd(sol.value(m)) * g for m, g in zip(handles.psi_eve, eve_gain)]
        )
        psi_eve_lo = np.stack(
            [_hermitian_part(sol.value(m)) * g for m, g in zip(handles.psi_eve_lo, eve_gain)]
        )
    else:
        psi_eve, psi_eve_lo = point.psi_eve.copy(), point.psi_eve_lo.copy()
    xi = np.array([max(sol.value(x), 0.0) for x in handles.xi]) * p0 * user_gain
    iota = np.array([max(sol.value(x), 0.0) for x in handles.iota]) * p0 * user_gain
    if handles.s:
        s = np.clip(np.array([[sol.value(var) for var in row] for row in handles.s]), 0.0, 1.0)
        totals = s.sum(axis=0)
        s = s / np.where(totals > 1.0, totals, 1.0)
    else:
        s = continuous_selectors(y_mat, point.phase_levels)
    beta = (
        max(sol.value(handles.beta_mw), 0.0) / MW_PER_W
        if handles.beta_mw is not None
        else point.beta_pr
    )
    state = IterationState(
        w_mat=w_mat,
        z_mat=z_mat,
        y_mat=y_mat,
        psi_c9=psi_c9,
        psi_c10=psi_c10,
        psi_eve=psi_eve,
        psi_eve_lo=psi_eve_lo,
        iota=iota,
        xi=xi,
        beta_pr=float(beta),
        s=s,
    )
    state.validate()
    return state


def rate_terms(state: IterationState, config: SystemConfig) -> np.ndarray:
    return np.log2(1.0 + np.maximum(state.xi, 0.0) / (state.iota + config.sigma_user2))


def merit(state: IterationState, config: SystemConfig, options: ProblemOptions) -> float:
    """Soma das taxas implicitas em (xi, iota) menos as penalidades de modo e posto."""
    value = float(rate_terms(state, config).sum())
    if options.mode_penalty > 0.0:
        value -= options.mode_penalty * float(np.sum(state.s - state.s**2))
    if options.rank_penalty > 0.0:
        y = _hermitian_part(state.y_mat)
        eigs = np.linalg.eigvalsh(y)
        value -= options.rank_penalty * float(np.trace(y).real - eigs[-1])
    return value


def rank_gap(matrix: np.ndarray) -> float:
    """||Y||_* - ||Y||_2 para Y hermitiana."""
    eigs = np.linalg.eigvalsh(_hermitian_part(matrix))
    return float(np.sum(np.abs(eigs)) - np.max(np.abs(eigs)))


def problem_census(problem: ConicProblem) -> dict[str, int]:
    sizes = problem.lmi_sizes()
    return {
        "variables": problem.n_vars,
        "equalities": len(problem.equalities),
        "inequalities": len(problem.inequalities),
        "lmis": len(sizes),
        "lmi_rows": int(sum(sizes)),
        "largest_lmi": int(max(sizes, default=0)),
    }

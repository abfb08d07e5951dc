"""Beamforming robusto com a superficie congelada.

Com modos e fases fixos o canal efetivo de cada receptor e c = F v com erro em
uma bola de raio rho_G||v_refl|| + rho_d, e cada restricao robusta vira um
S-lema vetorial exato.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np

from irs_seguro.conic import (
    AffineExpr,
    AffineMatrix,
    ConicProblem,
    SolverOptions,
    bmat,
    solve,
    sproc_lmi,
)
from irs_seguro.energy import required_input_power
from irs_seguro.interior_point import INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL
from irs_seguro.perf_metrics import DesignSolution
from irs_seguro.sca_builder import (
    LN2,
    MW_PER_W,
    build_f_matrices,
    problem_census,
    project_psd,
)
from irs_seguro.sysconfig import CsiEstimate, SystemConfig

# Folga relativa no limite de capacidade das Eves contra a tolerancia do solver.
SECRECY_BACKOFF = 1e-5


@dataclass
class BeamformingResult:
    status: str
    w_mat: np.ndarray
    z_mat: np.ndarray
    xi: np.ndarray
    iota: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    solve_times: list[float] = field(default_factory=list)
    solver_iterations: int = 0
    census: dict[str, int] = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class _Receiver:
    center: np.ndarray
    radius: float
    gain: float


def _receivers(
    f_list: list[np.ndarray],
    v: np.ndarray,
    rho_g: np.ndarray,
    rho_direct: np.ndarray,
) -> list[_Receiver]:
    reflect_norm = float(np.linalg.norm(v[:-1]))
    out = []
    for f, r_g, r_d in zip(f_list, rho_g, rho_direct):
        center = f @ v
        radius = float(r_g) * reflect_norm + float(r_d)
        gain = max(float(np.linalg.norm(center)) + radius, 1e-300) ** 2
        out.append(_Receiver(center=center, radius=radius, gain=gain))
    return out


def surface_vector(mode: np.ndarray, theta: np.ndarray, phase_levels: int) -> np.ndarray:
    m_t = 1
    design = DesignSolution(
        w=np.zeros((0, m_t), dtype=complex),
        z_cov=np.zeros((m_t, m_t), dtype=complex),
        mode=np.asarray(mode),
        theta=np.asarray(theta),
        phase_levels=phase_levels,
    )
    return design.v


def _nominal_terms(
    w_mat: np.ndarray,
    z_mat: np.ndarray,
    users: list[_Receiver],
) -> tuple[np.ndarray, np.ndarray]:
    k_users = len(users)
    xi = np.zeros(k_users)
    iota = np.zeros(k_users)
    total = np.sum(w_mat, axis=0) + z_mat
    for k, rx in enumerate(users):
        c = rx.center
        xi[k] = max(float(np.real(c.conj() @ w_mat[k] @ c)), 0.0)
        iota[k] = max(float(np.real(c.conj() @ (total - w_mat[k]) @ c)), 0.0)
    return xi, iota


def _mrt_start(users: list[_Receiver], m_t: int, p_max: float) -> tuple[np.ndarray, np.ndarray]:
    k_users = len(users)
    w_mat = np.zeros((k_users, m_t, m_t), dtype=complex)
    for k, rx in enumerate(users):
        norm = float(np.linalg.norm(rx.center))
        d = rx.center / norm if norm > 0.0 else np.ones(m_t) / math.sqrt(m_t)
        w_mat[k] = (0.5 * p_max / max(k_users, 1)) * np.outer(d, d.conj())
    z_mat = (0.5 * p_max / m_t) * np.eye(m_t, dtype=complex)
    return w_mat, z_mat


def solve_fixed_surface(
    estimate: CsiEstimate,
    config: SystemConfig,
    mode: np.ndarray,
    theta: np.ndarray,
    *,
    phase_levels: int | None = None,
    start: tuple[np.ndarray, np.ndarray] | None = None,
    fixed_directions: np.ndarray | None = None,
    secrecy: bool = True,
    energy: bool = True,
    p_irs_w: float | None = None,
    iterations: int | None = None,
    log: Callable[[str], None] | None = None,
) -> BeamformingResult:
    """Otimiza (W, Z) para a superficie dada, com algumas iteracoes SCA no log."""
    levels = phase_levels or config.phase_levels
    iterations = iterations or config.algo.polish_iterations
    p_irs = config.p_irs_w if p_irs_w is None else p_irs_w
    m_t, k_users = estimate.m_t, estimate.k_users
    p0 = config.p_max_w
    mode = np.asarray(mode, dtype=int)
    v = surface_vector(mode, theta, levels)
    f_users, f_eves = build_f_matrices(estimate)
    users = _receivers(f_users, v, estimate.rho_cu, estimate.rho_d)
    eves = _receivers(f_eves, v, estimate.rho_ce, estimate.rho_ed) if secrecy else []

    if start is None:
        start = _mrt_start(users, m_t, p0)
    xi_t, iota_t = _nominal_terms(start[0], start[1], users)
    opts = SolverOptions.from_algo(config.algo)

    required_w = 0.0
    if energy:
        required_w = required_input_power(int(mode.sum()) * p_irs + config.p_c_w, config.eh)
        if not math.isfinite(required_w):
            return BeamformingResult(
                status=INFEASIBLE,
                w_mat=start[0],
                z_mat=start[1],
                xi=xi_t,
                iota=iota_t,
                message="consumo da IRS acima da colheita maxima",
            )

    best: BeamformingResult | None = None
    previous = -math.inf
    total_iter = 0
    times: list[float] = []
    trace: list[float] = []
    census: dict[str, int] = {}
    for step in range(iterations):
        problem, handles = _build(
            estimate,
            config,
            users,
            eves,
            mode,
            xi_t,
            iota_t,
            fixed_directions=fixed_directions,
            energy=energy,
            required_w=required_w,
        )
        census = problem_census(problem)
        sol = solve(problem, opts)
        total_iter += sol.iterations
        times.append(sol.solve_time_s)
        if not sol.usable:
            if log:
                log(f"beamforming passo {step}: {sol.status} ({sol.message})")
            if best is None:
                status = INFEASIBLE if sol.status == INFEASIBLE else NUMERICAL_FAILURE
                return BeamformingResult(
                    status=status,
                    w_mat=start[0],
                    z_mat=start[1],
                    xi=xi_t,
                    iota=iota_t,
                    solve_times=times,
                    solver_iterations=total_iter,
                    census=census,
                    message=sol.message,
                )
            break
        w_mat = np.stack([project_psd(sol.value(block) * p0) for block in handles["w"]])
        z_mat = project_psd(sol.value(handles["z"]) * p0)
        gains = np.array([rx.gain for rx in users])
        xi_t = np.array([max(sol.value(x), 0.0) for x in handles["xi"]]) * p0 * gains
        iota_t = np.array([max(sol.value(x), 0.0) for x in handles["iota"]]) * p0 * gains
        trace.append(float(sol.objective))
        best = BeamformingResult(
            status=OPTIMAL,
            w_mat=w_mat,
            z_mat=z_mat,
            xi=xi_t,
            iota=iota_t,
            objective_trace=list(trace),
            solve_times=list(times),
            solver_iterations=total_iter,
            census=census,
        )
        if abs(sol.objective - previous) <= config.algo.convergence_tol * max(1.0, abs(sol.objective)):
            break
        previous = sol.objective
    assert best is not None
    best.solve_times = times
    best.solver_iterations = total_iter
    return best


def _build(
    estimate: CsiEstimate,
    config: SystemConfig,
    users: list[_Receiver],
    eves: list[_Receiver],
    mode: np.ndarray,
    xi_t: np.ndarray,
    iota_t: np.ndarray,
    *,
    fixed_directions: np.ndarray | None,
    energy: bool,
    required_w: float,
) -> tuple[ConicProblem, dict[str, object]]:
    m_t, k_users = estimate.m_t, estimate.k_users
    p0 = config.p_max_w
    problem = ConicProblem("beamforming")
    w: list[AffineMatrix] = []
    for k in range(k_users):
        if fixed_directions is not None:
            d = np.asarray(fixed_directions[k], dtype=complex)
            power = problem.scalar(f"p{k}")
            problem.add_ge(power, 0.0, tag=f"C7:{k}")
            w.append(power.times(np.outer(d, d.conj())))
        else:
            block = problem.hermitian(f"W{k}", m_t)
            problem.add_lmi(block, tag=f"C7:{k}")
            w.append(block)
    z = problem.hermitian("Z", m_t)
    problem.add_lmi(z, tag="C6")
    problem.add_le(sum((b.trace() for b in w), z.trace()), 1.0, tag="C1")

    objective = AffineExpr()
    xi_vars, iota_vars = [], []
    for k, rx in enumerate(users):
        c = rx.center / math.sqrt(rx.gain)
        radius = rx.radius / math.sqrt(rx.gain)
        xi = problem.scalar(f"xi{k}", lower=0.0)
        iota = problem.scalar(f"iota{k}", lower=0.0)
        signal = w[k]
        others = z
        for i in range(k_users):
            if i != k:
                others = others + w[i]
        _robust_quadratic(problem, signal, c, radius, -xi, sign=1.0, tag=f"sinal:{k}")
        _robust_quadratic(problem, others, c, radius, iota, sign=-1.0, tag=f"interf:{k}")
        sigma = config.sigma_user2 / (p0 * rx.gain)
        xi_n = float(xi_t[k]) / (p0 * rx.gain)
        iota_n = float(iota_t[k]) / (p0 * rx.gain)
        anchor = xi_n + iota_n + sigma
        u = problem.scalar(f"u_log{k}")
        root = math.sqrt(anchor)
        problem.add_lmi(bmat([[u, root], [root, xi + iota + sigma]]), tag=f"obj:log:{k}")
        objective = objective + (math.log(anchor) + 1.0 - u) / LN2
        objective = objective - (iota - iota_n) / (LN2 * (sigma + iota_n))
        objective = objective - math.log2(sigma + iota_n)
        xi_vars.append(xi)
        iota_vars.append(iota)

    capacity = (2.0**config.tau - 1.0) * (1.0 - SECRECY_BACKOFF)
    for j, rx in enumerate(eves):
        c = rx.center / math.sqrt(rx.gain)
        radius = rx.radius / math.sqrt(rx.gain)
        sigma = config.sigma_eve2 / (p0 * rx.gain)
        for k in range(k_users):
            leakage = w[k] - z * capacity
            _robust_quadratic(
                problem, leakage, c, radius, capacity * sigma, sign=-1.0, tag=f"C5:{k},{j}"
            )

    if energy:
        _harvest_constraint(problem, estimate, config, w, z, mode, required_w)
    problem.maximize(objective)
    return problem, {"w": w, "z": z, "xi": xi_vars, "iota": iota_vars}


def _robust_quadratic(
    problem: ConicProblem,
    quad: AffineMatrix,
    center: np.ndarray,
    radius: float,
    offset,
    *,
    sign: float,
    tag: str,
) -> None:
    """sign*(c+d)^H Q (c+d) + offset >= 0 para todo ||d|| <= radius."""
    m = center.size
    nominal = quad.inner(np.outer(center, center.conj())) * sign + offset
    if radius <= 0.0:
        problem.add_ge(nominal, 0.0, tag=tag)
        return
    sproc_lmi(
        problem,
        -np.eye(m),
        np.zeros((m, 1)),
        radius**2,
        quad * sign,
        (quad @ center[:, None]) * sign,
        nominal,
        tag=tag,
    )


def _harvest_constraint(
    problem: ConicProblem,
    estimate: CsiEstimate,
    config: SystemConfig,
    w: list[AffineMatrix],
    z: AffineMatrix,
    mode: np.ndarray,
    required_w: float,
) -> None:
    n, m_t = estimate.n_irs, estimate.m_t
    to_mw = math.sqrt(MW_PER_W * config.p_max_w)
    covariance = z
    for block in w:
        covariance = covariance + block
    radius = (estimate.rho_g / math.sqrt(n) if n else 0.0) * to_mw
    harvest = [idx for idx in range(n) if not mode[idx]]
    collected = AffineExpr()
    for idx in harvest:
        gamma = estimate.ghat[idx].conj() * to_mw
        u = problem.scalar(f"U{idx}", lower=0.0)
        _robust_quadratic(problem, covariance, gamma, radius, -u, sign=1.0, tag=f"C3f:{idx}")
        collected = collected + u
    noise_mw = config.sigma_irs2 * MW_PER_W * len(harvest)
    problem.add_ge(collected + noise_mw, required_w * MW_PER_W, tag="C3")

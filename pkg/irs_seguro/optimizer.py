from __future__ import annotations

from dataclasses import dataclass, field, replace
import math
from typing import Callable

import numpy as np

from irs_seguro.beamforming import BeamformingResult, solve_fixed_surface
from irs_seguro.conic import SolverOptions, solve
from irs_seguro.interior_point import INFEASIBLE
from irs_seguro.perf_metrics import AuditReport, DesignSolution, audit
from irs_seguro.sca_builder import (
    BuilderError,
    IterationState,
    ProblemOptions,
    build_subproblem,
    extract_state,
    merit,
    problem_census,
    selectors_for_modes,
    state_from_design,
)
from irs_seguro.sysconfig import CsiEstimate, SystemConfig

CONVERGED = "converged"
MAX_ITER = "max_iter"
RUN_INFEASIBLE = "infeasible"

RANK_ONE_TOL = 1e-3
# Fracao de potencia no AN na partida e na unica nova tentativa.
_AN_FRACTIONS = (0.5, 0.8)
_C5_MARGIN = 1e-3

LogFn = Callable[[str], None]


class OptimizerError(RuntimeError):
    pass


@dataclass
class RunRecord:
    status: str
    solution: DesignSolution | None
    merit_trace: list[float] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    solve_times: list[float] = field(default_factory=list)
    rank_ratio: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stop_reason: str = ""
    audit: AuditReport | None = None
    polish_status: str = ""
    raw_solution: DesignSolution | None = None
    raw_audit: AuditReport | None = None
    solver_iterations: int = 0
    census: dict[str, int] = field(default_factory=dict)
    block_trace: list[float] = field(default_factory=list)
    scheme: str = "proposed"
    # taxas no canal verdadeiro, quando ele e conhecido (simulacao)
    true_sum_rate: float | None = None
    true_secrecy_rate: float | None = None

    @property
    def iterations(self) -> int:
        return len(self.objective_trace)

    @property
    def feasible(self) -> bool:
        return self.status != RUN_INFEASIBLE and self.solution is not None

    @property
    def audit_feasible(self) -> bool:
        return self.feasible and self.audit is not None and self.audit.feasible

    @property
    def sum_rate(self) -> float:
        """Soma das taxas no pior caso auditado; zero quando a rodada falha."""
        if not self.audit_feasible:
            return 0.0
        return max(self.audit.worst_sum_rate, 0.0)

    @property
    def secrecy_rate(self) -> float:
        if not self.audit_feasible:
            return 0.0
        return max(self.audit.worst_secrecy_rate, 0.0)

    @property
    def solve_time_s(self) -> float:
        return float(sum(self.solve_times))

    @property
    def rank_ratio_max(self) -> float:
        return float(np.max(self.rank_ratio)) if self.rank_ratio.size else 0.0


@dataclass
class FinalDesign:
    solution: DesignSolution
    raw_solution: DesignSolution
    rank_ratio: np.ndarray
    polish: BeamformingResult | None


def rank_ratio(matrix: np.ndarray) -> float:
    eigs = np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T))
    top = float(eigs[-1])
    if top <= 0.0:
        return 0.0
    return max(float(eigs[-2]), 0.0) / top if eigs.size > 1 else 0.0


def extract_rank_one(matrix: np.ndarray) -> np.ndarray:
    """w = sqrt(lambda_1) u_1; sem posto um, reescala para manter Tr(W)."""
    herm = 0.5 * (matrix + matrix.conj().T)
    vals, vecs = np.linalg.eigh(herm)
    top = max(float(vals[-1]), 0.0)
    w = math.sqrt(top) * vecs[:, -1]
    if rank_ratio(herm) > RANK_ONE_TOL and top > 0.0:
        w = w * math.sqrt(max(float(np.trace(herm).real), 0.0) / top)
    return w


def round_surface(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax por elemento; empate favorece a colheita (linha 0)."""
    s = np.asarray(s, dtype=float)
    choice = np.argmax(s, axis=0)
    mode = (choice > 0).astype(int)
    theta = np.where(choice > 0, choice - 1, 0).astype(int)
    return mode, theta


def mrt_directions(estimate: CsiEstimate) -> np.ndarray:
    out = np.zeros((estimate.k_users, estimate.m_t), dtype=complex)
    for k in range(estimate.k_users):
        h = estimate.hhat_d[k]
        norm = float(np.linalg.norm(h))
        out[k] = h / norm if norm > 0.0 else np.ones(estimate.m_t) / math.sqrt(estimate.m_t)
    return out


def _fit_secrecy(
    w_mat: np.ndarray,
    z_mat: np.ndarray,
    state: IterationState,
    config: SystemConfig,
) -> np.ndarray:
    """Reduz W_k ate a restricao robusta das Eves valer no ponto inicial."""
    capacity = 2.0**config.tau - 1.0
    scaled = w_mat.copy()
    for k in range(w_mat.shape[0]):
        factor = 1.0
        for up, lo in zip(state.psi_eve, state.psi_eve_lo):
            leak = float(np.trace(w_mat[k] @ up).real)
            budget = capacity * (config.sigma_eve2 + float(np.trace(z_mat @ lo).real))
            if leak > 0.0:
                factor = min(factor, max(budget, 0.0) * (1.0 - _C5_MARGIN) / leak)
        scaled[k] = w_mat[k] * factor
    return scaled


def initialize(
    estimate: CsiEstimate,
    config: SystemConfig,
    options: ProblemOptions | None = None,
    *,
    an_fraction: float = _AN_FRACTIONS[0],
) -> IterationState:
    """Partida MRT com todos os elementos colhendo energia (refletindo, com fases continuas)."""
    options = options or ProblemOptions.from_config(config)
    k_users, m_t, n = estimate.k_users, estimate.m_t, estimate.n_irs
    p_max = config.p_max_w
    if options.fixed_beamformers is not None:
        w_mat, z_mat = (np.asarray(m, dtype=complex) for m in options.fixed_beamformers)
    else:
        directions = (
            options.fixed_directions
            if options.fixed_directions is not None
            else mrt_directions(estimate)
        )
        share = (1.0 - an_fraction) * p_max / k_users
        w_mat = np.stack([share * np.outer(d, d.conj()) for d in directions])
        z_mat = (an_fraction * p_max / m_t) * np.eye(m_t, dtype=complex)
    if options.continuous_phases:
        s = selectors_for_modes(np.ones(n, dtype=int), np.zeros(n, dtype=int), options.phase_levels)
        v = np.ones(n + 1, dtype=complex)
    else:
        s = np.zeros((options.phase_levels + 1, n))
        s[0] = 1.0
        v = np.zeros(n + 1, dtype=complex)
        v[-1] = 1.0
    state = state_from_design(w_mat, z_mat, v, s, estimate, config)
    if options.secrecy and estimate.j_eves and options.fixed_beamformers is None:
        w_mat = _fit_secrecy(w_mat, z_mat, state, config)
        state = state_from_design(w_mat, z_mat, v, s, estimate, config)
    return state


def finalize(
    state: IterationState,
    estimate: CsiEstimate,
    config: SystemConfig,
    options: ProblemOptions | None = None,
    *,
    log: LogFn | None = None,
) -> DesignSolution:
    return finalize_detailed(state, estimate, config, options, log=log).solution


def beam_vectors(w_mat: np.ndarray, fixed_directions: np.ndarray | None) -> np.ndarray:
    if fixed_directions is not None:
        powers = [
            max(float(np.trace(w).real), 0.0) for w in w_mat
        ]
        return np.stack([math.sqrt(p) * d for p, d in zip(powers, fixed_directions)])
    return np.stack([extract_rank_one(w) for w in w_mat])


def scale_to_budget(w: np.ndarray, z_mat: np.ndarray, p_max: float) -> tuple[np.ndarray, np.ndarray]:
    total = float(np.sum(np.abs(w) ** 2) + np.trace(z_mat).real)
    if total > p_max:
        factor = p_max / total
        return w * math.sqrt(factor), z_mat * factor
    return w, z_mat


def finalize_detailed(
    state: IterationState,
    estimate: CsiEstimate,
    config: SystemConfig,
    options: ProblemOptions | None = None,
    *,
    log: LogFn | None = None,
) -> FinalDesign:
    options = options or ProblemOptions.from_config(config)
    p_max = config.p_max_w
    ratios = np.array([rank_ratio(w) for w in state.w_mat])
    mode, theta = round_surface(state.s)
    raw_w, raw_z = scale_to_budget(
        beam_vectors(state.w_mat, options.fixed_directions), state.z_mat, p_max
    )
    raw = DesignSolution(
        w=raw_w, z_cov=raw_z, mode=mode, theta=theta, phase_levels=options.phase_levels
    )
    polish = solve_fixed_surface(
        estimate,
        config,
        mode,
        theta,
        phase_levels=options.phase_levels,
        start=(state.w_mat, state.z_mat),
        fixed_directions=options.fixed_directions,
        secrecy=options.secrecy,
        energy=options.energy,
        p_irs_w=options.p_irs_w,
        log=log,
    )
    if not polish.ok:
        if log:
            log(f"polimento sem solucao ({polish.status}); mantendo projeto SCA")
        return FinalDesign(solution=raw, raw_solution=raw, rank_ratio=ratios, polish=polish)
    w, z_mat = scale_to_budget(
        beam_vectors(polish.w_mat, options.fixed_directions), polish.z_mat, p_max
    )
    solution = DesignSolution(
        w=w, z_cov=z_mat, mode=mode, theta=theta, phase_levels=options.phase_levels
    )
    return FinalDesign(solution=solution, raw_solution=raw, rank_ratio=ratios, polish=polish)


def audit_design(
    solution: DesignSolution,
    audit_estimate: CsiEstimate,
    config: SystemConfig,
    seed: int,
    *,
    check_secrecy: bool = True,
    check_energy: bool = True,
    p_irs_w: float | None = None,
) -> AuditReport:
    cfg = config
    if p_irs_w is not None and p_irs_w != config.p_irs_w:
        # A auditoria le P_IRS da configuracao; o mapa e ajustado so para b.
        cfg = replace(config, p_irs_mw={config.b_bits: p_irs_w * 1e3})
    return audit(
        solution,
        audit_estimate,
        cfg,
        config.algo.adversary_samples,
        seed=seed,
        check_secrecy=check_secrecy and audit_estimate.j_eves > 0,
        check_energy=check_energy and not config.ignore_c3,
    )


def run(
    estimate: CsiEstimate,
    config: SystemConfig,
    seed: int = 0,
    *,
    options: ProblemOptions | None = None,
    audit_estimate: CsiEstimate | None = None,
    audit_secrecy: bool | None = None,
    audit_energy: bool | None = None,
    log: LogFn | None = None,
) -> RunRecord:
    """Laco SCA completo: partida, iteracoes, arredondamento, polimento e auditoria."""
    options = options or ProblemOptions.from_config(config)
    audit_estimate = audit_estimate or estimate
    audit_secrecy = options.secrecy if audit_secrecy is None else audit_secrecy
    audit_energy = options.energy if audit_energy is None else audit_energy
    solver_opts = SolverOptions.from_algo(config.algo)
    algo = config.algo
    record = RunRecord(status=MAX_ITER, solution=None)

    state: IterationState | None = None
    for fraction in _AN_FRACTIONS:
        start = initialize(estimate, config, options, an_fraction=fraction)
        record.merit_trace = [merit(start, config, options)]
        problem, handles = build_subproblem(start, estimate, config, options)
        record.census = problem_census(problem)
        sol = solve(problem, solver_opts)
        record.solve_times.append(sol.solve_time_s)
        record.solver_iterations += sol.iterations
        if sol.usable:
            state = _advance(sol, handles, record, config, options)
            break
        if log:
            log(f"subproblema inicial sem solucao ({sol.status}) com AN {fraction:.0%}")
    if state is None:
        record.status = RUN_INFEASIBLE
        record.stop_reason = "subproblema inicial inviavel"
        return record

    if _converged(record.merit_trace, algo.convergence_tol):
        record.status = CONVERGED
    t = 1
    while record.status != CONVERGED and t < algo.t_max:
        problem, handles = build_subproblem(state, estimate, config, options)
        sol = solve(problem, solver_opts)
        record.solve_times.append(sol.solve_time_s)
        record.solver_iterations += sol.iterations
        if not sol.usable:
            record.stop_reason = f"iteracao {t}: {sol.status} ({sol.message})"
            if log:
                log(f"parando na iteracao {t}: {sol.status}")
            if sol.status == INFEASIBLE:
                # Sem solucao de projeto: a rodada entra na media com taxa zero.
                record.status = RUN_INFEASIBLE
                return record
            break
        state = _advance(sol, handles, record, config, options)
        if log:
            log(f"iteracao {t}: merito {record.merit_trace[-1]:.6f}")
        t += 1
        if _converged(record.merit_trace, algo.convergence_tol):
            record.status = CONVERGED
    if record.status != CONVERGED and not record.stop_reason:
        record.stop_reason = f"t_max={algo.t_max} atingido"

    final = finalize_detailed(state, estimate, config, options, log=log)
    record.solution = final.solution
    record.raw_solution = final.raw_solution
    record.rank_ratio = final.rank_ratio
    record.polish_status = final.polish.status if final.polish else ""
    if final.polish is not None:
        record.solve_times.extend(final.polish.solve_times)
        record.solver_iterations += final.polish.solver_iterations
    kwargs = dict(
        check_secrecy=audit_secrecy,
        check_energy=audit_energy,
        p_irs_w=options.p_irs_w,
    )
    record.audit = audit_design(final.solution, audit_estimate, config, seed, **kwargs)
    record.raw_audit = audit_design(final.raw_solution, audit_estimate, config, seed, **kwargs)
    return record


def _advance(sol, handles, record: RunRecord, config: SystemConfig, options: ProblemOptions):
    try:
        state = extract_state(sol, handles)
    except BuilderError as exc:
        raise OptimizerError(f"estado invalido apos o subproblema: {exc}") from exc
    record.objective_trace.append(float(sol.value(handles.rate_bound)))
    record.merit_trace.append(merit(state, config, options))
    return state


def _converged(trace: list[float], tol: float) -> bool:
    if len(trace) < 2:
        return False
    return abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1]))

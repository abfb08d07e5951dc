from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np

from irs_seguro.beamforming import solve_fixed_surface, surface_vector
from irs_seguro.conic import SolverOptions, solve
from irs_seguro.optimizer import (
    CONVERGED,
    MAX_ITER,
    RUN_INFEASIBLE,
    LogFn,
    RunRecord,
    audit_design,
    beam_vectors,
    mrt_directions,
    rank_ratio,
    round_surface,
    run,
    scale_to_budget,
)
from irs_seguro.perf_metrics import DesignSolution, secrecy_rate
from irs_seguro.sca_builder import (
    ProblemOptions,
    build_subproblem,
    extract_state,
    selectors_for_modes,
    state_from_design,
)
from irs_seguro.sysconfig import (
    RNG_RANDOM_PHASES,
    ChannelSet,
    CsiEstimate,
    SystemConfig,
    make_rng,
)

PROPOSED = "proposed"
UB1 = "ub1_continuous_free_irs"
UB2 = "ub2_no_eves"
B1 = "b1_no_irs_mrt"
B2 = "b2_mrt_with_irs"
B3 = "b3_non_robust"
B4 = "b4_random_phase"
B5 = "b5_no_security"
AO = "ao"

SCHEMES: tuple[str, ...] = (PROPOSED, UB1, UB2, B1, B2, B3, B4, B5, AO)
SCHEME_LABELS: dict[str, str] = {
    PROPOSED: "Proposto (SCA robusto)",
    UB1: "Limite superior 1 (fases continuas, IRS sem consumo)",
    UB2: "Limite superior 2 (sem Eves)",
    B1: "Base 1 (sem IRS, MRT)",
    B2: "Base 2 (MRT com IRS)",
    B3: "Base 3 (nao robusto)",
    B4: "Base 4 (fases aleatorias)",
    B5: "Base 5 (sem seguranca)",
    AO: "Otimizacao alternada",
}
CONTINUOUS_LEVELS = 1024


class SchemeError(ValueError):
    pass


@dataclass(frozen=True)
class SchemeSpec:
    key: str
    label: str
    run_fn: Callable[[CsiEstimate, SystemConfig, int, LogFn | None], RunRecord]


def parse_scheme(name: str) -> str:
    key = name.strip().lower()
    if key not in SCHEMES:
        raise SchemeError(f"esquema desconhecido: {name!r}; opcoes: {', '.join(SCHEMES)}")
    return key


def random_phases(config: SystemConfig, seed: int, count: int | None = None) -> np.ndarray:
    rng = make_rng(seed, RNG_RANDOM_PHASES)
    size = config.n_irs if count is None else count
    return rng.integers(0, config.phase_levels, size=size)


def _fixed_surface_record(
    estimate: CsiEstimate,
    config: SystemConfig,
    seed: int,
    mode: np.ndarray,
    theta: np.ndarray,
    *,
    fixed_directions: np.ndarray | None,
    p_irs_w: float,
    log: LogFn | None,
) -> RunRecord:
    """Esquemas sem laco SCA: so o beamforming robusto com a superficie dada."""
    result = solve_fixed_surface(
        estimate,
        config,
        mode,
        theta,
        fixed_directions=fixed_directions,
        energy=False,
        p_irs_w=p_irs_w,
        log=log,
    )
    record = RunRecord(
        status=CONVERGED if result.ok else RUN_INFEASIBLE,
        solution=None,
        objective_trace=list(result.objective_trace),
        merit_trace=list(result.objective_trace),
        solve_times=list(result.solve_times),
        solver_iterations=result.solver_iterations,
        census=result.census,
        polish_status=result.status,
        stop_reason=result.message,
    )
    if not result.ok:
        return record
    w, z_mat = scale_to_budget(
        beam_vectors(result.w_mat, fixed_directions), result.z_mat, config.p_max_w
    )
    record.solution = DesignSolution(
        w=w, z_cov=z_mat, mode=np.asarray(mode), theta=np.asarray(theta),
        phase_levels=config.phase_levels,
    )
    record.rank_ratio = np.array([rank_ratio(w_k) for w_k in result.w_mat])
    record.audit = audit_design(
        record.solution, estimate, config, seed, check_energy=False, p_irs_w=p_irs_w
    )
    return record


def _run_proposed(estimate, config, seed, log):
    return run(estimate, config, seed, log=log)


def _run_ub1(estimate, config, seed, log):
    options = ProblemOptions.from_config(
        config,
        phase_levels=CONTINUOUS_LEVELS,
        p_irs_w=0.0,
        energy=False,
        continuous_phases=True,
    )
    return run(estimate, config, seed, options=options, log=log)


def _run_ub2(estimate, config, seed, log):
    return run(estimate.without_eves(), config, seed, log=log)


def _run_b1(estimate, config, seed, log):
    n = estimate.n_irs
    return _fixed_surface_record(
        estimate,
        config,
        seed,
        np.zeros(n, dtype=int),
        np.zeros(n, dtype=int),
        fixed_directions=mrt_directions(estimate),
        p_irs_w=0.0,
        log=log,
    )


def _run_b2(estimate, config, seed, log):
    options = ProblemOptions.from_config(config, fixed_directions=mrt_directions(estimate))
    return run(estimate, config, seed, options=options, log=log)


def _run_b3(estimate, config, seed, log):
    return run(estimate.zeroed(), config, seed, audit_estimate=estimate, log=log)


def _run_b4(estimate, config, seed, log):
    n = estimate.n_irs
    return _fixed_surface_record(
        estimate,
        config,
        seed,
        np.ones(n, dtype=int),
        random_phases(config, seed, n),
        fixed_directions=None,
        p_irs_w=0.0,
        log=log,
    )


def _run_b5(estimate, config, seed, log):
    options = ProblemOptions.from_config(config, secrecy=False)
    return run(estimate, config, seed, options=options, audit_secrecy=True, log=log)


def run_alternating(
    estimate: CsiEstimate,
    config: SystemConfig,
    seed: int = 0,
    *,
    log: LogFn | None = None,
) -> RunRecord:
    """Alterna o bloco (W, Z) com a superficie fixa e o bloco da superficie com (W, Z) fixos."""
    algo = config.algo
    base = ProblemOptions.from_config(config)
    levels = base.phase_levels
    n = estimate.n_irs
    mode = np.zeros(n, dtype=int)
    theta = np.zeros(n, dtype=int)
    solver_opts = SolverOptions.from_algo(algo)
    record = RunRecord(status=MAX_ITER, solution=None, scheme=AO)
    beams = None
    previous = -math.inf
    for block in range(algo.ao_max_blocks):
        result = solve_fixed_surface(
            estimate,
            config,
            mode,
            theta,
            start=beams,
            secrecy=base.secrecy,
            energy=base.energy,
            log=log,
        )
        record.solve_times.extend(result.solve_times)
        record.solver_iterations += result.solver_iterations
        if not result.ok:
            if beams is None:
                record.status = RUN_INFEASIBLE
                record.stop_reason = f"bloco de beamforming inicial: {result.status}"
                return record
            record.stop_reason = f"bloco {block}: beamforming {result.status}"
            break
        beams = (result.w_mat, result.z_mat)
        value = result.objective_trace[-1]
        record.block_trace.append(value)
        record.objective_trace.append(value)
        record.merit_trace.append(value)
        if log:
            log(f"AO bloco {block}: objetivo {value:.6f}")
        if abs(value - previous) <= algo.convergence_tol * max(1.0, abs(value)):
            record.status = CONVERGED
            break
        previous = value

        options = ProblemOptions.from_config(config, fixed_beamformers=beams)
        state = state_from_design(
            beams[0],
            beams[1],
            surface_vector(mode, theta, levels),
            selectors_for_modes(mode, theta, levels),
            estimate,
            config,
        )
        for _ in range(algo.polish_iterations):
            problem, handles = build_subproblem(state, estimate, config, options)
            sol = solve(problem, solver_opts)
            record.solve_times.append(sol.solve_time_s)
            record.solver_iterations += sol.iterations
            if not sol.usable:
                if log:
                    log(f"AO bloco {block}: superficie {sol.status}")
                break
            state = extract_state(sol, handles)
        mode, theta = round_surface(state.s)

    if beams is None:
        record.status = RUN_INFEASIBLE
        return record
    w, z_mat = scale_to_budget(beam_vectors(beams[0], None), beams[1], config.p_max_w)
    record.solution = DesignSolution(
        w=w, z_cov=z_mat, mode=mode, theta=theta, phase_levels=levels
    )
    record.rank_ratio = np.array([rank_ratio(w_k) for w_k in beams[0]])
    record.audit = audit_design(
        record.solution,
        estimate,
        config,
        seed,
        check_secrecy=base.secrecy,
        check_energy=base.energy,
    )
    return record


def _run_ao(estimate, config, seed, log):
    return run_alternating(estimate, config, seed, log=log)


_RUNNERS = {
    PROPOSED: _run_proposed,
    UB1: _run_ub1,
    UB2: _run_ub2,
    B1: _run_b1,
    B2: _run_b2,
    B3: _run_b3,
    B4: _run_b4,
    B5: _run_b5,
    AO: _run_ao,
}

SCHEME_SPECS: dict[str, SchemeSpec] = {
    key: SchemeSpec(key=key, label=SCHEME_LABELS[key], run_fn=_RUNNERS[key]) for key in SCHEMES
}


def run_scheme(
    scheme: str,
    estimate: CsiEstimate,
    truth: ChannelSet | None,
    config: SystemConfig,
    seed: int = 0,
    *,
    log: LogFn | None = None,
) -> RunRecord:
    key = parse_scheme(scheme)
    record = SCHEME_SPECS[key].run_fn(estimate, config, seed, log)
    record.scheme = key
    if truth is not None and record.solution is not None:
        record.true_sum_rate, record.true_secrecy_rate = secrecy_rate(
            truth, record.solution, config
        )
    return record

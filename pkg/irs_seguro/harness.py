from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
import math
import os
import time
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from irs_seguro.baselines import parse_scheme, run_scheme
from irs_seguro.checks import Check, collect_failures
from irs_seguro.conic import (
    AffineMatrix,
    ConicProblem,
    embed_hermitian,
    gsproc_lmi,
    solve,
    sproc_lmi,
)
from irs_seguro.energy import harvested_power
from irs_seguro.optimizer import RunRecord
from irs_seguro.parsing import ParseNumberError, parse_number_list
from irs_seguro.perf_metrics import (
    DesignSolution,
    ball_samples,
    cascaded_effective_channel,
    effective_channel,
)
from irs_seguro.sca_builder import build_f_matrices, rank_gap
from irs_seguro.sysconfig import (
    AlgoParams,
    ConfigError,
    SystemConfig,
    config_with,
    make_instance,
    make_rng,
)

LogFn = Callable[[str], None]

MAX_WORKERS_ENV = "IRS_SEGURO_MAX_WORKERS"
CONFIDENCE = 0.95
DEFAULT_TRIALS = 20
# sementes tentadas pela suite sca antes de reprovar por inviabilidade
SCA_SELFTEST_SEEDS = 3

# variavel de varredura -> (chave da configuracao, conversao do valor)
SWEEP_VARS: dict[str, tuple[str, Callable[[float], float]]] = {
    "d": ("geometry.d", float),
    "n_irs": ("n_irs", lambda value: int(round(value))),
    "tau": ("tau", float),
    "kappa2": ("kappa", lambda value: math.sqrt(value)),
    "p_max": ("p_max_dbm", float),
}

CSV_COLUMNS: tuple[str, ...] = (
    "trial",
    "seed",
    "scheme",
    "sweep_var",
    "sweep_value",
    "sum_rate_bps_hz",
    "secrecy_rate_bps_hz",
    "feasible",
    "audit_feasible",
    "iterations",
    "solve_time_s",
    "n_reflect",
    "harvested_mw",
    "rank_ratio_max",
)
TRACE_COLUMNS: tuple[str, ...] = (
    "trial",
    "seed",
    "scheme",
    "iteration",
    "objective",
    "merit",
    "solve_time_s",
    "status",
)


class AggregateError(ValueError):
    pass


class ExperimentError(ValueError):
    pass


def sweep_config(config: SystemConfig, sweep_var: str, value: float) -> SystemConfig:
    if sweep_var not in SWEEP_VARS:
        raise ExperimentError(
            f"variavel de varredura desconhecida: {sweep_var!r}; opcoes: {', '.join(SWEEP_VARS)}"
        )
    key, convert = SWEEP_VARS[sweep_var]
    if sweep_var == "kappa2" and value < 0.0:
        raise ExperimentError("kappa2 deve ser >= 0")
    updated = config_with(config, key, convert(value))
    updated.validate()
    return updated


def parse_sweep(text: str) -> tuple[str, tuple[float, ...]]:
    """Le `VAR=v1,v2,...`; cada valor usa ponto decimal."""
    var, sep, raw_values = text.partition("=")
    var = var.strip().lower()
    if not sep or not raw_values.strip():
        raise ExperimentError(f"varredura invalida: {text!r}; esperado VAR=v1,v2,...")
    if var not in SWEEP_VARS:
        raise ExperimentError(f"variavel de varredura desconhecida: {var!r}")
    try:
        values = tuple(parse_number_list(raw_values))
    except ParseNumberError as exc:
        raise ExperimentError(f"valores invalidos em {text!r}: {exc}") from exc
    if not values:
        raise ExperimentError(f"varredura sem valores: {text!r}")
    return var, values


@dataclass(frozen=True)
class Experiment:
    base_config: SystemConfig = field(default_factory=SystemConfig)
    schemes: tuple[str, ...] = ("proposed",)
    trials: int = DEFAULT_TRIALS
    seed0: int = 0
    sweep_var: str | None = None
    sweep_values: tuple[float, ...] = ()

    def validate(self) -> None:
        if self.trials < 1:
            raise ExperimentError("trials deve ser >= 1")
        if not self.schemes:
            raise ExperimentError("nenhum esquema selecionado")
        for scheme in self.schemes:
            parse_scheme(scheme)
        if self.sweep_var is not None and not self.sweep_values:
            raise ExperimentError(f"varredura de {self.sweep_var} sem valores")
        for _, config in self.points():
            config.validate()

    def points(self) -> list[tuple[float | None, SystemConfig]]:
        if self.sweep_var is None:
            return [(None, self.base_config)]
        return [
            (value, sweep_config(self.base_config, self.sweep_var, value))
            for value in self.sweep_values
        ]


@dataclass(frozen=True)
class TrialSpec:
    trial: int
    seed: int
    scheme: str
    sweep_var: str
    sweep_value: float | None
    config: SystemConfig

    @property
    def label(self) -> str:
        point = f" {self.sweep_var}={self.sweep_value:g}" if self.sweep_value is not None else ""
        return f"{self.scheme}{point} trial {self.trial}"


@dataclass
class TrialOutcome:
    spec: TrialSpec
    record: RunRecord | None
    error: str | None
    elapsed_s: float


@dataclass(frozen=True)
class TrialRow:
    trial: int
    seed: int
    scheme: str
    sweep_var: str
    sweep_value: float | None
    sum_rate_bps_hz: float
    secrecy_rate_bps_hz: float
    feasible: bool
    audit_feasible: bool
    iterations: int
    solve_time_s: float
    n_reflect: int
    harvested_mw: float
    rank_ratio_max: float

    @property
    def sort_key(self) -> tuple:
        value = -math.inf if self.sweep_value is None else self.sweep_value
        return (self.scheme, value, self.trial)


@dataclass(frozen=True)
class AggregateRow:
    scheme: str
    sweep_var: str
    sweep_value: float | None
    trials: int
    failures: int
    mean_sum_rate: float
    ci_sum_rate: float
    mean_secrecy_rate: float
    ci_secrecy_rate: float


def trial_specs(experiment: Experiment) -> list[TrialSpec]:
    """Uma tarefa por (ponto, esquema, trial); semente = seed0 + trial."""
    specs: list[TrialSpec] = []
    sweep_var = experiment.sweep_var or ""
    for value, config in experiment.points():
        for scheme in experiment.schemes:
            for trial in range(experiment.trials):
                specs.append(
                    TrialSpec(
                        trial=trial,
                        seed=experiment.seed0 + trial,
                        scheme=parse_scheme(scheme),
                        sweep_var=sweep_var,
                        sweep_value=value,
                        config=config,
                    )
                )
    return specs


def _error_detail(label: str, exc: Exception) -> str:
    message = " ".join(str(exc).split())
    if message:
        return f"{label}: {exc.__class__.__name__} {message}"
    return f"{label}: {exc.__class__.__name__}"


def run_trial(spec: TrialSpec, *, log: LogFn | None = None) -> TrialOutcome:
    start = time.monotonic()
    try:
        instance = make_instance(spec.config, spec.seed)
        record = run_scheme(spec.scheme, instance.estimate, instance.truth, spec.config, spec.seed)
    except Exception as exc:
        detail = _error_detail(spec.label, exc)
        if log:
            log(f"Falha em {spec.label}; trial penalizado. Detalhe: {detail}")
        return TrialOutcome(spec, None, detail, time.monotonic() - start)
    elapsed = time.monotonic() - start
    if log:
        log(f"{spec.label}: {record.status}, soma {record.sum_rate:.4f} bps/Hz em {elapsed:.1f}s")
    return TrialOutcome(spec, record, None, elapsed)


def resolve_workers(requested: int | None, n_tasks: int, *, log: LogFn | None = None) -> int:
    max_workers = requested if requested is not None else max(1, os.cpu_count() or 1)
    env_max_workers = os.environ.get(MAX_WORKERS_ENV)
    if requested is None and env_max_workers:
        try:
            max_workers = int(env_max_workers)
        except ValueError:
            if log:
                log(f"Aviso: {MAX_WORKERS_ENV} invalido ({env_max_workers!r}). Usando {max_workers}.")
    return max(1, min(max_workers, n_tasks))


def run_experiment(
    experiment: Experiment,
    *,
    threads: int | None = None,
    log: LogFn | None = None,
) -> list[TrialOutcome]:
    experiment.validate()
    specs = trial_specs(experiment)
    max_workers = resolve_workers(threads, len(specs), log=log)
    outcomes: list[TrialOutcome] = []
    if max_workers <= 1 or len(specs) == 1:
        if log:
            log(f"Simulacao: {len(specs)} trial(s) em modo sequencial.")
        outcomes = [run_trial(spec, log=log) for spec in specs]
    else:
        if log:
            log(f"Simulacao: {len(specs)} trial(s) em paralelo ({max_workers} workers).")
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = {executor.submit(run_trial, spec, log=log): spec for spec in specs}
            for future in as_completed(futures):
                spec = futures[future]
                try:
                    outcomes.append(future.result())
                except Exception as exc:
                    outcomes.append(TrialOutcome(spec, None, _error_detail(spec.label, exc), 0.0))
    outcomes.sort(key=lambda item: trial_row(item).sort_key)
    return outcomes


def trial_row(outcome: TrialOutcome) -> TrialRow:
    """Linha do CSV; trials sem registro entram com taxa zero (penalidade)."""
    spec, record = outcome.spec, outcome.record
    solution = record.solution if record is not None else None
    audit = record.audit if record is not None else None
    return TrialRow(
        trial=spec.trial,
        seed=spec.seed,
        scheme=spec.scheme,
        sweep_var=spec.sweep_var,
        sweep_value=spec.sweep_value,
        sum_rate_bps_hz=record.sum_rate if record else 0.0,
        secrecy_rate_bps_hz=record.secrecy_rate if record else 0.0,
        feasible=bool(record and record.feasible),
        audit_feasible=bool(record and record.audit_feasible),
        iterations=record.iterations if record else 0,
        solve_time_s=record.solve_time_s if record else outcome.elapsed_s,
        n_reflect=solution.n_reflect if solution is not None else 0,
        harvested_mw=audit.harvested_w * 1e3 if audit is not None else 0.0,
        rank_ratio_max=record.rank_ratio_max if record else 0.0,
    )


def trace_rows(outcome: TrialOutcome) -> list[dict[str, object]]:
    record = outcome.record
    if record is None:
        return []
    spec = outcome.spec
    # merit_trace tem o ponto inicial na posicao 0
    offset = len(record.merit_trace) - len(record.objective_trace)
    rows: list[dict[str, object]] = []
    for index, objective in enumerate(record.objective_trace):
        merit_index = index + offset
        rows.append(
            {
                "trial": spec.trial,
                "seed": spec.seed,
                "scheme": spec.scheme,
                "iteration": index + 1,
                "objective": objective,
                "merit": record.merit_trace[merit_index] if merit_index < len(record.merit_trace) else "",
                "solve_time_s": record.solve_times[index] if index < len(record.solve_times) else "",
                "status": record.status,
            }
        )
    return rows


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0
    quantile = float(norm.ppf(0.5 + CONFIDENCE / 2.0))
    return mean, quantile * float(values.std(ddof=1)) / math.sqrt(values.size)


def aggregate(rows: Sequence[TrialRow]) -> list[AggregateRow]:
    """Media e intervalo de 95% por (esquema, ponto), com os zeros das falhas incluidos."""
    if not rows:
        raise AggregateError("nenhuma linha para agregar")
    groups: dict[tuple, list[TrialRow]] = {}
    for row in sorted(rows, key=lambda item: item.sort_key):
        groups.setdefault((row.scheme, row.sweep_var, row.sweep_value), []).append(row)
    result: list[AggregateRow] = []
    for (scheme, sweep_var, sweep_value), group in groups.items():
        sums = np.array([row.sum_rate_bps_hz for row in group], dtype=float)
        secrecy = np.array([row.secrecy_rate_bps_hz for row in group], dtype=float)
        mean_sum, ci_sum = _mean_ci(sums)
        mean_sec, ci_sec = _mean_ci(secrecy)
        result.append(
            AggregateRow(
                scheme=scheme,
                sweep_var=sweep_var,
                sweep_value=sweep_value,
                trials=len(group),
                failures=sum(1 for row in group if not row.audit_feasible),
                mean_sum_rate=mean_sum,
                ci_sum_rate=ci_sum,
                mean_secrecy_rate=mean_sec,
                ci_secrecy_rate=ci_sec,
            )
        )
    return result


def scale_note(experiment: Experiment) -> str:
    config = experiment.base_config
    n_irs = str(config.n_irs)
    if experiment.sweep_var == "n_irs":
        n_irs = "/".join(str(int(round(value))) for value in experiment.sweep_values)
    return (
        f"escala (M_t={config.m_t}, N={n_irs}, K={config.k_users}, "
        f"J={config.j_eves}, B={config.phase_levels})"
    )


def experiment_metadata(experiment: Experiment) -> list[str]:
    lines = [
        f"seed0 = {experiment.seed0}",
        f"trials = {experiment.trials}",
        f"schemes = {','.join(experiment.schemes)}",
        scale_note(experiment),
    ]
    if experiment.sweep_var is not None:
        values = ",".join(f"{value:g}" for value in experiment.sweep_values)
        lines.append(f"sweep = {experiment.sweep_var}={values}")
    return lines


# Suites do selftest: cada uma devolve a lista de falhas (vazia = OK).

SELFTEST_CONFIG = replace(
    SystemConfig(m_t=2, n_irs=2, k_users=1, j_eves=1),
    algo=AlgoParams(t_max=5, adversary_samples=200, polish_iterations=2, ao_max_blocks=2),
)


def _check(name: str, fn: Callable[[], tuple[bool, str]]) -> Check:
    return Check(name, lambda _subject: fn())


def _energy_checks(config: SystemConfig, rng: np.random.Generator, samples: int) -> list[Check]:
    eh = config.eh

    def reference_point() -> tuple[bool, str]:
        value_mw = harvested_power(0.0022, eh) * 1e3
        return abs(value_mw - 38.53) <= 0.02, f"P(0.0022 W) = {value_mw:.4f} mW"

    def monotone() -> tuple[bool, str]:
        grid = np.linspace(0.0, 0.05, 1000)
        values = np.array([harvested_power(p, eh) for p in grid])
        ok = values[0] == 0.0 and bool(np.all(np.diff(values) >= -1e-15))
        return ok and float(values.max()) <= eh.m_p + 1e-12, f"max {values.max():.6g} W"

    return [_check("eh_referencia", reference_point), _check("eh_monotona", monotone)]


def _embedding_checks(config: SystemConfig, rng: np.random.Generator, samples: int) -> list[Check]:
    def doubling() -> tuple[bool, str]:
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 6))
            raw = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            herm = 0.5 * (raw + raw.conj().T)
            expected = np.repeat(np.linalg.eigvalsh(herm), 2)
            got = np.linalg.eigvalsh(embed_hermitian(herm))
            worst = max(worst, float(np.max(np.abs(np.sort(expected) - got))))
        return worst <= 1e-10, f"erro maximo {worst:.2e}"

    def identity() -> tuple[bool, str]:
        return bool(np.array_equal(embed_hermitian(np.eye(3)), np.eye(6))), "embed(I_3) != I_6"

    return [_check("embedding_autovalores", doubling), _check("embedding_identidade", identity)]


def _solver_checks(config: SystemConfig, rng: np.random.Generator, samples: int) -> list[Check]:
    def eigen_bound() -> tuple[bool, str]:
        problem = ConicProblem("autovalor")
        t = problem.scalar("t")
        problem.add_lmi(AffineMatrix.lift(np.eye(2)) - t.times(np.eye(2)), tag="I-tI")
        problem.maximize(t)
        sol = solve(problem)
        value = sol.value(t)
        return sol.usable and abs(value - 1.0) <= 1e-6, f"{sol.status}, t = {value:.8f}"

    def principal_vector() -> tuple[bool, str]:
        problem = ConicProblem("traco")
        x = problem.hermitian("X", 2, psd=True, real=True)
        problem.add_eq(x.trace(), 1.0, tag="Tr X")
        objective = x.inner(np.diag([3.0, 1.0]))
        problem.maximize(objective)
        sol = solve(problem)
        value = sol.value(objective)
        return sol.usable and abs(value - 3.0) <= 1e-6, f"{sol.status}, objetivo = {value:.8f}"

    return [_check("solver_autovalor", eigen_bound), _check("solver_traco", principal_vector)]


def _sprocedure_checks(config: SystemConfig, rng: np.random.Generator, samples: int) -> list[Check]:
    def vector_ball() -> tuple[bool, str]:
        n = 3
        center = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        radius = 0.3 * float(np.linalg.norm(center))
        problem = ConicProblem("bola")
        t = problem.scalar("t")
        c2 = AffineMatrix.lift(float(np.vdot(center, center).real)) - t.times(np.ones((1, 1)))
        sproc_lmi(
            problem,
            -np.eye(n),
            np.zeros((n, 1)),
            np.array([[radius**2]]),
            np.eye(n),
            center.reshape(-1, 1),
            c2,
            tag="bola",
        )
        problem.maximize(t)
        sol = solve(problem)
        if not sol.usable:
            return False, sol.status
        bound = sol.value(t)
        errors = ball_samples(rng, radius, (n,), samples)
        sampled = float(np.min(np.sum(np.abs(center[None] + errors) ** 2, axis=1)))
        return bound <= sampled + 1e-4, f"certificado {bound:.6g} > minimo amostrado {sampled:.6g}"

    def matrix_ball() -> tuple[bool, str]:
        p, q = 2, 3
        center = rng.standard_normal((p, q)) + 1j * rng.standard_normal((p, q))
        radius = 0.2 * float(np.linalg.norm(center))
        problem = ConicProblem("bola_matricial")
        t = problem.scalar("t")
        e_mat = AffineMatrix.lift(center @ center.conj().T) - t.times(np.eye(p))
        gsproc_lmi(problem, np.eye(q), center.conj().T, e_mat, radius=radius, tag="frobenius")
        problem.maximize(t)
        sol = solve(problem)
        if not sol.usable:
            return False, sol.status
        bound = sol.value(t)
        errors = ball_samples(rng, radius, (p, q), samples)
        perturbed = center[None] + errors
        spectra = np.linalg.eigvalsh(perturbed @ np.conj(np.swapaxes(perturbed, 1, 2)))
        sampled = float(spectra[:, 0].min())
        return bound <= sampled + 1e-4, f"certificado {bound:.6g} > minimo amostrado {sampled:.6g}"

    return [_check("sproc_vetor", vector_ball), _check("sproc_matriz", matrix_ball)]


def _rank_checks(config: SystemConfig, rng: np.random.Generator, samples: int) -> list[Check]:
    def equivalence() -> tuple[bool, str]:
        n = config.n_irs + 2
        vec = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        rank_one = np.outer(vec, vec.conj())
        other = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        rank_two = rank_one + np.outer(other, other.conj())
        gap_one, gap_two = rank_gap(rank_one), rank_gap(rank_two)
        ok = abs(gap_one) <= 1e-9 * float(np.trace(rank_one).real) and gap_two > 1e-6
        return ok, f"gap posto 1 = {gap_one:.3g}, posto 2 = {gap_two:.3g}"

    return [_check("posto_um", equivalence)]


def _channel_checks(config: SystemConfig, rng: np.random.Generator, samples: int) -> list[Check]:
    instance = make_instance(config, int(rng.integers(0, 2**31)))
    levels = config.phase_levels
    sol = DesignSolution(
        w=np.zeros((config.k_users, config.m_t), dtype=complex),
        z_cov=np.zeros((config.m_t, config.m_t), dtype=complex),
        mode=rng.integers(0, 2, size=config.n_irs),
        theta=rng.integers(0, levels, size=config.n_irs),
        phase_levels=levels,
    )

    def cascaded() -> tuple[bool, str]:
        truth = instance.truth
        worst = 0.0
        for k in range(config.k_users):
            direct = effective_channel(truth.h_d[k], truth.h_r[k], truth.g, sol)
            via_cascade = cascaded_effective_channel(truth.h_d[k], truth.g_cu[k], sol)
            worst = max(worst, float(np.max(np.abs(direct - via_cascade))))
        return worst <= 1e-9 * float(np.max(np.abs(direct))), f"erro {worst:.3g}"

    def lifted() -> tuple[bool, str]:
        estimate = instance.estimate
        f_users, _ = build_f_matrices(estimate)
        worst = 0.0
        for k, f in enumerate(f_users):
            row = cascaded_effective_channel(estimate.hhat_d[k], estimate.ghat_cu[k], sol)
            worst = max(worst, float(np.max(np.abs(row - (f @ sol.v).conj()))))
        return worst <= 1e-9 * float(np.max(np.abs(row))), f"erro {worst:.3g}"

    return [_check("canal_cascateado", cascaded), _check("canal_matriz_f", lifted)]


def _sca_checks(config: SystemConfig, rng: np.random.Generator, samples: int) -> list[Check]:
    def monotone() -> tuple[bool, str]:
        tried = []
        for seed in rng.integers(0, 1000, size=SCA_SELFTEST_SEEDS):
            instance = make_instance(config, int(seed))
            record = run_scheme("proposed", instance.estimate, instance.truth, config, int(seed))
            tried.append(f"{int(seed)}:{record.status}")
            if record.feasible:
                break
        else:
            return False, f"nenhuma instancia viavel ({', '.join(tried)}); monotonia nao verificada"
        trace = np.asarray(record.merit_trace)
        drop = float(np.max(trace[:-1] - trace[1:])) if trace.size > 1 else 0.0
        return drop <= 1e-6 * max(1.0, float(np.max(np.abs(trace)))), f"queda de {drop:.3g}"

    return [_check("sca_monotonia", monotone)]


SELFTEST_SUITES: dict[str, Callable[[SystemConfig, np.random.Generator, int], list[Check]]] = {
    "energia": _energy_checks,
    "embedding": _embedding_checks,
    "solver": _solver_checks,
    "s_procedure": _sprocedure_checks,
    "posto": _rank_checks,
    "canal": _channel_checks,
    "sca": _sca_checks,
}


def run_selftest(
    suites: Sequence[str] | None = None,
    *,
    config: SystemConfig | None = None,
    seed: int = 0,
    samples: int = 10_000,
    log: LogFn | None = None,
) -> dict[str, list[str]]:
    config = config or SELFTEST_CONFIG
    names = list(suites) if suites else list(SELFTEST_SUITES)
    unknown = [name for name in names if name not in SELFTEST_SUITES]
    if unknown:
        raise ConfigError(f"suites desconhecidas: {', '.join(unknown)}")
    results: dict[str, list[str]] = {}
    for index, name in enumerate(names):
        rng = make_rng(seed, 100 + index)
        checks = SELFTEST_SUITES[name](config, rng, samples)
        failures = collect_failures(config, checks)
        results[name] = failures
        if log:
            status = "OK" if not failures else f"{len(failures)} falha(s)"
            log(f"Selftest {name}: {status}")
            for failure in failures:
                log(f"- {failure}")
    return results


